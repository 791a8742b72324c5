//! Shear-wave acquisition simulator.
//!
//! Solves the 2D scalar wave equation `u_tt = c_s(x)^2 (u_zz + u_xx)` with
//! second-order centered differences on the imaging grid. The probe surface
//! (depth 0) is a free surface; the other three sides are padded with an
//! exponential damping sponge. The push is an initial displacement: a lateral
//! Gaussian times a depth window reaching the push depth. Frames are sampled
//! from the nearest solver step at the imaging frame rate.

mod acquire;
mod iq;

pub use acquire::{acquire, push_centers, AcquisitionPlan};
pub use iq::{loupas_displacement, synthesize_iq, IqConfig, IqSequence, LoupasOutput};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DisplacementSequence, ElasticityMap, DEFAULT_FRAMES, DEFAULT_FRAME_RATE};
use crate::geom::{GridGeom, PushDescriptor};
use crate::phantom::{young_to_shear_speed, Material, DEFAULT_DENSITY, DEFAULT_POISSON};

pub const DEFAULT_PUSH_AMPLITUDE: f64 = 10e-6;

fn default_cfl() -> f64 {
    0.4
}
fn default_absorbing_width() -> usize {
    40
}
fn default_absorbing_strength() -> f64 {
    20.0
}
fn default_amplitude() -> f64 {
    DEFAULT_PUSH_AMPLITUDE
}
fn default_noise() -> f64 {
    0.05 * DEFAULT_PUSH_AMPLITUDE
}
fn default_frames() -> usize {
    DEFAULT_FRAMES
}
fn default_frame_rate() -> f64 {
    DEFAULT_FRAME_RATE
}
fn default_density() -> f64 {
    DEFAULT_DENSITY
}
fn default_poisson() -> f64 {
    DEFAULT_POISSON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub geom: GridGeom,
    /// Solver step as a fraction of `min_pitch / max c_s`.
    #[serde(default = "default_cfl")]
    pub cfl_factor: f64,
    /// Sponge thickness in pixels (bottom, left and right sides).
    #[serde(default = "default_absorbing_width")]
    pub absorbing_width: usize,
    /// Dimensionless damping strength; the peak damping rate is
    /// `strength * c_max / sponge_thickness`.
    #[serde(default = "default_absorbing_strength")]
    pub absorbing_strength: f64,
    pub push: PushDescriptor,
    /// Peak initial displacement (m).
    #[serde(default = "default_amplitude")]
    pub push_amplitude: f64,
    /// Std of additive Gaussian displacement noise (m).
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
}

impl SimConfig {
    /// Default acquisition on `geom` with a push centered laterally.
    pub fn new(geom: GridGeom) -> Self {
        Self {
            geom,
            cfl_factor: default_cfl(),
            absorbing_width: default_absorbing_width(),
            absorbing_strength: default_absorbing_strength(),
            push: PushDescriptor::centered(&geom),
            push_amplitude: default_amplitude(),
            noise_std: default_noise(),
            seed: 0,
            frames: DEFAULT_FRAMES,
            frame_rate: DEFAULT_FRAME_RATE,
            density: DEFAULT_DENSITY,
            poisson: DEFAULT_POISSON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        self.push.validate(&self.geom)?;
        if !(self.cfl_factor > 0.0 && self.cfl_factor < std::f64::consts::FRAC_1_SQRT_2) {
            return Err(Error::CflViolation(format!(
                "cfl_factor {} must lie in (0, 1/sqrt(2))",
                self.cfl_factor
            )));
        }
        if self.absorbing_width < 10 {
            return Err(Error::invalid("absorbing_width", "must be >= 10 px"));
        }
        if !(self.absorbing_strength >= 0.0 && self.absorbing_strength.is_finite()) {
            return Err(Error::invalid("absorbing_strength", "must be finite and >= 0"));
        }
        if !(self.push_amplitude.is_finite()) {
            return Err(Error::invalid("push_amplitude", "must be finite"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", "must be finite and >= 0"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames", "must be >= 1"));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::invalid("frame_rate", "must be finite and > 0"));
        }
        Material {
            young_modulus: 1.0,
            density: self.density,
            poisson: self.poisson,
        }
        .validate()
    }

    /// Time of recorded frame `k` after the push.
    pub fn frame_time(&self, k: usize) -> f64 {
        self.push.start_delay + k as f64 / self.frame_rate
    }
}

/// Per-pixel shear speed of a map under the config's density and Poisson ratio.
pub fn shear_speed_field(map: &ElasticityMap, cfg: &SimConfig) -> Result<Vec<f64>> {
    map.data()
        .iter()
        .map(|&e| {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::invalid("map", "elasticity must be present and > 0 everywhere"));
            }
            Ok(young_to_shear_speed(&Material {
                young_modulus: e as f64,
                density: cfg.density,
                poisson: cfg.poisson,
            }))
        })
        .collect()
}

/// Lateral Gaussian whose 1/e^2 half-width equals the push half-width (the
/// radiation force follows beam intensity), times a depth window with a 1 mm raised-cosine edge at the
/// push depth.
pub(crate) fn push_profile(geom: &GridGeom, push: &PushDescriptor) -> (Vec<f64>, Vec<f64>) {
    let sigma = push.element_halfwidth_px as f64 / 2.0;
    let lateral = (0..geom.lateral_px)
        .map(|l| {
            let x = l as f64 - push.lateral_center_px as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let edge = 0.5e-3;
    let depth = (0..geom.depth_px)
        .map(|d| {
            let z = d as f64 * geom.depth_pitch();
            if z <= push.depth_extent - edge {
                1.0
            } else if z >= push.depth_extent + edge {
                0.0
            } else {
                let s = (z - (push.depth_extent - edge)) / (2.0 * edge);
                0.5 * (1.0 + (std::f64::consts::PI * s).cos())
            }
        })
        .collect();
    (lateral, depth)
}

struct Solver {
    nz: usize,
    nx: usize,
    /// Padding on the left/right/bottom (cells).
    pad: usize,
    inv_dz2: f64,
    inv_dx2: f64,
    /// c^2 dt^2 per cell.
    coef: Vec<f64>,
    /// 1 / (1 + eta dt / 2)
    damp_a: Vec<f64>,
    /// 1 - eta dt / 2
    damp_b: Vec<f64>,
}

impl Solver {
    fn new(cfg: &SimConfig, speed: &[f64], dt: f64) -> Self {
        let g = &cfg.geom;
        let pad = cfg.absorbing_width;
        let nz = g.depth_px + pad;
        let nx = g.lateral_px + 2 * pad;
        let (dz, dx) = (g.depth_pitch(), g.lateral_pitch());
        let c_max = speed.iter().cloned().fold(0.0, f64::max);
        let eta_max = cfg.absorbing_strength * c_max / (pad as f64 * dz.min(dx));
        let mut coef = vec![0.0; nz * nx];
        let mut damp_a = vec![1.0; nz * nx];
        let mut damp_b = vec![1.0; nz * nx];
        for z in 0..nz {
            let zi = z.min(g.depth_px - 1);
            let sz = z.saturating_sub(g.depth_px - 1);
            for x in 0..nx {
                let xi = x.clamp(pad, pad + g.lateral_px - 1) - pad;
                let sx = pad.saturating_sub(x).max(x.saturating_sub(pad + g.lateral_px - 1));
                let c = speed[zi * g.lateral_px + xi];
                let i = z * nx + x;
                coef[i] = c * c * dt * dt;
                let s = (sz.max(sx) as f64 / pad as f64).min(1.0);
                let eta = eta_max * s * s;
                damp_a[i] = 1.0 / (1.0 + 0.5 * eta * dt);
                damp_b[i] = 1.0 - 0.5 * eta * dt;
            }
        }
        Self {
            nz,
            nx,
            pad,
            inv_dz2: 1.0 / (dz * dz),
            inv_dx2: 1.0 / (dx * dx),
            coef,
            damp_a,
            damp_b,
        }
    }

    /// Discrete Laplacian with a mirrored top row (free surface) and zero
    /// Dirichlet values past the sponge.
    #[inline]
    fn laplacian_row(&self, u: &[f64], z: usize, out: &mut [f64]) {
        let nx = self.nx;
        let row = &u[z * nx..(z + 1) * nx];
        let up = if z == 0 {
            &u[nx..2 * nx]
        } else {
            &u[(z - 1) * nx..z * nx]
        };
        let zero = [0.0f64; 0];
        let down: &[f64] = if z + 1 < self.nz {
            &u[(z + 1) * nx..(z + 2) * nx]
        } else {
            &zero
        };
        for x in 0..nx {
            let c = row[x];
            let dn = if down.is_empty() { 0.0 } else { down[x] };
            let left = if x > 0 { row[x - 1] } else { 0.0 };
            let right = if x + 1 < nx { row[x + 1] } else { 0.0 };
            out[x] = (up[x] - 2.0 * c + dn) * self.inv_dz2 + (left - 2.0 * c + right) * self.inv_dx2;
        }
    }

    fn step(&self, prev: &mut [f64], cur: &[f64], lap: &mut [f64]) {
        let nx = self.nx;
        for z in 0..self.nz {
            self.laplacian_row(cur, z, lap);
            let o = z * nx;
            let (p, c) = (&mut prev[o..o + nx], &cur[o..o + nx]);
            let (k, a, b) = (&self.coef[o..o + nx], &self.damp_a[o..o + nx], &self.damp_b[o..o + nx]);
            for x in 0..nx {
                p[x] = (2.0 * c[x] - b[x] * p[x] + k[x] * lap[x]) * a[x];
            }
        }
    }
}

/// Solver time step for the given speeds.
pub fn solver_time_step(cfg: &SimConfig, speed: &[f64]) -> Result<f64> {
    let g = &cfg.geom;
    let c_max = speed.iter().cloned().fold(0.0, f64::max);
    if !(c_max > 0.0 && c_max.is_finite()) {
        return Err(Error::invalid("map", "shear speed must be finite and > 0"));
    }
    let (dz, dx) = (g.depth_pitch(), g.lateral_pitch());
    let dt = cfg.cfl_factor * dz.min(dx) / c_max;
    let courant = c_max * dt * (1.0 / (dz * dz) + 1.0 / (dx * dx)).sqrt();
    if !(dt > 0.0 && courant < 1.0) {
        return Err(Error::CflViolation(format!(
            "Courant number {courant:.3} >= 1 (dt = {dt:e} s)"
        )));
    }
    Ok(dt)
}

/// Adds white Gaussian noise drawn from a generator seeded with `seed`.
pub fn add_noise(data: &mut [f32], std: f64, seed: u64) {
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, std).expect("validated std");
        for v in data.iter_mut() {
            *v += noise.sample(&mut rng) as f32;
        }
    }
}

/// Propagates a push through `map` and records the displacement frames.
pub fn simulate(map: &ElasticityMap, cfg: &SimConfig) -> Result<DisplacementSequence> {
    cfg.validate()?;
    cfg.geom.ensure_same(&map.geom)?;
    let g = cfg.geom;
    let speed = shear_speed_field(map, cfg)?;
    let dt = solver_time_step(cfg, &speed)?;
    let solver = Solver::new(cfg, &speed, dt);
    let (nz, nx, pad) = (solver.nz, solver.nx, solver.pad);

    let mut cur = vec![0.0f64; nz * nx];
    let (lat, dep) = push_profile(&g, &cfg.push);
    for z in 0..g.depth_px {
        for x in 0..g.lateral_px {
            cur[z * nx + x + pad] = cfg.push_amplitude * dep[z] * lat[x];
        }
    }
    // zero initial velocity: u(-dt) = u(dt) = u0 + dt^2/2 c^2 lap(u0)
    let mut prev = vec![0.0f64; nz * nx];
    let mut lap = vec![0.0f64; nx];
    for z in 0..nz {
        solver.laplacian_row(&cur, z, &mut lap);
        for x in 0..nx {
            let i = z * nx + x;
            prev[i] = cur[i] + 0.5 * solver.coef[i] * lap[x];
        }
    }

    let frame_steps: Vec<usize> = (0..cfg.frames)
        .map(|k| (cfg.frame_time(k) / dt).round() as usize)
        .collect();
    let t = cfg.frames;
    let mut data = vec![0.0f32; g.pixels() * t];
    let mut record = |u: &[f64], k: usize| {
        for z in 0..g.depth_px {
            let row = &u[z * nx + pad..z * nx + pad + g.lateral_px];
            for (x, &v) in row.iter().enumerate() {
                data[(z * g.lateral_px + x) * t + k] = v as f32;
            }
        }
    };
    let mut step = 0usize;
    for (k, &target) in frame_steps.iter().enumerate() {
        while step < target {
            solver.step(&mut prev, &cur, &mut lap);
            std::mem::swap(&mut prev, &mut cur);
            step += 1;
        }
        record(&cur, k);
    }

    add_noise(&mut data, cfg.noise_std, cfg.seed);
    DisplacementSequence::new(g, t, cfg.frame_rate, cfg.push, data)
}
