//! Ground-truth elasticity phantoms, material conversions and the
//! indentation (unconfined compression) reference measurement.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ElasticityMap;
use crate::geom::{GridGeom, Pixel};

pub const DEFAULT_DENSITY: f64 = 1000.0;
pub const DEFAULT_POISSON: f64 = 0.5;

/// Desk-scale elasticity set used for experiments (Pa).
pub const DESK_ELASTICITIES: [f64; 6] = [20e3, 40e3, 60e3, 80e3, 100e3, 125e3];

/// Cylindrical specimen used for indentation.
pub const SPECIMEN_RADIUS: f64 = 0.010;
pub const SPECIMEN_HEIGHT: f64 = 0.040;
pub const MAX_INDENTATION_FORCE: f64 = 2.0;
pub const STRAIN_BAND: (f64, f64) = (0.02, 0.07);

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

fn default_poisson() -> f64 {
    DEFAULT_POISSON
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Young's modulus (Pa).
    pub young_modulus: f64,
    /// Density (kg/m^3).
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
}

impl Material {
    pub fn new(young_modulus: f64) -> Self {
        Self {
            young_modulus,
            density: DEFAULT_DENSITY,
            poisson: DEFAULT_POISSON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return Err(Error::invalid("young_modulus", "must be finite and > 0"));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::invalid("density", "must be finite and > 0"));
        }
        if !(self.poisson > 0.0 && self.poisson <= 0.5) {
            return Err(Error::invalid("poisson", "must lie in (0, 0.5]"));
        }
        Ok(())
    }
}

/// Shear wave speed `c_s = sqrt(E / (2 (1 + nu) rho))`.
pub fn young_to_shear_speed(m: &Material) -> f64 {
    (m.young_modulus / (2.0 * (1.0 + m.poisson) * m.density)).sqrt()
}

/// Young's modulus `E = alpha * rho * 2 (1 + nu) * c_s^2`.
pub fn shear_speed_to_young(speed: f64, alpha: f64, density: f64, poisson: f64) -> f64 {
    alpha * density * 2.0 * (1.0 + poisson) * speed * speed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: Pixel,
    /// Radius (m).
    pub radius: f64,
    pub material: Material,
}

/// Background material with circular inclusions, rasterized on `geom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default)]
    pub geom: GridGeom,
    pub background: Material,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

impl PhantomSpec {
    pub fn homogeneous(geom: GridGeom, young_modulus: f64) -> Self {
        Self {
            geom,
            background: Material::new(young_modulus),
            inclusions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        self.background.validate()?;
        for inc in &self.inclusions {
            if !self.geom.contains(inc.center) {
                return Err(Error::invalid("inclusions.center", "must lie inside the grid"));
            }
            if !(inc.radius > 0.0 && inc.radius.is_finite()) {
                return Err(Error::invalid("inclusions.radius", "must be finite and > 0"));
            }
            inc.material.validate()?;
        }
        Ok(())
    }

    /// Binary mask of pixels covered by any inclusion.
    pub fn inclusion_mask(&self) -> Vec<bool> {
        let g = &self.geom;
        let mut mask = vec![false; g.pixels()];
        for inc in &self.inclusions {
            for_each_in_disk(g, inc, |i| mask[i] = true);
        }
        mask
    }
}

fn for_each_in_disk(g: &GridGeom, inc: &Inclusion, mut f: impl FnMut(usize)) {
    let (pd, pl) = (g.depth_pitch(), g.lateral_pitch());
    let r2 = inc.radius * inc.radius * (1.0 + 1e-9);
    let reach_d = (inc.radius / pd).ceil() as isize + 1;
    let reach_l = (inc.radius / pl).ceil() as isize + 1;
    let (cd, cl) = (inc.center.depth as isize, inc.center.lateral as isize);
    for d in (cd - reach_d).max(0)..=(cd + reach_d).min(g.depth_px as isize - 1) {
        let dz = (d - cd) as f64 * pd;
        for l in (cl - reach_l).max(0)..=(cl + reach_l).min(g.lateral_px as isize - 1) {
            let dx = (l - cl) as f64 * pl;
            if dz * dz + dx * dx <= r2 {
                f(d as usize * g.lateral_px + l as usize);
            }
        }
    }
}

/// Rasterizes the phantom. Pixels at distance <= r from an inclusion center
/// take its modulus; later inclusions override earlier ones.
pub fn render_elasticity_map(spec: &PhantomSpec) -> ElasticityMap {
    let g = spec.geom;
    let mut map = ElasticityMap::constant(g, spec.background.young_modulus as f32);
    let data = map.data_mut();
    for inc in &spec.inclusions {
        let e = inc.material.young_modulus as f32;
        for_each_in_disk(&g, inc, |i| data[i] = e);
    }
    map
}

/// One compression test: force/displacement samples on a cylindrical specimen.
#[derive(Debug, Clone, PartialEq)]
pub struct IndentationTrace {
    /// `(force N, displacement m)` pairs.
    pub samples: Vec<(f64, f64)>,
    pub radius: f64,
    pub height: f64,
}

impl IndentationTrace {
    pub fn new(samples: Vec<(f64, f64)>, radius: f64, height: f64) -> Result<Self> {
        if !(radius > 0.0 && height > 0.0) {
            return Err(Error::invalid("specimen", "radius and height must be > 0"));
        }
        if samples
            .iter()
            .any(|&(f, dl)| !f.is_finite() || !dl.is_finite() || f > MAX_INDENTATION_FORCE)
        {
            return Err(Error::invalid("samples", "forces must be finite and at most 2 N"));
        }
        if samples.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::invalid("samples", "displacement must be non-decreasing"));
        }
        Ok(Self {
            samples,
            radius,
            height,
        })
    }

    /// `(strain, stress)` pairs.
    pub fn stress_strain(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let area = PI * self.radius * self.radius;
        self.samples.iter().map(move |&(f, dl)| (dl / self.height, f / area))
    }
}

/// Direct stress/strain ratio `F / (pi r^2) * l0 / dl`.
pub fn stress_strain_ratio(force: f64, displacement: f64, radius: f64, height: f64) -> f64 {
    force / (PI * radius * radius) * height / displacement
}

/// Least-squares slope of stress over strain, pooled over all traces and
/// restricted to the 2-7 % strain band. An intercept is fitted alongside the
/// slope.
pub fn indentation_young_modulus(traces: &[IndentationTrace]) -> Result<f64> {
    let (lo, hi) = STRAIN_BAND;
    for (i, t) in traces.iter().enumerate() {
        let reach = t.samples.last().map_or(0.0, |s| s.1 / t.height);
        if reach < hi {
            return Err(Error::InsufficientData(format!(
                "trace {i} reaches only {:.2} % strain",
                reach * 100.0
            )));
        }
    }
    let pts: Vec<(f64, f64)> = traces
        .iter()
        .flat_map(|t| t.stress_strain())
        .filter(|&(e, _)| e >= lo && e <= hi)
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} samples in the strain band",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("all band samples share one strain".into()));
    }
    Ok(sxy / sxx)
}
