//! Time-of-flight elasticity estimation: filtering, per-pixel delay between
//! two lateral positions, speed to modulus, multi-push fusion.

mod delay;
mod filters;

pub use delay::{estimate_delay, tukey, DelayEstimate, DelayEstimator, TraceSpectrum};
pub use filters::{directional_filter, mean_filter3, Direction};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DisplacementSequence, ElasticityMap};
use crate::geom::GridGeom;
use crate::phantom::{shear_speed_to_young, DEFAULT_DENSITY, DEFAULT_POISSON};

/// How the directional filter is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionalMode {
    Off,
    /// Each side of the push keeps waves traveling away from it.
    Auto,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TofConfig {
    pub mean_kernel: usize,
    pub directional_filter: DirectionalMode,
    /// Lateral separation of the two traces (px).
    pub lateral_distance: usize,
    pub interp_factor: usize,
    pub tukey_alpha: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Minimum normalized correlation at the delay peak.
    pub min_correlation: f64,
    /// Reject pairs whose trace peaks fall inside the Tukey taper.
    pub arrival_gate: bool,
    pub alpha: f64,
    /// Edge of the square Gaussian post-filter (m); 0 disables it.
    pub post_gaussian: f64,
    pub density: f64,
    pub poisson: f64,
}

impl Default for TofConfig {
    fn default() -> Self {
        Self {
            mean_kernel: 5,
            directional_filter: DirectionalMode::Auto,
            lateral_distance: 65,
            interp_factor: 10,
            tukey_alpha: 0.5,
            v_min: 0.1,
            v_max: 10.0,
            min_correlation: 0.9,
            arrival_gate: true,
            alpha: 0.75,
            post_gaussian: 2e-3,
            density: DEFAULT_DENSITY,
            poisson: DEFAULT_POISSON,
        }
    }
}

impl TofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mean_kernel == 0 || self.mean_kernel.is_multiple_of(2) {
            return Err(Error::invalid("mean_kernel", "must be odd and >= 1"));
        }
        if self.lateral_distance < 2 {
            return Err(Error::invalid("lateral_distance", "must be >= 2"));
        }
        if self.interp_factor == 0 {
            return Err(Error::invalid("interp_factor", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tukey_alpha) {
            return Err(Error::invalid("tukey_alpha", "must lie in [0, 1]"));
        }
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(Error::invalid("v_min/v_max", "need 0 < v_min < v_max"));
        }
        if !(-1.0..=1.0).contains(&self.min_correlation) {
            return Err(Error::invalid("min_correlation", "must lie in [-1, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and > 0"));
        }
        if !(self.post_gaussian >= 0.0 && self.post_gaussian.is_finite()) {
            return Err(Error::invalid("post_gaussian", "must be finite and >= 0"));
        }
        if !(self.density > 0.0 && self.poisson > 0.0 && self.poisson <= 0.5) {
            return Err(Error::invalid(
                "density/poisson",
                "need density > 0 and 0 < poisson <= 0.5",
            ));
        }
        Ok(())
    }

    /// Offsets of the trace pair around the target pixel: `l - near`, `l + far`.
    pub fn pair_offsets(&self) -> (usize, usize) {
        let near = self.lateral_distance / 2;
        (near, self.lateral_distance - near)
    }
}

/// Shear speed per pixel in m/s; NaN marks a rejected estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    pub geom: GridGeom,
    data: Vec<f32>,
    /// Push ids that contributed.
    pub pushes: Vec<u32>,
}

impl VelocityMap {
    pub fn new(geom: GridGeom, data: Vec<f32>, pushes: Vec<u32>) -> Result<Self> {
        if data.len() != geom.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "velocity map has {} values, geometry needs {}",
                data.len(),
                geom.pixels()
            )));
        }
        Ok(Self { geom, data, pushes })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, depth: usize, lateral: usize) -> Option<f32> {
        let v = self.data[depth * self.geom.lateral_px + lateral];
        (!v.is_nan()).then_some(v)
    }

    pub fn present_fraction(&self) -> f64 {
        self.data.iter().filter(|v| !v.is_nan()).count() as f64 / self.data.len() as f64
    }
}

/// Filtered copies of a sequence, one per propagation side.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Used right of the push (waves moving toward larger lateral index).
    pub positive: DisplacementSequence,
    pub negative: DisplacementSequence,
}

/// Mean filter followed by the configured directional filter.
pub fn preprocess(seq: &DisplacementSequence, cfg: &TofConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let smooth = mean_filter3(seq, cfg.mean_kernel)?;
    Ok(match cfg.directional_filter {
        DirectionalMode::Off => Preprocessed {
            positive: smooth.clone(),
            negative: smooth,
        },
        DirectionalMode::Positive => {
            let f = directional_filter(&smooth, Direction::Positive)?;
            Preprocessed {
                positive: f.clone(),
                negative: f,
            }
        }
        DirectionalMode::Negative => {
            let f = directional_filter(&smooth, Direction::Negative)?;
            Preprocessed {
                positive: f.clone(),
                negative: f,
            }
        }
        DirectionalMode::Auto => Preprocessed {
            positive: directional_filter(&smooth, Direction::Positive)?,
            negative: directional_filter(&smooth, Direction::Negative)?,
        },
    })
}

/// Speed at every pixel from the delay between the traces at
/// `l - d/2` and `l + d/2`. A pixel is missing when the pair leaves the
/// grid, the delay is not positive, the peak correlation is below
/// `min_correlation`, the speed leaves `[v_min, v_max]`, or (with
/// `arrival_gate`) either trace peaks inside the window taper. Pixels right of (or at) the push center read
/// `pre.positive` and expect the far trace to lag; pixels left of it read
/// `pre.negative` and expect the near trace to lag.
pub fn velocity_map(pre: &Preprocessed, cfg: &TofConfig, push_id: u32) -> Result<VelocityMap> {
    cfg.validate()?;
    let seq = &pre.positive;
    seq.geom.ensure_same(&pre.negative.geom)?;
    let g = seq.geom;
    let (nd, nl) = (g.depth_px, g.lateral_px);
    let est = DelayEstimator::new(seq.frames, cfg.interp_factor, cfg.tukey_alpha)?;
    let (near, far) = cfg.pair_offsets();
    let center = seq.push.lateral_center_px;
    let distance = cfg.lateral_distance as f64 * g.lateral_pitch();

    let rows: Vec<Vec<f32>> = (0..nd)
        .into_par_iter()
        .map(|d| {
            let pos: Vec<TraceSpectrum> = (0..nl).map(|l| est.spectrum(pre.positive.trace(d, l))).collect();
            let neg: Vec<TraceSpectrum> = (0..nl).map(|l| est.spectrum(pre.negative.trace(d, l))).collect();
            (0..nl)
                .map(|l| {
                    if l < near || l + far >= nl {
                        return f32::NAN;
                    }
                    let (a, b) = if l >= center {
                        (&pos[l - near], &pos[l + far])
                    } else {
                        (&neg[l + far], &neg[l - near])
                    };
                    if cfg.arrival_gate && !(est.peak_in_flat_part(a) && est.peak_in_flat_part(b)) {
                        return f32::NAN;
                    }
                    match est.estimate(a, b) {
                        Ok(e) if e.samples > 0.0 && e.correlation >= cfg.min_correlation => {
                            let v = distance * seq.frame_rate / e.samples;
                            if v >= cfg.v_min && v <= cfg.v_max {
                                v as f32
                            } else {
                                f32::NAN
                            }
                        }
                        _ => f32::NAN,
                    }
                })
                .collect()
        })
        .collect();
    VelocityMap::new(g, rows.concat(), vec![push_id])
}

/// Full per-push pipeline: preprocess then estimate speeds.
pub fn tof_velocity(seq: &DisplacementSequence, cfg: &TofConfig, push_id: u32) -> Result<VelocityMap> {
    velocity_map(&preprocess(seq, cfg)?, cfg, push_id)
}

/// `E = alpha * rho * 2 (1 + nu) * c^2` per present pixel.
pub fn velocity_to_young(v: &VelocityMap, cfg: &TofConfig) -> ElasticityMap {
    let data = v
        .data
        .iter()
        .map(|&c| {
            if c.is_nan() {
                f32::NAN
            } else {
                shear_speed_to_young(c as f64, cfg.alpha, cfg.density, cfg.poisson) as f32
            }
        })
        .collect();
    ElasticityMap::new(v.geom, data).expect("same geometry")
}

/// Per-pixel mean over the maps where present, then normalized Gaussian
/// smoothing over a `post_gaussian` square (sigma = edge / 4) that also
/// fills missing pixels from present neighbors.
pub fn fuse_pushes(maps: &[ElasticityMap], cfg: &TofConfig) -> Result<ElasticityMap> {
    let first = maps.first().ok_or(Error::EmptyDataset)?;
    let g = first.geom;
    for m in &maps[1..] {
        g.ensure_same(&m.geom)?;
    }
    let mut mean = vec![f32::NAN; g.pixels()];
    for (i, out) in mean.iter_mut().enumerate() {
        let (mut sum, mut n) = (0.0f64, 0usize);
        for m in maps {
            let v = m.data()[i];
            if !v.is_nan() {
                sum += v as f64;
                n += 1;
            }
        }
        if n > 0 {
            *out = (sum / n as f64) as f32;
        }
    }
    if cfg.post_gaussian <= 0.0 {
        return ElasticityMap::new(g, mean);
    }
    ElasticityMap::new(g, gaussian_fill(&g, &mean, cfg.post_gaussian))
}

fn gaussian_fill(g: &GridGeom, values: &[f32], edge: f64) -> Vec<f32> {
    let sigma = edge / 4.0;
    let half = edge / 2.0;
    let rd = (half / g.depth_pitch()).floor() as usize;
    let rl = (half / g.lateral_pitch()).floor() as usize;
    let kernel = |n: usize, pitch: f64| -> Vec<f64> {
        (0..=n)
            .map(|i| {
                let x = i as f64 * pitch;
                (-0.5 * (x / sigma).powi(2)).exp()
            })
            .collect()
    };
    let kd = kernel(rd, g.depth_pitch());
    let kl = kernel(rl, g.lateral_pitch());
    let (nd, nl) = (g.depth_px, g.lateral_px);
    // separable normalized convolution: smooth value*mask and mask
    let present: Vec<f64> = values.iter().map(|v| if v.is_nan() { 0.0 } else { 1.0 }).collect();
    let weighted: Vec<f64> = values
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { v as f64 })
        .collect();
    let conv = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; src.len()];
        for d in 0..nd {
            for l in 0..nl {
                let lo = l.saturating_sub(rl);
                let hi = (l + rl).min(nl - 1);
                tmp[d * nl + l] = (lo..=hi).map(|j| kl[j.abs_diff(l)] * src[d * nl + j]).sum();
            }
        }
        let mut out = vec![0.0; src.len()];
        for d in 0..nd {
            let lo = d.saturating_sub(rd);
            let hi = (d + rd).min(nd - 1);
            for l in 0..nl {
                out[d * nl + l] = (lo..=hi).map(|j| kd[j.abs_diff(d)] * tmp[j * nl + l]).sum();
            }
        }
        out
    };
    let num = conv(&weighted);
    let den = conv(&present);
    num.iter()
        .zip(&den)
        .map(|(&n, &w)| if w > 1e-12 { (n / w) as f32 } else { f32::NAN })
        .collect()
}

/// Least-squares scale `alpha` minimizing `sum (alpha * est_i - target_i)^2`.
pub fn calibrate_alpha(estimates: &[f64], targets: &[f64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != targets.len() {
        return Err(Error::DegenerateInput(format!(
            "need matching non-empty lists, got {} estimates and {} targets",
            estimates.len(),
            targets.len()
        )));
    }
    let num: f64 = estimates.iter().zip(targets).map(|(e, t)| e * t).sum();
    let den: f64 = estimates.iter().map(|e| e * e).sum();
    if den == 0.0 {
        return Err(Error::DegenerateInput("all estimates are zero".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pixel, PushDescriptor};

    fn geom(nd: usize, nl: usize) -> GridGeom {
        GridGeom::with_default_pitch(nd, nl).unwrap()
    }

    #[test]
    fn young_from_speed() {
        let g = geom(1, 1);
        let v = VelocityMap::new(g, vec![3.0], vec![1]).unwrap();
        let e = velocity_to_young(&v, &TofConfig::default());
        assert!((e.data()[0] as f64 - 20250.0).abs() < 1e-3);
        let cfg = TofConfig {
            alpha: 1.0,
            ..TofConfig::default()
        };
        assert!((velocity_to_young(&v, &cfg).data()[0] as f64 - 27000.0).abs() < 1e-3);
        let missing = VelocityMap::new(g, vec![f32::NAN], vec![1]).unwrap();
        assert!(velocity_to_young(&missing, &cfg).data()[0].is_nan());
    }

    #[test]
    fn delay_to_speed_arithmetic() {
        let g = GridGeom::default();
        let distance = 65.0 * g.lateral_pitch();
        assert!((distance - 3.575e-3).abs() < 1e-12);
        assert!((distance / (3.0 / 7000.0) - 8.3417).abs() < 1e-3);
    }

    #[test]
    fn alpha_calibration() {
        assert_eq!(calibrate_alpha(&[10.0, 20.0], &[10.0, 20.0]).unwrap(), 1.0);
        let t = [20.0, 40.0, 60.0];
        let e: Vec<f64> = t.iter().map(|v| v / 0.75).collect();
        assert!((calibrate_alpha(&e, &t).unwrap() - 0.75).abs() < 1e-12);
        assert!((calibrate_alpha(&[40.0], &[30.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(
            calibrate_alpha(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn fuse_identical_maps() {
        let g = geom(40, 60);
        let m = ElasticityMap::constant(g, 30e3);
        let fused = fuse_pushes(&vec![m.clone(); 9], &TofConfig::default()).unwrap();
        assert!(fused.data().iter().all(|&v| (v - 30e3).abs() < 0.05));
    }

    #[test]
    fn fuse_singleton_mean() {
        let g = geom(5, 5);
        let mut a = ElasticityMap::missing(g);
        a.set(Pixel::new(2, 2), Some(10e3));
        let b = ElasticityMap::missing(g);
        let cfg = TofConfig {
            post_gaussian: 0.0,
            ..TofConfig::default()
        };
        let f = fuse_pushes(&[b.clone(), a, b], &cfg).unwrap();
        assert_eq!(f.get(Pixel::new(2, 2)), Some(10e3));
        assert_eq!(f.present_count(), 1);
    }

    #[test]
    fn fuse_fills_checkerboard_holes() {
        let g = geom(30, 40);
        let mut m = ElasticityMap::missing(g);
        for d in 0..30 {
            for l in 0..40 {
                if (d + l) % 2 == 0 {
                    m.set(Pixel::new(d, l), Some(50e3));
                }
            }
        }
        let f = fuse_pushes(&[m], &TofConfig::default()).unwrap();
        assert_eq!(f.present_count(), g.pixels());
        assert!(f.data().iter().all(|&v| (v - 50e3).abs() < 0.05));
    }

    #[test]
    fn isolated_hole_far_from_data_stays_missing() {
        let g = geom(60, 60);
        let mut m = ElasticityMap::missing(g);
        m.set(Pixel::new(0, 0), Some(1e3));
        let f = fuse_pushes(&[m], &TofConfig::default()).unwrap();
        assert!(f.get(Pixel::new(59, 59)).is_none());
        assert!(f.get(Pixel::new(1, 1)).is_some());
    }

    #[test]
    fn fuse_checks_geometry() {
        let a = ElasticityMap::constant(geom(5, 5), 1.0);
        let b = ElasticityMap::constant(geom(5, 6), 1.0);
        assert!(matches!(
            fuse_pushes(&[a, b], &TofConfig::default()),
            Err(Error::GeometryMismatch(_))
        ));
    }

    /// Plane pulse traveling away from the push on both sides.
    fn traveling_pulse(speed: f64) -> DisplacementSequence {
        let g = geom(6, 400);
        let push = PushDescriptor::at(&g, 200);
        let dx = g.lateral_pitch();
        DisplacementSequence::from_fn(g, 35, 7000.0, push, |_, l, t| {
            let x = (l as f64 - 200.0).abs() * dx;
            let time = t as f64 / 7000.0 + 0.13e-3;
            let arrival = x / speed;
            (-0.5 * ((time - arrival) / 0.4e-3).powi(2)).exp() as f32 * 1e-5
        })
        .unwrap()
    }

    #[test]
    fn analytic_pulse_speed() {
        let seq = traveling_pulse(3.0);
        // plain correlation of a translating pulse is exact away from the push
        let plain = TofConfig {
            tukey_alpha: 0.0,
            directional_filter: DirectionalMode::Off,
            ..TofConfig::default()
        };
        let v = tof_velocity(&seq, &plain, 1).unwrap();
        for l in [50, 80, 320, 350] {
            let c = v.get(3, l).expect("present");
            assert!((c - 3.0).abs() < 0.01, "l={l}: {c}");
        }
        let v = tof_velocity(&seq, &TofConfig::default(), 1).unwrap();
        let mut present: Vec<f32> = (0..400).filter_map(|l| v.get(3, l)).collect();
        assert!(present.len() > 20);
        assert!(present.iter().all(|c| (c - 3.0).abs() < 0.5), "{present:?}");
        present.sort_by(f32::total_cmp);
        assert!((present[present.len() / 2] - 3.0).abs() < 0.15);
    }

    #[test]
    fn noise_only_is_rejected() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let g = geom(20, 200);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1e-6).unwrap();
        let seq = DisplacementSequence::from_fn(g, 35, 7000.0, PushDescriptor::centered(&g), |_, _, _| {
            n.sample(&mut rng) as f32
        })
        .unwrap();
        let v = tof_velocity(&seq, &TofConfig::default(), 1).unwrap();
        assert!(v.present_fraction() <= 0.1, "{}", v.present_fraction());
    }

    #[test]
    fn present_speeds_stay_in_band() {
        let seq = traveling_pulse(3.0);
        let cfg = TofConfig {
            v_min: 2.9,
            v_max: 3.05,
            ..TofConfig::default()
        };
        let v = tof_velocity(&seq, &cfg, 1).unwrap();
        assert!(v
            .data()
            .iter()
            .filter(|c| !c.is_nan())
            .all(|&c| (2.9..=3.05).contains(&(c as f64))));
    }
}
