//! Spatial augmentations of spatio-temporal windows. The time axis is never
//! touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::SpatioTemporalWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90s: bool,
    pub gaussian_blur: bool,
    pub random_erasing: bool,
    /// Chance of applying each enabled transform.
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rot90s: true,
            gaussian_blur: true,
            random_erasing: true,
            probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }
}

/// Mirrors the lateral axis.
pub fn hflip(w: &mut SpatioTemporalWindow) {
    let (nl, nt) = (w.lateral_size, w.frames);
    for row in w.data.chunks_mut(nl * nt) {
        for l in 0..nl / 2 {
            for t in 0..nt {
                row.swap(l * nt + t, (nl - 1 - l) * nt + t);
            }
        }
    }
}

/// Mirrors the depth axis.
pub fn vflip(w: &mut SpatioTemporalWindow) {
    let row = w.lateral_size * w.frames;
    let nd = w.depth_size;
    for d in 0..nd / 2 {
        let (a, b) = w.data.split_at_mut((nd - 1 - d) * row);
        a[d * row..(d + 1) * row].swap_with_slice(&mut b[..row]);
    }
}

/// Quarter turn of a square window: `out[i][j] = in[n-1-j][i]`.
pub fn rot90(w: &mut SpatioTemporalWindow) {
    assert_eq!(w.depth_size, w.lateral_size, "rotation needs a square window");
    let (n, nt) = (w.depth_size, w.frames);
    let src = w.data.clone();
    for i in 0..n {
        for j in 0..n {
            let from = ((n - 1 - j) * n + i) * nt;
            w.data[(i * n + j) * nt..][..nt].copy_from_slice(&src[from..from + nt]);
        }
    }
}

/// Separable Gaussian blur over depth and lateral with clamped borders.
pub fn gaussian_blur(w: &mut SpatioTemporalWindow, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let (nd, nl, nt) = (w.depth_size, w.lateral_size, w.frames);
    let pass = |src: &[f32], along_depth: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for d in 0..nd {
            for l in 0..nl {
                for t in 0..nt {
                    let mut acc = 0.0;
                    for (k, &tap) in taps.iter().enumerate() {
                        let o = k as isize - radius;
                        let (dd, ll) = if along_depth {
                            ((d as isize + o).clamp(0, nd as isize - 1) as usize, l)
                        } else {
                            (d, (l as isize + o).clamp(0, nl as isize - 1) as usize)
                        };
                        acc += tap * src[(dd * nl + ll) * nt + t] as f64;
                    }
                    out[(d * nl + l) * nt + t] = (acc / norm) as f32;
                }
            }
        }
        out
    };
    let tmp = pass(&w.data, true);
    w.data = pass(&tmp, false);
}

/// Zeroes the rectangle `[d0, d0+h) x [l0, l0+w)` in every frame.
pub fn erase(w: &mut SpatioTemporalWindow, d0: usize, l0: usize, h: usize, wd: usize) {
    let (nl, nt) = (w.lateral_size, w.frames);
    for d in d0..(d0 + h).min(w.depth_size) {
        let lo = (d * nl + l0) * nt;
        let hi = (d * nl + (l0 + wd).min(nl)) * nt;
        w.data[lo..hi].fill(0.0);
    }
}

/// Applies each enabled transform independently with `cfg.probability`.
pub fn augment<R: Rng>(w: &mut SpatioTemporalWindow, cfg: &AugmentConfig, rng: &mut R) {
    let p = cfg.probability;
    if cfg.hflip && rng.gen_bool(p) {
        hflip(w);
    }
    if cfg.vflip && rng.gen_bool(p) {
        vflip(w);
    }
    if cfg.rot90s && w.depth_size == w.lateral_size && rng.gen_bool(p) {
        for _ in 0..rng.gen_range(1..=3) {
            rot90(w);
        }
    }
    if cfg.gaussian_blur && rng.gen_bool(p) {
        let sigma = rng.gen_range(0.3..=1.0);
        gaussian_blur(w, sigma);
    }
    if cfg.random_erasing && rng.gen_bool(p) {
        let (nd, nl) = (w.depth_size, w.lateral_size);
        let max_area = nd * nl / 4;
        if max_area >= 1 {
            let area = rng.gen_range(1..=max_area);
            let aspect: f64 = rng.gen_range(-1.2f64..1.2).exp();
            let h = ((area as f64 * aspect).sqrt().round() as usize).clamp(1, nd);
            let wd = (area / h).clamp(1, nl);
            let d0 = rng.gen_range(0..=nd - h);
            let l0 = rng.gen_range(0..=nl - wd);
            erase(w, d0, l0, h, wd);
        }
    }
}
