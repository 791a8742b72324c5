//! Field containers: displacement sequences, elasticity maps and
//! spatio-temporal windows.

use crate::error::{Error, Result};
use crate::geom::{GridGeom, Pixel, PushDescriptor};

pub const DEFAULT_FRAMES: usize = 35;
pub const DEFAULT_FRAME_RATE: f64 = 7000.0;

/// Window edge lengths evaluated for the CNN estimator.
pub const WINDOW_SIZES: [usize; 5] = [65, 33, 17, 9, 5];

/// Axial displacement over depth x lateral x time, in meters.
///
/// Samples are stored in `[depth][lateral][time]` order with time contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSequence {
    pub geom: GridGeom,
    pub frames: usize,
    pub frame_rate: f64,
    pub push: PushDescriptor,
    data: Vec<f32>,
}

impl DisplacementSequence {
    pub fn new(geom: GridGeom, frames: usize, frame_rate: f64, push: PushDescriptor, data: Vec<f32>) -> Result<Self> {
        geom.validate()?;
        push.validate(&geom)?;
        if frames == 0 {
            return Err(Error::invalid("frames", "must be >= 1"));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::invalid("frame_rate", "must be finite and > 0"));
        }
        let expected = geom.pixels() * frames;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "sequence data has {} samples, geometry needs {}",
                data.len(),
                expected
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "displacement samples must be finite"));
        }
        Ok(Self {
            geom,
            frames,
            frame_rate,
            push,
            data,
        })
    }

    pub fn zeros(geom: GridGeom, frames: usize, frame_rate: f64, push: PushDescriptor) -> Result<Self> {
        let n = geom.pixels() * frames;
        Self::new(geom, frames, frame_rate, push, vec![0.0; n])
    }

    /// Builds a sequence by evaluating `f(depth, lateral, frame)`.
    pub fn from_fn(
        geom: GridGeom,
        frames: usize,
        frame_rate: f64,
        push: PushDescriptor,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(geom.pixels() * frames);
        for d in 0..geom.depth_px {
            for l in 0..geom.lateral_px {
                for t in 0..frames {
                    data.push(f(d, l, t));
                }
            }
        }
        Self::new(geom, frames, frame_rate, push, data)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same metadata, new samples.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.geom, self.frames, self.frame_rate, self.push, data)
    }

    #[inline]
    pub fn offset(&self, depth: usize, lateral: usize) -> usize {
        (depth * self.geom.lateral_px + lateral) * self.frames
    }

    #[inline]
    pub fn at(&self, depth: usize, lateral: usize, frame: usize) -> f32 {
        self.data[self.offset(depth, lateral) + frame]
    }

    /// Time series at one pixel.
    pub fn trace(&self, depth: usize, lateral: usize) -> &[f32] {
        let o = self.offset(depth, lateral);
        &self.data[o..o + self.frames]
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Young's modulus per pixel in Pa. Missing estimates are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityMap {
    pub geom: GridGeom,
    data: Vec<f32>,
}

impl ElasticityMap {
    pub fn new(geom: GridGeom, data: Vec<f32>) -> Result<Self> {
        geom.validate()?;
        if data.len() != geom.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "map has {} pixels, geometry needs {}",
                data.len(),
                geom.pixels()
            )));
        }
        if data.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("data", "map values must be finite or MISSING"));
        }
        Ok(Self { geom, data })
    }

    pub fn constant(geom: GridGeom, value: f32) -> Self {
        Self {
            geom,
            data: vec![value; geom.pixels()],
        }
    }

    pub fn missing(geom: GridGeom) -> Self {
        Self::constant(geom, f32::NAN)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, px: Pixel) -> Option<f32> {
        let v = self.data[self.geom.index(px)];
        (!v.is_nan()).then_some(v)
    }

    #[inline]
    pub fn set(&mut self, px: Pixel, value: Option<f32>) {
        let i = self.geom.index(px);
        self.data[i] = value.unwrap_or(f32::NAN);
    }

    pub fn present_count(&self) -> usize {
        self.data.iter().filter(|v| !v.is_nan()).count()
    }

    /// Returns the single value of the map when every pixel is present and equal.
    pub fn uniform_value(&self) -> Option<f32> {
        let first = *self.data.first()?;
        if first.is_nan() {
            return None;
        }
        self.data
            .iter()
            .all(|v| v.to_bits() == first.to_bits())
            .then_some(first)
    }

    /// Median of present pixels, optionally restricted by `mask`.
    pub fn median_present(&self, mask: Option<&[bool]>) -> Option<f64> {
        let mut v: Vec<f64> = self
            .data
            .iter()
            .enumerate()
            .filter(|(i, x)| !x.is_nan() && mask.is_none_or(|m| m[*i]))
            .map(|(_, x)| *x as f64)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }
}

/// A `[hs][ws][t]` crop of a displacement sequence centered on a pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalWindow {
    pub depth_size: usize,
    pub lateral_size: usize,
    pub frames: usize,
    pub center: Pixel,
    /// Index of the sequence the window was cut from.
    pub source: usize,
    pub data: Vec<f32>,
}

impl SpatioTemporalWindow {
    #[inline]
    pub fn at(&self, d: usize, l: usize, t: usize) -> f32 {
        self.data[(d * self.lateral_size + l) * self.frames + t]
    }

    pub fn with_source(mut self, source: usize) -> Self {
        self.source = source;
        self
    }
}

pub fn check_window_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid("window size", format!("{size} must be odd and >= 1")));
    }
    Ok(())
}

/// Cuts the `size x size x t` window centered at `center`. No padding: the
/// window must lie fully inside the grid.
pub fn extract_window(seq: &DisplacementSequence, center: Pixel, size: usize) -> Result<SpatioTemporalWindow> {
    check_window_size(size)?;
    let half = size / 2;
    let g = &seq.geom;
    if center.depth < half
        || center.lateral < half
        || center.depth + half >= g.depth_px
        || center.lateral + half >= g.lateral_px
    {
        return Err(Error::OutOfBounds {
            depth: center.depth,
            lateral: center.lateral,
            size,
        });
    }
    let t = seq.frames;
    let mut data = Vec::with_capacity(size * size * t);
    for d in center.depth - half..=center.depth + half {
        let row = seq.offset(d, center.lateral - half);
        data.extend_from_slice(&seq.data[row..row + size * t]);
    }
    Ok(SpatioTemporalWindow {
        depth_size: size,
        lateral_size: size,
        frames: t,
        center,
        source: 0,
        data,
    })
}

/// Standardizes a window to zero mean and unit (population) standard
/// deviation. Windows with std below 1e-12 become all zeros.
pub fn normalize_window(w: &SpatioTemporalWindow) -> SpatioTemporalWindow {
    let mut out = w.clone();
    normalize_in_place(&mut out.data);
    out
}

pub fn normalize_in_place(data: &mut [f32]) {
    let n = data.len() as f64;
    if data.is_empty() {
        return;
    }
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&v| {
            let c = v as f64 - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < 1e-12 {
        data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let inv = 1.0 / std;
    for v in data.iter_mut() {
        *v = ((*v as f64 - mean) * inv) as f32;
    }
}
