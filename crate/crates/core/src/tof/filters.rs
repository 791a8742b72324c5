//! Pre-filters applied before delay estimation.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DisplacementSequence;

/// Lateral propagation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Toward increasing lateral index.
    Positive,
    Negative,
}

/// Box mean over a `kernel^3` neighborhood, edges replicated.
pub fn mean_filter3(seq: &DisplacementSequence, kernel: usize) -> Result<DisplacementSequence> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::invalid("mean_kernel", "must be odd and >= 1"));
    }
    if kernel == 1 {
        return Ok(seq.clone());
    }
    let (nd, nl, nt) = (seq.geom.depth_px, seq.geom.lateral_px, seq.frames);
    let mut a: Vec<f64> = seq.data().iter().map(|&v| v as f64).collect();
    let mut b = vec![0.0f64; a.len()];
    box_axis(&a, &mut b, 1, nd, nl * nt, kernel);
    box_axis(&b, &mut a, nd, nl, nt, kernel);
    box_axis(&a, &mut b, nd * nl, nt, 1, kernel);
    seq.with_data(b.into_iter().map(|v| v as f32).collect())
}

/// Mean along the middle axis of an `outer x n x inner` array.
fn box_axis(src: &[f64], dst: &mut [f64], outer: usize, n: usize, inner: usize, kernel: usize) {
    let h = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    for blk in 0..outer {
        let base = blk * n * inner;
        for i in 0..n {
            let o = base + i * inner;
            let out = &mut dst[o..o + inner];
            out.iter_mut().for_each(|v| *v = 0.0);
            for k in -h..=h {
                let j = (i as isize + k).clamp(0, n as isize - 1) as usize;
                let s = &src[base + j * inner..base + (j + 1) * inner];
                for (v, &x) in out.iter_mut().zip(s) {
                    *v += x;
                }
            }
            out.iter_mut().for_each(|v| *v *= inv);
        }
    }
}

/// Raised-cosine ramp from 0 at bin 0 to 1 at `TAPER_BINS`.
const TAPER_BINS: usize = 3;

fn ramp(bin: usize) -> f64 {
    if bin >= TAPER_BINS {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * bin as f64 / TAPER_BINS as f64).cos())
    }
}

/// Signed frequency index of FFT bin `k` of an `n`-point transform.
fn signed_bin(k: usize, n: usize) -> isize {
    if k <= n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Gain of the (lateral wavenumber, temporal frequency) mask passing waves
/// that travel in `direction`.
pub(crate) fn directional_gain(kx: isize, f: isize, direction: Direction) -> f64 {
    // e^{i(kx - wt)} lands at bin (k, -f): forward waves fill k*f < 0
    let rejected = match direction {
        Direction::Positive => kx.signum() * f.signum() > 0,
        Direction::Negative => kx.signum() * f.signum() < 0,
    };
    if rejected {
        1.0 - ramp(kx.unsigned_abs()) * ramp(f.unsigned_abs())
    } else {
        1.0
    }
}

/// Per depth row, masks the 2D spectrum over (lateral, time) so that only
/// waves traveling in `direction` remain.
pub fn directional_filter(seq: &DisplacementSequence, direction: Direction) -> Result<DisplacementSequence> {
    let (nd, nl, nt) = (seq.geom.depth_px, seq.geom.lateral_px, seq.frames);
    if nt < 8 {
        return Err(Error::invalid("frames", "directional filter needs >= 8 frames"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let ft = planner.plan_fft_forward(nt);
    let it = planner.plan_fft_inverse(nt);
    let fl = planner.plan_fft_forward(nl);
    let il = planner.plan_fft_inverse(nl);
    let mask: Vec<f64> = (0..nl)
        .flat_map(|k| (0..nt).map(move |f| directional_gain(signed_bin(k, nl), signed_bin(f, nt), direction)))
        .collect();
    let scale = 1.0 / (nl * nt) as f64;
    let src = seq.data();
    let mut out = vec![0.0f32; src.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); nl * nt];
    let mut col = vec![Complex::new(0.0, 0.0); nl];
    for d in 0..nd {
        let row = &src[d * nl * nt..(d + 1) * nl * nt];
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex::new(v as f64, 0.0);
        }
        fft2(&mut buf, &mut col, nl, nt, &*ft, &*fl);
        for (b, &m) in buf.iter_mut().zip(&mask) {
            *b *= m;
        }
        fft2(&mut buf, &mut col, nl, nt, &*it, &*il);
        for (o, b) in out[d * nl * nt..(d + 1) * nl * nt].iter_mut().zip(&buf) {
            *o = (b.re * scale) as f32;
        }
    }
    seq.with_data(out)
}

/// In-place 2D transform of an `nl x nt` row-major array (time contiguous).
fn fft2(
    buf: &mut [Complex<f64>],
    col: &mut [Complex<f64>],
    nl: usize,
    nt: usize,
    time: &dyn Fft<f64>,
    lateral: &dyn Fft<f64>,
) {
    time.process(buf);
    for f in 0..nt {
        for l in 0..nl {
            col[l] = buf[l * nt + f];
        }
        lateral.process(col);
        for l in 0..nl {
            buf[l * nt + f] = col[l];
        }
    }
}
