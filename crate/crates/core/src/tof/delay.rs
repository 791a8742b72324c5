//! Sub-sample time-delay estimation between two traces.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Tukey window of length `n`; `alpha = 0` is rectangular, `1` is Hann.
pub fn tukey(n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = i as f64 / m;
            if alpha == 0.0 {
                1.0
            } else if x < alpha / 2.0 {
                0.5 * (1.0 + (std::f64::consts::PI * (2.0 * x / alpha - 1.0)).cos())
            } else if x > 1.0 - alpha / 2.0 {
                0.5 * (1.0 + (std::f64::consts::PI * (2.0 * x / alpha - 2.0 / alpha + 1.0)).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Windowed spectrum of one trace, ready for cross-correlation.
#[derive(Debug, Clone)]
pub struct TraceSpectrum {
    bins: Vec<Complex<f64>>,
    energy: f64,
    /// Sample index of the largest absolute value.
    pub peak: usize,
}

impl TraceSpectrum {
    pub fn is_flat(&self) -> bool {
        self.energy <= 0.0
    }
}

/// Delay estimate in samples at the original rate, with the normalized
/// correlation at the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub samples: f64,
    pub correlation: f64,
}

/// Cross-correlation delay estimator for traces of a fixed length: Tukey
/// window, correlation upsampled by zero padding the cross spectrum
/// (band-limited interpolation), then a parabola through the peak.
pub struct DelayEstimator {
    len: usize,
    padded: usize,
    interp: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DelayEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DelayEstimator")
            .field("len", &self.len)
            .field("interp", &self.interp)
            .finish()
    }
}

impl DelayEstimator {
    pub fn new(len: usize, interp: usize, tukey_alpha: f64) -> Result<Self> {
        if len < 8 {
            return Err(Error::invalid("trace length", "needs >= 8 samples"));
        }
        if interp == 0 {
            return Err(Error::invalid("interp_factor", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&tukey_alpha) {
            return Err(Error::invalid("tukey_alpha", "must lie in [0, 1]"));
        }
        let padded = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            padded,
            interp,
            window: tukey(len, tukey_alpha),
            forward: planner.plan_fft_forward(padded),
            inverse: planner.plan_fft_inverse(padded * interp),
        })
    }

    /// Samples at each end where the Tukey window is below one.
    pub fn taper_len(&self) -> usize {
        self.window.iter().take_while(|&&w| w < 1.0).count()
    }

    /// Whether the peak of a trace lies where the window is flat.
    pub fn peak_in_flat_part(&self, s: &TraceSpectrum) -> bool {
        let edge = self.taper_len();
        s.peak >= edge && s.peak + edge < self.len
    }

    pub fn spectrum(&self, trace: &[f32]) -> TraceSpectrum {
        debug_assert_eq!(trace.len(), self.len);
        let peak = trace
            .iter()
            .enumerate()
            .fold(
                (0, -1.0f32),
                |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best },
            )
            .0;
        let mean = trace.iter().map(|&v| v as f64).sum::<f64>() / self.len as f64;
        let var = trace.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
        let mut bins = vec![Complex::new(0.0, 0.0); self.padded];
        let mut energy = 0.0;
        if var > 0.0 {
            for (i, (&v, &w)) in trace.iter().zip(&self.window).enumerate() {
                let x = v as f64 * w;
                energy += x * x;
                bins[i] = Complex::new(x, 0.0);
            }
            self.forward.process(&mut bins);
        }
        TraceSpectrum { bins, energy, peak }
    }

    /// Lag of `b` relative to `a` in samples (positive when `b` is late).
    pub fn estimate(&self, a: &TraceSpectrum, b: &TraceSpectrum) -> Result<DelayEstimate> {
        if a.is_flat() || b.is_flat() {
            return Err(Error::FlatSignal);
        }
        let n = self.padded;
        let m = n * self.interp;
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        let half = n / 2;
        for k in 0..n {
            let r = a.bins[k].conj() * b.bins[k];
            if k < half {
                buf[k] = r;
            } else if k == half {
                if self.interp == 1 {
                    buf[k] = r;
                } else {
                    buf[k] = r * 0.5;
                    buf[m - half] = r * 0.5;
                }
            } else {
                buf[m - (n - k)] = r;
            }
        }
        self.inverse.process(&mut buf);
        let max_lag = (self.len - 1) * self.interp;
        let value = |lag: isize| -> f64 {
            let i = if lag >= 0 {
                lag as usize
            } else {
                (m as isize + lag) as usize
            };
            buf[i].re
        };
        let mut best = 0isize;
        let mut best_val = f64::NEG_INFINITY;
        for lag in -(max_lag as isize)..=(max_lag as isize) {
            let v = value(lag);
            if v > best_val {
                best_val = v;
                best = lag;
            }
        }
        let mut offset = 0.0;
        if best.unsigned_abs() < max_lag {
            let (y0, y1, y2) = (value(best - 1), best_val, value(best + 1));
            let denom = y0 - 2.0 * y1 + y2;
            if denom < 0.0 {
                offset = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
            }
        }
        let samples = (best as f64 + offset) / self.interp as f64;
        let correlation = best_val / (n as f64 * (a.energy * b.energy).sqrt());
        Ok(DelayEstimate { samples, correlation })
    }
}

/// Delay of `b` relative to `a` in seconds.
pub fn estimate_delay(a: &[f32], b: &[f32], frame_rate: f64, interp: usize, tukey_alpha: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "traces have {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    let est = DelayEstimator::new(a.len(), interp, tukey_alpha)?;
    let d = est.estimate(&est.spectrum(a), &est.spectrum(b))?;
    Ok(d.samples / frame_rate)
}
