//! IQ synthesis from displacement and Loupas 2D-autocorrelation displacement
//! estimation.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DisplacementSequence;
use crate::geom::{GridGeom, PushDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqConfig {
    /// Carrier frequency (Hz).
    #[serde(default = "IqConfig::default_f0")]
    pub f0: f64,
    /// Assumed speed of sound (m/s).
    #[serde(default = "IqConfig::default_c0")]
    pub c0: f64,
    /// Std of the additive complex noise, relative to the unit speckle scale.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub speckle_seed: u64,
}

impl IqConfig {
    fn default_f0() -> f64 {
        7.5e6
    }
    fn default_c0() -> f64 {
        1540.0
    }

    pub fn wavelength(&self) -> f64 {
        self.c0 / self.f0
    }
}

impl Default for IqConfig {
    fn default() -> Self {
        Self {
            f0: Self::default_f0(),
            c0: Self::default_c0(),
            noise_std: 0.0,
            speckle_seed: 0,
        }
    }
}

/// Complex demodulated echo over depth x lateral x time.
///
/// Frame 0 is a reference acquired before the push (zero displacement);
/// frames `1..=n` correspond to the `n` recorded displacement frames.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSequence {
    pub geom: GridGeom,
    /// Number of frames including the reference frame.
    pub frames: usize,
    pub frame_rate: f64,
    pub push: PushDescriptor,
    pub f0: f64,
    pub c0: f64,
    pub data: Vec<Complex<f32>>,
}

impl IqSequence {
    #[inline]
    pub fn at(&self, d: usize, l: usize, t: usize) -> Complex<f32> {
        self.data[(d * self.geom.lateral_px + l) * self.frames + t]
    }
}

/// Phase-modulates a frozen speckle field with the axial displacement:
/// `IQ(t) = s exp(i (phi0 + 4 pi f0 u(t) / c0)) + noise`, with Rayleigh `s`
/// and uniform `phi0` per pixel.
pub fn synthesize_iq(seq: &DisplacementSequence, cfg: &IqConfig) -> Result<IqSequence> {
    if !(cfg.f0 > 0.0 && cfg.c0 > 0.0) {
        return Err(Error::invalid("iq", "f0 and c0 must be > 0"));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::invalid("iq.noise_std", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.speckle_seed);
    let k = 4.0 * PI * cfg.f0 / cfg.c0;
    let frames = seq.frames + 1;
    let g = seq.geom;
    let mut data = Vec::with_capacity(g.pixels() * frames);
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).unwrap());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.speckle_seed ^ 0x9e37_79b9_7f4a_7c15);
    for d in 0..g.depth_px {
        for l in 0..g.lateral_px {
            // Rayleigh(sigma = 1) magnitude by inversion, uniform phase
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let s = (-2.0 * u.ln()).sqrt();
            let phi0 = rng.gen_range(-PI..PI);
            let trace = seq.trace(d, l);
            for t in 0..frames {
                let disp = if t == 0 { 0.0 } else { trace[t - 1] as f64 };
                let mut z = Complex::from_polar(s, phi0 + k * disp);
                if let Some(n) = &noise {
                    z += Complex::new(n.sample(&mut noise_rng), n.sample(&mut noise_rng));
                }
                data.push(Complex::new(z.re as f32, z.im as f32));
            }
        }
    }
    Ok(IqSequence {
        geom: g,
        frames,
        frame_rate: seq.frame_rate,
        push: seq.push,
        f0: cfg.f0,
        c0: cfg.c0,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoupasOutput {
    pub sequence: DisplacementSequence,
    /// Pixels where at least one inter-frame correlation had near-zero magnitude.
    pub flagged: Vec<bool>,
}

/// Axial displacement relative to the reference frame from the lag-one
/// autocorrelation phase, summed over `axial_kernel` depth samples and
/// `ensemble` frames: `du = c0 arg(R) / (4 pi f0)`.
pub fn loupas_displacement(iq: &IqSequence, axial_kernel: usize, ensemble: usize) -> Result<LoupasOutput> {
    if axial_kernel == 0 || axial_kernel.is_multiple_of(2) {
        return Err(Error::invalid("axial_kernel", "must be odd and >= 1"));
    }
    if ensemble < 2 {
        return Err(Error::invalid("ensemble", "must be >= 2"));
    }
    if iq.frames < 2 {
        return Err(Error::invalid("iq.frames", "need a reference and at least one frame"));
    }
    let g = iq.geom;
    let nt = iq.frames;
    let transitions = nt - 1;
    let (nd, nl) = (g.depth_px, g.lateral_px);

    // lag-one products per pixel and transition, plus lag-zero power
    let mut lag1 = vec![Complex::<f64>::new(0.0, 0.0); nd * nl * transitions];
    let mut power = vec![0.0f64; nd * nl * transitions];
    for p in 0..nd * nl {
        let z = &iq.data[p * nt..(p + 1) * nt];
        for k in 0..transitions {
            let a = Complex::new(z[k].re as f64, z[k].im as f64);
            let b = Complex::new(z[k + 1].re as f64, z[k + 1].im as f64);
            lag1[p * transitions + k] = a.conj() * b;
            power[p * transitions + k] = 0.5 * (a.norm_sqr() + b.norm_sqr());
        }
    }

    let half_ax = axial_kernel / 2;
    let pairs = ensemble - 1;
    let scale = iq.c0 / (4.0 * PI * iq.f0);
    let out_frames = transitions;
    let mut out = vec![0.0f32; nd * nl * out_frames];
    let mut flagged = vec![false; nd * nl];
    for d in 0..nd {
        let d0 = d.saturating_sub(half_ax);
        let d1 = (d + half_ax).min(nd - 1);
        for l in 0..nl {
            let mut acc = 0.0f64;
            for k in 0..transitions {
                let start = k.saturating_sub((pairs - 1) / 2).min(transitions.saturating_sub(pairs));
                let end = (start + pairs).min(transitions);
                let mut r = Complex::new(0.0, 0.0);
                let mut pw = 0.0;
                for dd in d0..=d1 {
                    let base = (dd * nl + l) * transitions;
                    for n in start..end {
                        r += lag1[base + n];
                        pw += power[base + n];
                    }
                }
                let du = if r.norm() <= 1e-6 * pw || pw == 0.0 {
                    flagged[d * nl + l] = true;
                    0.0
                } else {
                    scale * r.arg()
                };
                acc += du;
                out[(d * nl + l) * out_frames + k] = acc as f32;
            }
        }
    }
    let sequence = DisplacementSequence::new(g, out_frames, iq.frame_rate, iq.push, out)?;
    Ok(LoupasOutput { sequence, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_sequence(step: f32, at_frame: usize) -> DisplacementSequence {
        let g = GridGeom::with_default_pitch(12, 10).unwrap();
        DisplacementSequence::from_fn(g, 8, 7000.0, PushDescriptor::centered(&g), |_, _, t| {
            if t >= at_frame {
                step
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn zero_displacement_gives_constant_iq() {
        let s = step_sequence(0.0, 0);
        let iq = synthesize_iq(&s, &IqConfig::default()).unwrap();
        for d in 0..12 {
            for l in 0..10 {
                let z0 = iq.at(d, l, 0);
                for t in 1..iq.frames {
                    assert_eq!(iq.at(d, l, t), z0);
                }
            }
        }
    }

    #[test]
    fn eighth_wavelength_step_is_quarter_turn() {
        let cfg = IqConfig::default();
        let lambda = cfg.wavelength();
        assert!((lambda - 205.333e-6).abs() < 1e-9);
        let s = step_sequence((lambda / 8.0) as f32, 3);
        let iq = synthesize_iq(&s, &cfg).unwrap();
        for d in 0..12 {
            for l in 0..10 {
                // frame index 3 in the sequence is IQ frame 4
                let a = iq.at(d, l, 3);
                let b = iq.at(d, l, 4);
                let dphi =
                    (Complex::new(a.re as f64, a.im as f64).conj() * Complex::new(b.re as f64, b.im as f64)).arg();
                assert!((dphi - PI / 2.0).abs() < 1e-5, "{dphi}");
            }
        }
    }

    #[test]
    fn same_seed_same_speckle() {
        let s = step_sequence(1e-6, 2);
        let cfg = IqConfig {
            speckle_seed: 5,
            ..IqConfig::default()
        };
        assert_eq!(synthesize_iq(&s, &cfg).unwrap(), synthesize_iq(&s, &cfg).unwrap());
        let other = IqConfig { speckle_seed: 6, ..cfg };
        assert_ne!(synthesize_iq(&s, &cfg).unwrap(), synthesize_iq(&s, &other).unwrap());
    }

    #[test]
    fn recovers_ten_micron_step() {
        let s = step_sequence(10e-6, 4);
        let iq = synthesize_iq(&s, &IqConfig::default()).unwrap();
        let out = loupas_displacement(&iq, 5, 2).unwrap();
        for d in 0..12 {
            for l in 0..10 {
                for t in 0..8 {
                    let expect = if t >= 4 { 10e-6 } else { 0.0 };
                    assert!((out.sequence.at(d, l, t) as f64 - expect).abs() < 0.2e-6);
                }
            }
        }
        assert!(out.flagged.iter().all(|&f| !f));
    }

    #[test]
    fn constant_iq_gives_zero_displacement() {
        let g = GridGeom::with_default_pitch(4, 4).unwrap();
        let iq = IqSequence {
            geom: g,
            frames: 6,
            frame_rate: 7000.0,
            push: PushDescriptor::centered(&g),
            f0: 7.5e6,
            c0: 1540.0,
            data: vec![Complex::new(0.3, -0.7); 16 * 6],
        };
        let out = loupas_displacement(&iq, 3, 3).unwrap();
        assert!(out.sequence.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn displacement_beyond_quarter_wavelength_wraps() {
        let lambda = IqConfig::default().wavelength();
        let inside = step_sequence((0.24 * lambda) as f32, 2);
        let iq = synthesize_iq(&inside, &IqConfig::default()).unwrap();
        let u = loupas_displacement(&iq, 1, 2).unwrap().sequence.at(5, 5, 3) as f64;
        assert!((u - 0.24 * lambda).abs() < 1e-8);
        let beyond = step_sequence((0.30 * lambda) as f32, 2);
        let iq = synthesize_iq(&beyond, &IqConfig::default()).unwrap();
        let u = loupas_displacement(&iq, 1, 2).unwrap().sequence.at(5, 5, 3) as f64;
        assert!((u - (0.30 - 0.5) * lambda).abs() < 1e-8, "{u}");
    }

    #[test]
    fn zero_magnitude_pixels_are_flagged() {
        let g = GridGeom::with_default_pitch(3, 3).unwrap();
        let mut data = vec![Complex::new(1.0f32, 0.0); 9 * 4];
        for v in data[4 * 4..5 * 4].iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        let iq = IqSequence {
            geom: g,
            frames: 4,
            frame_rate: 7000.0,
            push: PushDescriptor::centered(&g),
            f0: 7.5e6,
            c0: 1540.0,
            data,
        };
        let out = loupas_displacement(&iq, 1, 2).unwrap();
        assert!(out.flagged[4]);
        assert_eq!(out.flagged.iter().filter(|&&f| f).count(), 1);
    }

    #[test]
    fn kernel_arguments_validated() {
        let s = step_sequence(0.0, 0);
        let iq = synthesize_iq(&s, &IqConfig::default()).unwrap();
        assert!(loupas_displacement(&iq, 4, 2).is_err());
        assert!(loupas_displacement(&iq, 3, 1).is_err());
    }
}
