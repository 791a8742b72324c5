//! Training loop, learning-rate schedule and fine-tuning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::layers::mse_loss;
use super::net::Model;
use super::tensor::Tensor5;
use super::ArchSpec;
use crate::error::{Error, Result};
use crate::field::{extract_window, normalize_window};
use crate::geom::{Pixel, Roi};
use crate::swd::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs trained at the initial rate before halving starts.
    pub lr_hold_epochs: usize,
    pub lr_halve_every: usize,
    /// Spatial window size (px); windows span all frames.
    pub window: usize,
    /// Sampling region; the default 121 x 181 px region when absent.
    pub roi: Option<Roi>,
    /// Fixed validation windows drawn per validation sequence.
    pub val_windows: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch: 250,
            lr: 1e-4,
            lr_hold_epochs: 150,
            lr_halve_every: 50,
            window: 33,
            roi: None,
            val_windows: 4,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr", "must be finite and > 0"));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::invalid("lr_halve_every", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.augment.probability) {
            return Err(Error::invalid("augment.probability", "must lie in [0, 1]"));
        }
        crate::field::check_window_size(self.window)
    }
}

/// Learning rate for a 1-based epoch: `lr` through `lr_hold_epochs`, then
/// halved at the start of every `lr_halve_every` further epochs.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= cfg.lr_hold_epochs {
        return cfg.lr;
    }
    let halvings = (epoch - cfg.lr_hold_epochs - 1) / cfg.lr_halve_every + 1;
    cfg.lr / 2f64.powi(halvings as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error in kPa^2.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Checkpoint with the lowest validation loss (training loss without
    /// validation data).
    pub model: Model<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Labeled sequences for training and validation.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub train: &'a [DatasetRecord],
    pub val: &'a [DatasetRecord],
}

struct Sample {
    window: Vec<f32>,
    label: f32,
}

fn roi_for(rec: &DatasetRecord, cfg: &TrainConfig) -> Result<Roi> {
    let roi = cfg.roi.unwrap_or_else(|| Roi::default_for(&rec.sequence.geom));
    roi.validate(&rec.sequence.geom)?;
    Ok(roi)
}

/// Label in kPa at a window center.
fn label_kpa(rec: &DatasetRecord, px: Pixel) -> Result<f32> {
    rec.label
        .at(px)
        .map(|e| (e / 1e3) as f32)
        .ok_or_else(|| Error::invalid("label", format!("no label at {px:?}")))
}

fn cut(rec: &DatasetRecord, px: Pixel, cfg: &TrainConfig, aug: Option<u64>) -> Result<Sample> {
    let mut w = normalize_window(&extract_window(&rec.sequence, px, cfg.window)?);
    if let Some(seed) = aug {
        augment(&mut w, &cfg.augment, &mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Sample {
        window: w.data,
        label: label_kpa(rec, px)?,
    })
}

fn draw_center<R: Rng>(rec: &DatasetRecord, cfg: &TrainConfig, rng: &mut R) -> Result<Pixel> {
    let (d, l) = roi_for(rec, cfg)?.window_centers(cfg.window)?;
    Ok(Pixel::new(rng.gen_range(d), rng.gen_range(l)))
}

fn stack(samples: &[Sample], window: usize, frames: usize) -> Result<(Tensor5<f32>, Vec<f32>)> {
    let data = samples.iter().flat_map(|s| s.window.iter().copied()).collect();
    let x = Tensor5::from_vec([samples.len(), 1, window, window, frames], data)?;
    Ok((x, samples.iter().map(|s| s.label).collect()))
}

fn frames_of(records: &[DatasetRecord]) -> Result<usize> {
    let frames = records.first().ok_or(Error::EmptyDataset)?.sequence.frames;
    if records.iter().any(|r| r.sequence.frames != frames) {
        return Err(Error::ShapeMismatch("all sequences need the same frame count".into()));
    }
    Ok(frames)
}

/// Mean and standard deviation (kPa) of the labels inside each region.
fn label_stats(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let (mut n, mut s, mut q) = (0.0, 0.0, 0.0);
    for rec in records {
        let roi = roi_for(rec, cfg)?;
        for d in roi.depth_start..roi.depth_start + roi.depth_len {
            for l in roi.lateral_start..roi.lateral_start + roi.lateral_len {
                if let Some(e) = rec.label.at(Pixel::new(d, l)) {
                    let k = e / 1e3;
                    n += 1.0;
                    s += k;
                    q += k * k;
                }
            }
        }
    }
    if n == 0.0 {
        return Err(Error::EmptyDataset);
    }
    let mean = s / n;
    let std = (q / n - mean * mean).max(0.0).sqrt();
    Ok((
        mean,
        if std > 1e-6 * mean.abs().max(1.0) {
            std
        } else {
            mean.abs().max(1.0)
        },
    ))
}

fn val_samples(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a11);
    let mut out = Vec::new();
    for rec in records {
        for _ in 0..cfg.val_windows {
            let px = draw_center(rec, cfg, &mut rng)?;
            out.push(cut(rec, px, cfg, None)?);
        }
    }
    Ok(out)
}

/// Inference-mode MSE (kPa^2) over fixed samples.
fn eval_loss(model: &Model<f32>, samples: &[Sample], cfg: &TrainConfig, frames: usize) -> Result<f64> {
    let mut sq = 0.0;
    for chunk in samples.chunks(cfg.batch.max(1)) {
        let (x, y) = stack(chunk, cfg.window, frames)?;
        let p = model.predict(&x)?;
        sq += p.iter().zip(&y).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok(sq / samples.len() as f64)
}

/// One pass over the training sequences with one random window each.
fn run_epoch(
    model: &mut Model<f32>,
    records: &[DatasetRecord],
    cfg: &TrainConfig,
    frames: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut plan = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        plan.push((i, draw_center(rec, cfg, rng)?, rng.gen::<u64>()));
    }
    plan.shuffle(rng);
    let mut total = 0.0;
    for chunk in plan.chunks(cfg.batch) {
        let samples = chunk
            .par_iter()
            .map(|&(i, px, seed)| cut(&records[i], px, cfg, Some(seed)))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = stack(&samples, cfg.window, frames)?;
        let (pred, cache) = model.forward_train(&x)?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        let (grads, _) = model.backward(&cache, &grad)?;
        let mut params = std::mem::take(&mut model.params);
        model.adam.update(&mut params, &grads, lr);
        model.params = params;
        model.update_running(&cache);
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

fn fit(
    mut model: Model<f32>,
    set: TrainSet<'_>,
    cfg: &TrainConfig,
    epochs: usize,
    lr_of: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let frames = frames_of(set.train)?;
    if !set.val.is_empty() && frames_of(set.val)? != frames {
        return Err(Error::ShapeMismatch("validation frame count differs".into()));
    }
    model.arch.validate_for_window(cfg.window)?;
    let val = val_samples(set.val, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    for epoch in 1..=epochs {
        let lr = lr_of(epoch);
        let train_loss = run_epoch(&mut model, set.train, cfg, frames, lr, &mut rng)?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(eval_loss(&model, &val, cfg, frames)?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if score.is_finite() && score < best.0 {
            best = (score, epoch, model.clone());
        }
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainOutput {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}

/// Trains a fresh network. Each epoch draws one random window inside the
/// region from every training sequence; labels are regressed in kPa.
pub fn train(set: TrainSet<'_>, arch: ArchSpec, cfg: &TrainConfig) -> Result<TrainOutput> {
    if set.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut model = Model::<f32>::new(arch, cfg.seed)?;
    let (offset, scale) = label_stats(set.train, cfg)?;
    model.label_offset = offset;
    model.label_scale = scale;
    model.window = Some(cfg.window);
    fit(model, set, cfg, cfg.epochs, |e| lr_at_epoch(cfg, e), cfg.seed)
}

/// Continues training at the final scheduled learning rate. With zero
/// epochs the model is returned unchanged.
pub fn finetune(model: &Model<f32>, set: TrainSet<'_>, cfg: &TrainConfig, epochs: usize) -> Result<TrainOutput> {
    if set.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if epochs == 0 {
        return Ok(TrainOutput {
            model: model.clone(),
            history: Vec::new(),
            best_epoch: 0,
        });
    }
    let lr = lr_at_epoch(cfg, cfg.epochs.max(1));
    fit(model.clone(), set, cfg, epochs, |_| lr, cfg.seed ^ 0xf1e7_u64)
}
