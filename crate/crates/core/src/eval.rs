//! Metrics and experiment protocol: pixelwise MAE, per-pixel spread, Dice,
//! cross-validation splits and inference throughput.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{Model, Tensor5};
use crate::error::{Error, Result};
use crate::field::{normalize_in_place, ElasticityMap};
use crate::swd::{DatasetRecord, RecordMeta};

/// Absolute-error statistics of one map against its ground truth (Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub mean: f64,
    /// Population std of the absolute error across pixels.
    pub std: f64,
    /// Present predictions over masked pixels.
    pub present_fraction: f64,
    /// Pixels that entered the statistics.
    pub count: usize,
}

/// MAE over masked pixels where both maps are present. MISSING predictions
/// are excluded and reported through `present_fraction`.
pub fn mae(pred: &ElasticityMap, truth: &ElasticityMap, mask: Option<&[bool]>) -> Result<MaeReport> {
    pred.geom.ensure_same(&truth.geom)?;
    check_mask(mask, pred.geom.pixels())?;
    let (mut selected, mut n, mut s, mut q) = (0usize, 0usize, 0.0, 0.0);
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        if mask.is_some_and(|m| !m[i]) || t.is_nan() {
            continue;
        }
        selected += 1;
        if p.is_nan() {
            continue;
        }
        let e = (p as f64 - t as f64).abs();
        n += 1;
        s += e;
        q += e * e;
    }
    if selected == 0 {
        return Err(Error::EmptyMask("no pixel selected".into()));
    }
    if n == 0 {
        return Err(Error::EmptyMask("every selected prediction is MISSING".into()));
    }
    let mean = s / n as f64;
    Ok(MaeReport {
        mean,
        std: (q / n as f64 - mean * mean).max(0.0).sqrt(),
        present_fraction: n as f64 / selected as f64,
        count: n,
    })
}

fn check_mask(mask: Option<&[bool]>, pixels: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != pixels => Err(Error::GeometryMismatch(format!(
            "mask has {} pixels, map has {pixels}",
            m.len()
        ))),
        _ => Ok(()),
    }
}

/// MAE over several acquisitions, with the spread taken both across pooled
/// pixels and across per-acquisition means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub mean: f64,
    pub pixel_std: f64,
    pub acquisition_std: f64,
    pub acquisitions: usize,
}

pub fn summarize(reports: &[MaeReport]) -> Result<MaeSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = reports.iter().map(|r| r.count as f64).sum();
    let mean = reports.iter().map(|r| r.count as f64 * r.mean).sum::<f64>() / total;
    let second = reports
        .iter()
        .map(|r| r.count as f64 * (r.std * r.std + r.mean * r.mean))
        .sum::<f64>()
        / total;
    let k = reports.len() as f64;
    let acq_mean = reports.iter().map(|r| r.mean).sum::<f64>() / k;
    let acq_var = reports.iter().map(|r| (r.mean - acq_mean).powi(2)).sum::<f64>() / k;
    Ok(MaeSummary {
        mean,
        pixel_std: (second - mean * mean).max(0.0).sqrt(),
        acquisition_std: acq_var.sqrt(),
        acquisitions: reports.len(),
    })
}

/// Per-pixel population std over maps; MISSING wherever any map is.
pub fn std_map(maps: &[ElasticityMap]) -> Result<ElasticityMap> {
    if maps.len() < 2 {
        return Err(Error::InsufficientData("std_map needs at least two maps".into()));
    }
    let g = maps[0].geom;
    for m in &maps[1..] {
        g.ensure_same(&m.geom)?;
    }
    let k = maps.len() as f64;
    let data = (0..g.pixels())
        .map(|i| {
            let vals = maps.iter().map(|m| m.data()[i] as f64);
            if vals.clone().any(f64::is_nan) {
                return f32::NAN;
            }
            let mean = vals.clone().sum::<f64>() / k;
            (vals.map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt() as f32
        })
        .collect();
    ElasticityMap::new(g, data)
}

/// Dice overlap of `pred >= threshold` with `truth_mask`. MISSING
/// predictions count as background; two empty sets give 1.
pub fn dice(pred: &ElasticityMap, truth_mask: &[bool], threshold: f64) -> Result<f64> {
    check_mask(Some(truth_mask), pred.geom.pixels())?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth_mask) {
        let hit = !p.is_nan() && p as f64 >= threshold;
        a += hit as usize;
        b += t as usize;
        inter += (hit && t) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// `(threshold, dice)` for every threshold.
pub fn dice_sweep(pred: &ElasticityMap, truth_mask: &[bool], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    thresholds
        .iter()
        .map(|&t| Ok((t, dice(pred, truth_mask, t)?)))
        .collect()
}

/// Binarization threshold between background and inclusion stiffness.
pub fn mean_threshold(background: f64, inclusion: f64) -> f64 {
    0.5 * (background + inclusion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitMode {
    /// Positions of every concentration are split into `folds` blocks; each
    /// fold holds one block out, half for validation and half for testing.
    PositionFolds { folds: usize },
    /// Each interior concentration is held out once, half validation and
    /// half test.
    LeaveOneConcentrationOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLayout {
    pub concentrations: Vec<u32>,
    pub positions: u32,
    /// Pushes never used for training.
    #[serde(default)]
    pub excluded_pushes: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub concentration: u32,
    pub position: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Held-out concentration in leave-one-out mode.
    pub held_out: Option<u32>,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub excluded_pushes: Vec<u32>,
    pub folds: Vec<Fold>,
}

impl Fold {
    pub fn role(&self, concentration: u32, position: u32) -> Option<Role> {
        self.assignments
            .iter()
            .find(|a| a.concentration == concentration && a.position == position)
            .map(|a| a.role)
    }

    pub fn count(&self, role: Role) -> usize {
        self.assignments.iter().filter(|a| a.role == role).count()
    }
}

impl SplitPlan {
    /// Role of a record in a fold; excluded pushes never train.
    pub fn role_of(&self, fold: usize, meta: &RecordMeta) -> Option<Role> {
        let role = self.folds.get(fold)?.role(meta.concentration, meta.position)?;
        if role == Role::Train && self.excluded_pushes.contains(&meta.push) {
            return None;
        }
        Some(role)
    }

    pub fn select<'a>(&self, fold: usize, role: Role, records: &'a [DatasetRecord]) -> Vec<&'a DatasetRecord> {
        records
            .iter()
            .filter(|r| self.role_of(fold, &r.meta) == Some(role))
            .collect()
    }
}

/// Deterministic split plan. Held-out blocks are `positions / folds`
/// rounded down, so leftover positions always train.
pub fn make_splits(layout: &DatasetLayout, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let mut concs = layout.concentrations.clone();
    concs.sort_unstable();
    concs.dedup();
    if concs.is_empty() || layout.positions == 0 {
        return Err(Error::TooFewPositions("empty dataset layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = layout.positions as usize;
    let folds = match mode {
        SplitMode::PositionFolds { folds } => {
            if folds == 0 || n / folds < 2 {
                return Err(Error::TooFewPositions(format!(
                    "{n} positions cannot form {folds} folds with validation and test data"
                )));
            }
            let held = n / folds;
            let orders: Vec<Vec<u32>> = concs
                .iter()
                .map(|_| {
                    let mut p: Vec<u32> = (0..layout.positions).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            (0..folds)
                .map(|f| {
                    let mut assignments = Vec::new();
                    for (&c, order) in concs.iter().zip(&orders) {
                        for (i, &p) in order.iter().enumerate() {
                            let role = if i < f * held || i >= (f + 1) * held {
                                Role::Train
                            } else if i - f * held < held / 2 {
                                Role::Val
                            } else {
                                Role::Test
                            };
                            assignments.push(Assignment {
                                concentration: c,
                                position: p,
                                role,
                            });
                        }
                    }
                    assignments.sort_by_key(|a| (a.concentration, a.position));
                    Fold {
                        held_out: None,
                        assignments,
                    }
                })
                .collect()
        }
        SplitMode::LeaveOneConcentrationOut => {
            if concs.len() < 3 {
                return Err(Error::TooFewPositions(
                    "leave-one-out needs an interior concentration".into(),
                ));
            }
            if n < 2 {
                return Err(Error::TooFewPositions(
                    "the held-out class needs validation and test positions".into(),
                ));
            }
            concs[1..concs.len() - 1]
                .iter()
                .map(|&h| {
                    let mut order: Vec<u32> = (0..layout.positions).collect();
                    order.shuffle(&mut rng);
                    let mut assignments = Vec::new();
                    for &c in &concs {
                        for (i, &p) in order.iter().enumerate() {
                            let role = match (c == h, i < n / 2) {
                                (false, _) => Role::Train,
                                (true, true) => Role::Val,
                                (true, false) => Role::Test,
                            };
                            assignments.push(Assignment {
                                concentration: c,
                                position: p,
                                role,
                            });
                        }
                    }
                    assignments.sort_by_key(|a| (a.concentration, a.position));
                    Fold {
                        held_out: Some(h),
                        assignments,
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan {
        mode,
        excluded_pushes: layout.excluded_pushes.clone(),
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub window: usize,
    pub inferences: usize,
    pub windows_per_second: f64,
    /// Median over timed batches.
    pub ms_per_window: f64,
}

const BENCH_BATCH: usize = 50;

/// Times inference of `n` random normalized windows on a single worker
/// after one warm-up batch.
pub fn bench_throughput(model: &Model<f32>, window: usize, frames: usize, n: usize, seed: u64) -> Result<BenchReport> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one inference is required"));
    }
    crate::field::check_window_size(window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = BENCH_BATCH.min(n);
    let mut data: Vec<f32> = (0..batch * window * window * frames)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    for w in data.chunks_mut(window * window * frames) {
        normalize_in_place(w);
    }
    let x = Tensor5::from_vec([batch, 1, window, window, frames], data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    let times = pool.install(|| -> Result<Vec<f64>> {
        model.predict(&x)?;
        let mut times = Vec::new();
        let mut done = 0;
        while done < n {
            let t = Instant::now();
            std::hint::black_box(model.predict(&x)?);
            times.push(t.elapsed().as_secs_f64() * 1e3 / batch as f64);
            done += batch;
        }
        Ok(times)
    })?;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let ms = sorted[sorted.len() / 2];
    Ok(BenchReport {
        window,
        inferences: times.len() * batch,
        windows_per_second: 1e3 / ms,
        ms_per_window: ms,
    })
}
