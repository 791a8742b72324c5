//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use swei_core::cnn::io::{history_csv, load_model, save_model};
use swei_core::cnn::{finetune, predict_map, train, ArchSpec, TrainConfig, TrainSet};
use swei_core::eval::{
    bench_throughput, dice, mae, make_splits, mean_threshold, summarize, DatasetLayout, Role, SplitMode, SplitPlan,
};
use swei_core::field::ElasticityMap;
use swei_core::phantom::{render_elasticity_map, PhantomSpec};
use swei_core::swd::{read_dataset, read_maps, write_dataset, write_maps, DatasetRecord, Label, MapRecord, RecordMeta};
use swei_core::tof::{fuse_pushes, tof_velocity, velocity_to_young, TofConfig};
use swei_core::wavesim::{acquire, AcquisitionPlan, SimConfig};

use crate::config::{load, sha256_hex};
use crate::error::{io_err, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::render::{parse_range, to_csv, to_pgm};
use crate::{Command, SplitKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomEntry {
    pub id: String,
    /// Stiffness rank used by split plans.
    #[serde(default)]
    pub concentration: u32,
    pub spec: PhantomSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomFile {
    pub phantoms: Vec<PhantomEntry>,
}

/// Acquisition settings; unset fields keep the simulator defaults for the
/// phantom geometry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub plan: AcquisitionPlan,
    pub seed: u64,
    pub noise_std: Option<f64>,
    pub push_amplitude: Option<f64>,
    /// Push depth (m).
    pub push_depth: Option<f64>,
    pub push_halfwidth_px: Option<usize>,
    pub start_delay: Option<f64>,
    pub frames: Option<usize>,
    pub frame_rate: Option<f64>,
    pub cfl_factor: Option<f64>,
    pub absorbing_width: Option<usize>,
    pub absorbing_strength: Option<f64>,
}

impl SimulateConfig {
    pub fn sim_config(&self, map: &ElasticityMap, phantom_index: usize) -> SimConfig {
        let mut c = SimConfig::new(map.geom);
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            noise_std => c.noise_std,
            push_amplitude => c.push_amplitude,
            push_depth => c.push.depth_extent,
            push_halfwidth_px => c.push.element_halfwidth_px,
            start_delay => c.push.start_delay,
            frames => c.frames,
            frame_rate => c.frame_rate,
            cfl_factor => c.cfl_factor,
            absorbing_width => c.absorbing_width,
            absorbing_strength => c.absorbing_strength
        );
        c.seed = self.seed.wrapping_add(phantom_index as u64 * 1_000_003);
        c
    }
}

fn label_for(map: &ElasticityMap) -> Label {
    match map.uniform_value() {
        Some(v) => Label::Homogeneous(v as f64),
        None => Label::Map(map.clone()),
    }
}

fn optional_config<T: for<'de> Deserialize<'de> + Default>(
    path: Option<&Path>,
    role: &str,
    manifest: &mut RunManifest,
) -> CliResult<T> {
    match path {
        Some(p) => {
            let (cfg, hash) = load(p)?;
            manifest.config_hashes.insert(role.to_string(), hash);
            manifest.inputs.push(p.to_path_buf());
            Ok(cfg)
        }
        None => Ok(T::default()),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn dispatch(command: Command) -> CliResult<RunManifest> {
    let start = Instant::now();
    let (mut manifest, main_out) = match command {
        Command::Phantom { config, out } => (cmd_phantom(&config, &out)?, out),
        Command::Simulate { phantom, config, out } => (cmd_simulate(&phantom, &config, &out)?, out),
        Command::Tof {
            input,
            config,
            out,
            per_push,
        } => (cmd_tof(&input, config.as_deref(), &out, per_push)?, out),
        Command::Train {
            data,
            arch,
            config,
            out,
            history,
            split,
            fold,
            init,
            finetune_epochs,
        } => (
            cmd_train(TrainArgs {
                data: &data,
                arch: arch.as_deref(),
                config: config.as_deref(),
                out: &out,
                history: history.as_deref(),
                split: split.as_deref(),
                fold,
                init: init.as_deref(),
                finetune_epochs,
            })?,
            out,
        ),
        Command::Predict {
            model,
            input,
            out,
            stride,
            window,
        } => (cmd_predict(&model, &input, &out, stride, window)?, out),
        Command::Eval {
            pred,
            truth,
            out,
            threshold,
        } => (cmd_eval(&pred, &truth, &out, threshold)?, out),
        Command::Bench {
            model,
            window,
            n,
            frames,
            seed,
            out,
        } => (cmd_bench(&model, window, n, frames, seed, &out)?, out),
        Command::Render { map, index, out, range } => (cmd_render(&map, index, &out, &range)?, out),
        Command::Split {
            layout,
            mode,
            folds,
            seed,
            out,
        } => (cmd_split(&layout, mode, folds, seed, &out)?, out),
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&main_out)?;
    Ok(manifest)
}

pub fn cmd_phantom(config: &Path, out: &Path) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("phantom");
    let (file, hash): (PhantomFile, _) = load(config)?;
    m.config_hashes.insert("phantom".into(), hash);
    m.inputs.push(config.to_path_buf());
    let mut maps = Vec::with_capacity(file.phantoms.len());
    for p in &file.phantoms {
        p.spec.validate()?;
        maps.push(MapRecord {
            name: "phantom".into(),
            meta: RecordMeta {
                phantom_id: p.id.clone(),
                concentration: p.concentration,
                position: 0,
                push: 0,
            },
            map: render_elasticity_map(&p.spec),
        });
    }
    write_maps(&maps, out)?;
    m.outputs.push(out.to_path_buf());
    Ok(m)
}

pub fn cmd_simulate(phantom: &Path, config: &Path, out: &Path) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("simulate");
    let (cfg, hash): (SimulateConfig, _) = load(config)?;
    m.config_hashes.insert("simulate".into(), hash);
    m.seeds.insert("simulate".into(), cfg.seed);
    m.inputs.extend([phantom.to_path_buf(), config.to_path_buf()]);
    let phantoms = read_maps(phantom)?;
    let mut records = Vec::new();
    for (i, p) in phantoms.iter().enumerate() {
        let sim = cfg.sim_config(&p.map, i);
        records.extend(acquire(
            &p.map,
            &sim,
            &cfg.plan,
            &p.meta.phantom_id,
            p.meta.concentration,
            &label_for(&p.map),
        )?);
    }
    write_dataset(&records, out)?;
    m.outputs.push(out.to_path_buf());
    Ok(m)
}

/// Groups records by acquisition (phantom and position) in first-seen order.
fn acquisitions(records: &[DatasetRecord]) -> Vec<Vec<&DatasetRecord>> {
    let mut groups: Vec<Vec<&DatasetRecord>> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|g| g[0].meta.phantom_id == r.meta.phantom_id && g[0].meta.position == r.meta.position)
        {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    groups
}

pub fn cmd_tof(input: &Path, config: Option<&Path>, out: &Path, per_push: bool) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("tof");
    let cfg: TofConfig = optional_config(config, "tof", &mut m)?;
    cfg.validate()?;
    m.inputs.push(input.to_path_buf());
    let records = read_dataset(input)?;
    let mut maps = Vec::new();
    for group in acquisitions(&records) {
        let mut singles = Vec::with_capacity(group.len());
        for r in &group {
            let e = velocity_to_young(&tof_velocity(&r.sequence, &cfg, r.meta.push)?, &cfg);
            if per_push {
                maps.push(MapRecord {
                    name: "tof_push".into(),
                    meta: r.meta.clone(),
                    map: e.clone(),
                });
            }
            singles.push(e);
        }
        maps.push(MapRecord {
            name: "tof".into(),
            meta: RecordMeta {
                push: 0,
                ..group[0].meta.clone()
            },
            map: fuse_pushes(&singles, &cfg)?,
        });
    }
    write_maps(&maps, out)?;
    m.outputs.push(out.to_path_buf());
    Ok(m)
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub arch: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub history: Option<&'a Path>,
    pub split: Option<&'a Path>,
    pub fold: usize,
    pub init: Option<&'a Path>,
    pub finetune_epochs: usize,
}

pub fn cmd_train(a: TrainArgs<'_>) -> CliResult<RunManifest> {
    let mut m = RunManifest::new(if a.init.is_some() { "finetune" } else { "train" });
    let arch: ArchSpec = optional_config(a.arch, "arch", &mut m)?;
    let cfg: TrainConfig = optional_config(a.config, "train", &mut m)?;
    m.seeds.insert("train".into(), cfg.seed);
    m.inputs.push(a.data.to_path_buf());
    let records = read_dataset(a.data)?;
    let (train_set, val_set): (Vec<DatasetRecord>, Vec<DatasetRecord>) = match a.split {
        Some(path) => {
            let (plan, hash): (SplitPlan, _) = load(path)?;
            m.config_hashes.insert("split".into(), hash);
            m.inputs.push(path.to_path_buf());
            if a.fold >= plan.folds.len() {
                return Err(CliError::Usage(format!(
                    "fold {} requested, plan has {}",
                    a.fold,
                    plan.folds.len()
                )));
            }
            let pick = |role| plan.select(a.fold, role, &records).into_iter().cloned().collect();
            (pick(Role::Train), pick(Role::Val))
        }
        None => (records, Vec::new()),
    };
    let set = TrainSet {
        train: &train_set,
        val: &val_set,
    };
    let output = match a.init {
        Some(init) => {
            m.inputs.push(init.to_path_buf());
            finetune(&load_model(init)?, set, &cfg, a.finetune_epochs)?
        }
        None => train(set, arch, &cfg)?,
    };
    save_model(&output.model, a.out)?;
    let history = a
        .history
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar(a.out, ".history.csv"));
    fs::write(&history, history_csv(&output.history)).map_err(io_err(&history))?;
    m.outputs.extend([a.out.to_path_buf(), history]);
    Ok(m)
}

pub fn cmd_predict(
    model: &Path,
    input: &Path,
    out: &Path,
    stride: usize,
    window: Option<usize>,
) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("predict");
    m.inputs.extend([model.to_path_buf(), input.to_path_buf()]);
    let net = load_model(model)?;
    let window = window
        .or(net.window)
        .ok_or_else(|| CliError::Usage("model has no training window; pass --window".into()))?;
    let records = read_dataset(input)?;
    let mut maps = Vec::with_capacity(records.len());
    for r in &records {
        maps.push(MapRecord {
            name: "cnn".into(),
            meta: r.meta.clone(),
            map: predict_map(&net, &r.sequence, window, stride, None)?,
        });
    }
    write_maps(&maps, out)?;
    m.outputs.push(out.to_path_buf());
    Ok(m)
}

/// Background is the most frequent truth value; with exactly one other
/// value present, returns `(background, inclusion)`.
fn two_phase(truth: &ElasticityMap) -> Option<(f64, f64)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in truth.data().iter().filter(|v| !v.is_nan()) {
        *counts.entry(v.to_bits()).or_default() += 1;
    }
    if counts.len() != 2 {
        return None;
    }
    let mut v: Vec<(usize, f32)> = counts.into_iter().map(|(b, n)| (n, f32::from_bits(b))).collect();
    v.sort_by_key(|a| std::cmp::Reverse(a.0));
    Some((v[0].1 as f64, v[1].1 as f64))
}

pub fn cmd_eval(pred: &Path, truth: &Path, out: &Path, threshold: Option<f64>) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("eval");
    m.inputs.extend([pred.to_path_buf(), truth.to_path_buf()]);
    let preds = read_maps(pred)?;
    let truths = read_maps(truth)?;
    let mut csv = String::from(
        "name,phantom_id,concentration,position,push,mae_pa,mae_std_pa,present_fraction,dice,threshold_pa\n",
    );
    let mut reports = Vec::new();
    let mut dices = Vec::new();
    for p in &preds {
        let t = truths
            .iter()
            .find(|t| t.meta.phantom_id == p.meta.phantom_id)
            .ok_or_else(|| CliError::Usage(format!("no ground truth for phantom `{}`", p.meta.phantom_id)))?;
        // a map with no present pixels gets an empty row and stays out of the summary
        let r = match mae(&p.map, &t.map, None) {
            Ok(r) => Some(r),
            Err(swei_core::Error::EmptyMask(_)) => None,
            Err(e) => return Err(e.into()),
        };
        reports.extend(r);
        let phases = two_phase(&t.map);
        let thr = threshold.or(phases.map(|(b, i)| mean_threshold(b, i)));
        let d = match thr {
            Some(thr) => {
                let mask: Vec<bool> = t.map.data().iter().map(|&v| v as f64 >= thr).collect();
                Some(dice(&p.map, &mask, thr)?)
            }
            None => None,
        };
        if let Some(d) = d {
            dices.push(d);
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            p.name,
            p.meta.phantom_id,
            p.meta.concentration,
            p.meta.position,
            p.meta.push,
            opt(r.map(|r| r.mean)),
            opt(r.map(|r| r.std)),
            r.map_or(0.0, |r| r.present_fraction),
            opt(d),
            opt(thr)
        )
        .expect("write to string");
    }
    fs::write(out, csv).map_err(io_err(out))?;
    let summary = json!({
        "mae": if reports.is_empty() { None } else { Some(summarize(&reports)?) },
        "dice_mean": (!dices.is_empty()).then(|| dices.iter().sum::<f64>() / dices.len() as f64),
        "maps": preds.len(),
    });
    let summary_path = sidecar(out, ".summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("serializes"),
    )
    .map_err(io_err(&summary_path))?;
    m.outputs.extend([out.to_path_buf(), summary_path]);
    Ok(m)
}

pub fn cmd_bench(
    model: &Path,
    window: Option<usize>,
    n: usize,
    frames: usize,
    seed: u64,
    out: &Path,
) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("bench");
    m.inputs.push(model.to_path_buf());
    m.seeds.insert("bench".into(), seed);
    let net = load_model(model)?;
    let window = window
        .or(net.window)
        .ok_or_else(|| CliError::Usage("model has no training window; pass --window".into()))?;
    let report = bench_throughput(&net, window, frames, n, seed)?;
    let text = serde_json::to_string_pretty(&report).expect("serializes");
    println!("{text}");
    fs::write(out, text).map_err(io_err(out))?;
    m.outputs.push(out.to_path_buf());
    Ok(m)
}

pub fn cmd_render(map: &Path, index: usize, out: &Path, range: &str) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("render");
    m.inputs.push(map.to_path_buf());
    let maps = read_maps(map)?;
    let rec = maps
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("map index {index} out of {} maps", maps.len())))?;
    let is_csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        fs::write(out, to_csv(&rec.map)).map_err(io_err(out))?;
    } else {
        let (lo, hi) = parse_range(range)?;
        let (img, mask) = to_pgm(&rec.map, lo * 1e3, hi * 1e3)?;
        let mask_path = out.with_extension("mask.pgm");
        fs::write(out, img).map_err(io_err(out))?;
        fs::write(&mask_path, mask).map_err(io_err(&mask_path))?;
        m.outputs.push(mask_path);
    }
    m.outputs.insert(0, out.to_path_buf());
    Ok(m)
}

pub fn cmd_split(layout: &Path, mode: SplitKind, folds: usize, seed: u64, out: &Path) -> CliResult<RunManifest> {
    let mut m = RunManifest::new("split");
    let (l, hash): (DatasetLayout, _) = load(layout)?;
    m.config_hashes.insert("layout".into(), hash);
    m.seeds.insert("split".into(), seed);
    m.inputs.push(layout.to_path_buf());
    let mode = match mode {
        SplitKind::Folds => SplitMode::PositionFolds { folds },
        SplitKind::LeaveOneOut => SplitMode::LeaveOneConcentrationOut,
    };
    let plan = make_splits(&l, mode, seed)?;
    let text = serde_json::to_string_pretty(&plan).expect("serializes");
    fs::write(out, &text).map_err(io_err(out))?;
    m.config_hashes.insert("plan".into(), sha256_hex(text.as_bytes()));
    m.outputs.push(out.to_path_buf());
    Ok(m)
}
