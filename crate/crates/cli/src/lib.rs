//! Experiment runner: phantoms, acquisitions, estimators, metrics and map
//! rendering, each step reading and writing SWD1 containers.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod render;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "swei", version, about = "Shear-wave elasticity experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Folds,
    LeaveOneOut,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize phantom elasticity maps.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate push acquisitions over probe positions for every phantom.
    Simulate {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time-of-flight elasticity maps, fused over the pushes of each acquisition.
    Tof {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the single-push maps.
        #[arg(long)]
        per_push: bool,
    },
    /// Train a network, or fine-tune one given with --init.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training history CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Split plan JSON selecting train and validation records.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Pretrained model to fine-tune.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        finetune_epochs: usize,
    },
    /// Pixelwise elasticity maps from a trained network.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        stride: usize,
        /// Window size; defaults to the training window stored in the model.
        #[arg(long)]
        window: Option<usize>,
    },
    /// MAE and Dice of predicted maps against phantom ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dice threshold (Pa); defaults to the mean of background and inclusion.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Inference throughput of a model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 35)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export one map as PGM (with a MISSING mask) or CSV.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// `.csv` writes raw values; anything else writes a PGM.
        #[arg(long)]
        out: PathBuf,
        /// Gray-scale range in kPa, `lo..hi`.
        #[arg(long, default_value = "0..150")]
        range: String,
    },
    /// Cross-validation split plan.
    Split {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitKind::Folds)]
        mode: SplitKind,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs a command and writes its manifest.
pub fn run(cli: Cli) -> CliResult<RunManifest> {
    commands::dispatch(cli.command)
}
