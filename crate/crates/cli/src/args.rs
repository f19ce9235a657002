use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::SEED_ENV;

#[derive(Debug, Parser)]
#[command(name = "cyclesum", version, about = "Unsupervised keyshot video summarization")]
pub struct Cli {
    /// Log filter, e.g. `info` or `cyclesum_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted ground truth.
    Synth(SynthArgs),
    /// Train on one split and write a run directory.
    Train(TrainArgs),
    /// Keyshot F-measure of checkpoints against the random baseline.
    Eval(EvalArgs),
    /// Numeric checks of the information-theoretic identities.
    VerifyMath(VerifyMathArgs),
    /// Finite-difference check of every loss term on a toy network.
    Gradcheck(GradcheckArgs),
    /// Write seeded train/test partitions for a dataset.
    Splits(SplitsArgs),
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.clip_c=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub salience: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub redundancy: Option<f64>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Splits file; generated from the seed and saved with the run when absent.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<usize>,
    /// cycle-sum | c | 1g | 2g | gf | gb
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory. Given several times, the i-th one is
    /// evaluated on split i and the report averages across splits.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<usize>,
    /// Score the ground truth itself instead of a checkpoint.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct VerifyMathArgs {
    #[arg(long, default_value_t = 100)]
    pub joints: usize,
    #[arg(long, default_value_t = 16)]
    pub max_alphabet: usize,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub grid_points: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check one term only (sparsity, prior_f, ..., cycle_b) or `total`.
    #[arg(long)]
    pub term: Option<String>,
    #[arg(long, default_value = "f64")]
    pub precision: String,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}
