use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rac_core::ann::{Probe, DEFAULT_KMEANS_ITERS};
use rac_core::datagen::ValueMode;
use rac_core::train::{Mode, ShotThresholds};

#[derive(Debug, Parser)]
#[command(name = "rac", version, about = "Retrieval-augmented long-tail classification")]
pub struct Cli {
    /// Worker thread cap (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log to stderr: -v for progress, -vv for detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a long-tailed train/eval split plus a memory store.
    GenData(GenDataArgs),
    /// Build an IVF index over a memory store.
    BuildIndex(BuildIndexArgs),
    /// Precompute neighbor lists for a query set.
    PrecomputeKnn(PrecomputeArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Evaluate a checkpoint before and after adding memory items, without retraining.
    GrowMemory(GrowArgs),
    /// Compare analytic and finite-difference gradients on random instances.
    GradCheck(GradCheckArgs),
    /// Dump per-layer attention over one query's neighbors.
    Trace(TraceArgs),
}

/// `default`, `all`, or a list count.
pub fn parse_probe(s: &str) -> Result<Probe, String> {
    match s {
        "default" => Ok(Probe::Default),
        "all" => Ok(Probe::All),
        _ => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Probe::Lists(n)),
            _ => Err(format!("expected 'default', 'all' or a positive count, got {s:?}")),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Lists {
    Auto,
    Count(usize),
}

pub fn parse_lists(s: &str) -> Result<Lists, String> {
    if s == "auto" {
        return Ok(Lists::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Lists::Count(n)),
        _ => Err(format!("expected 'auto' or a positive count, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ShotArgs {
    /// Classes with more training examples than this are many-shot.
    #[arg(long, default_value_t = 100)]
    pub many_min: usize,
    /// Classes with fewer training examples than this are low-shot.
    #[arg(long, default_value_t = 20)]
    pub low_max: usize,
}

impl ShotArgs {
    pub fn thresholds(self) -> ShotThresholds {
        ShotThresholds {
            many_min: self.many_min,
            low_max: self.low_max,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Training examples of the largest class.
    #[arg(long, default_value_t = 100)]
    pub head: usize,
    /// Training examples of the smallest class.
    #[arg(long, default_value_t = 5)]
    pub tail: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Per-coordinate noise of examples around their class prototype.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 50)]
    pub eval_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50_000)]
    pub memory_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub relevant_fraction: f64,
    #[arg(long, default_value_t = 0.99)]
    pub distractor_fraction: f64,
    /// Comma-separated classes that receive relevant items (default: all).
    #[arg(long, value_delimiter = ',')]
    pub relevant_classes: Option<Vec<usize>>,
    /// `text_proxy` or `echo_visual`.
    #[arg(long, default_value = "text_proxy")]
    pub value_mode: ValueMode,
    #[arg(long, default_value_t = 64)]
    pub value_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub key_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub value_noise: f64,
    /// Seed of the memory items (default: seed + 1).
    #[arg(long)]
    pub memory_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Number of inverted lists, or `auto` for round(sqrt(count)).
    #[arg(long, default_value = "auto", value_parser = parse_lists)]
    pub lists: Lists,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    pub kmeans_iters: usize,
    /// Index file; the config echo goes to `<out>.config.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrievalArgs {
    /// Memory store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// IVF index over the store; exact search when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Lists visited per query: `default`, `all`, or a count.
    #[arg(long, default_value = "default", value_parser = parse_probe)]
    pub probe: Probe,
}

#[derive(Debug, Args, Serialize)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Store whose keys are the queries (for example a dataset's train.racm).
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Query i never retrieves memory row i (queries and memory are the same set).
    #[arg(long)]
    pub exclude_self: bool,
    /// Cache file; the config echo goes to `<out>.config.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Precomputed neighbors of the training set; computed in memory when absent.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Whether the cache was built with self-exclusion.
    #[arg(long)]
    pub exclude_self: bool,
    /// linear, mlp, mean_knn or mam.
    #[arg(long, default_value = "mam")]
    pub mode: Mode,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub wd: f64,
    /// Default: min(512, max(1, N / 10)).
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    /// Logit adjustment strength; 0 trains with plain smoothed cross-entropy.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Label smoothing.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub shots: ShotArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `train` or `eval`.
    #[arg(long, default_value = "eval")]
    pub split: String,
    /// `model.racp` from a train run; `model.json` must sit next to it.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[command(flatten)]
    pub shots: ShotArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GrowArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The memory the model was trained against.
    #[arg(long)]
    pub store: PathBuf,
    /// Items to add. When absent, relevant items are generated for the
    /// low-shot classes using the memory settings recorded by gen-data.
    #[arg(long)]
    pub extra: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub extra_per_class: usize,
    /// Comma-separated classes to grow (default: the low-shot classes).
    #[arg(long, value_delimiter = ',')]
    pub extra_classes: Option<Vec<usize>>,
    /// Default: the memory seed + 1.
    #[arg(long)]
    pub extra_seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[command(flatten)]
    pub shots: ShotArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "mam")]
    pub mode: Mode,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Query and key dimension.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub value_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Optional output directory for report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long)]
    pub query_id: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Trace file (stdout when absent); the config echo goes to `<out>.config.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
