//! Command-line and config-file arguments. Every flag is optional at parse
//! time so that a JSON config file can supply it; defaults are applied after
//! merging, with flags taking precedence over the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use grokking_core::datasets::OperationKind;
use grokking_core::experiments::Study;
use grokking_core::optim::Variant;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "GROK_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "grok-out";

pub fn catalogue() -> String {
    let mut s = String::from("Operations:\n");
    for k in OperationKind::ALL {
        s.push_str(&format!("  {:<22} {}\n", k.name(), k.formula()));
    }
    s.push_str("\nOptimizer variants:\n");
    for v in Variant::ALL {
        s.push_str(&format!("  {:<28} {}\n", v.name(), v.description()));
    }
    s.push_str(&format!(
        "\nOutputs go under --out-dir, else ${OUT_DIR_ENV}, else ./{DEFAULT_OUT_DIR}.\n\
         Every flag may also be given in a JSON file passed with --config, using the\n\
         flag name with underscores as key; flags override the file."
    ));
    s
}

#[derive(Debug, Parser)]
#[command(name = "grok", version, about = "Train small transformers on binary-operation tables and study when they generalize.")]
#[command(after_help = catalogue())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an operation table with its train/validation split as CSV.
    GenData(Configured<GenDataArgs>),
    /// Train one network.
    Train(Configured<TrainArgs>),
    /// Run a grid of trainings for one of the studies.
    Sweep(Configured<SweepArgs>),
    /// Measure sharpness of a trained checkpoint.
    Sharpness(Configured<SharpnessArgs>),
    /// Write output-layer rows of a trained checkpoint as CSV.
    ExportEmbeddings(Configured<ExportArgs>),
    /// Rebuild summary.csv of a sweep from its run directories.
    Report(Configured<ReportArgs>),
}

#[derive(Debug, Args)]
pub struct Configured<T: Args> {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: T,
}

impl<T: Args + Serialize + DeserializeOwned> Configured<T> {
    /// Flag values layered over the config file.
    pub fn resolve(&self) -> Result<T> {
        merge(&self.args, self.config.as_deref())
    }
}

fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let Some(file) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let mut merged: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    let obj = merged
        .as_object_mut()
        .with_context(|| format!("{} must contain a JSON object", file.display()))?;
    if let serde_json::Value::Object(cli) = serde_json::to_value(flags)? {
        for (k, v) in cli {
            if !v.is_null() {
                obj.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).with_context(|| format!("invalid settings in {}", file.display()))
}

/// `--out-dir`, then the environment, then the working-directory default.
pub fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// Operation name (see the list in --help).
    #[arg(long)]
    pub op: Option<OperationKind>,
    /// Modulus for residue operations [default: 97].
    #[arg(long)]
    pub p: Option<u64>,
    /// Training fraction [default: 0.5].
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Number of training answers to replace [default: 0].
    #[arg(long)]
    pub outliers: Option<usize>,
    #[arg(long)]
    pub outlier_seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub op: Option<OperationKind>,
    /// Modulus for residue operations [default: 97].
    #[arg(long)]
    pub p: Option<u64>,
    /// Training fraction [default: 0.5].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Optimizer variant [default: adamw_wd1].
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Optimizer updates [default: 100000].
    #[arg(long)]
    pub budget: Option<u64>,
    /// Evaluation cadence in updates [default: 100].
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Sets split, init, training and outlier seeds at once [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub outliers: Option<usize>,
    #[arg(long)]
    pub outlier_seed: Option<u64>,
    /// Override the variant's learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the variant's weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Exclude embeddings and unembedding from weight decay.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_decay_embeddings: Option<bool>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    pub stop_at_val_acc: Option<f64>,
    /// Write a resumable checkpoint every N updates (multiple of --eval-every).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Record elapsed wall time in the metrics (makes them non-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub wall_time: Option<bool>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    /// Run directory [default: <out-dir>/<run id>].
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    pub study: Option<Study>,
    /// Use the full grids of the original studies instead of desk-sized ones.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub paper_scale: Option<bool>,
    /// Operations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub op: Option<Vec<OperationKind>>,
    /// Modulus applied to every residue operation of the sweep.
    #[arg(long)]
    pub p: Option<u64>,
    /// Training fractions, comma separated and increasing.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    /// Outlier counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub outliers: Option<Vec<usize>>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub stop_at_val_acc: Option<f64>,
    /// Box size for the sharpness study.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Concurrent training runs [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Box size [default: 0.001].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Ascent steps [default: 20].
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output CSV [default: <out-dir>/embeddings.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    /// Sweep directory (containing runs/) or a directory of run directories.
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
}
