use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "picbnn", version, about = "Simulator for a CAM-based binary neural network accelerator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Train a binary MLP and save it as a model file.
    Train(TrainArgs),
    /// Place a model onto CAM pages and dump the programmed arrays.
    Map(MapArgs),
    /// Run the multi-pass sweep and write per-image traces.
    Infer(EvalArgs),
    /// Run the multi-pass sweep and write the accuracy-vs-passes curve.
    Sweep(EvalArgs),
    /// Print the knob setting for each HD threshold and verify it.
    Calibrate(CalibrateArgs),
    /// Print the throughput and efficiency table.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Folder,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetKind,
    /// MNIST directory (default: $PICBNN_MNIST_DIR or data/mnist), or the
    /// root of a class-per-subfolder image tree.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub binarize_threshold: f32,
    /// Side of the square grayscale image for folder datasets.
    #[arg(long, default_value_t = 64)]
    pub image_side: u32,
    /// Train fraction of the seeded split for folder datasets.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Layer widths, e.g. 784,128,10 (default: input width, 128, classes).
    #[arg(long, value_delimiter = ',')]
    pub arch: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub bn_cap: i32,
    #[arg(long, default_value = "model.picb")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GeometryArgs {
    /// `RxC`, `RxCxB` or `physical` (four 64x512 banks).
    #[arg(long, default_value = "64x2048")]
    pub geometry: String,
    /// Read the geometry string as columns x rows.
    #[arg(long)]
    pub columns_first: bool,
    /// Reprogram rows between cycles when the model exceeds the array.
    #[arg(long)]
    pub allow_reuse: bool,
    #[arg(long, default_value_t = 64)]
    pub bn_cap: i32,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, default_value = "cam.picc")]
    pub out: PathBuf,
    #[arg(long, default_value = "placement.json")]
    pub placement: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnobMode {
    Digital,
    Physical,
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteKind {
    Argmax,
    Majority,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Swept thresholds as a list (`0,4,8`) or range (`0:64:2`).
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Use the first N thresholds of the default 0:64:2 sweep.
    #[arg(long, conflicts_with = "thresholds")]
    pub passes: Option<usize>,
    #[arg(long, value_enum, default_value = "digital")]
    pub knob_mode: KnobMode,
    /// Measured profile for lookup mode (default: built-in table).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "argmax")]
    pub vote: VoteKind,
    /// Std-dev of the per-row conductance gain (analog modes only).
    #[arg(long)]
    pub variation_sigma: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub variation_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub sweep: SweepArgs,
    /// Evaluate only the first N test images.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value = "accuracy.csv")]
    pub csv: PathBuf,
    /// Per-image trace file (JSON lines).
    #[arg(long, default_value = "traces.jsonl")]
    pub traces: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long, default_value = "0:36:4")]
    pub thresholds: String,
    #[arg(long, value_enum, default_value = "physical")]
    pub knob_mode: KnobMode,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Transistor threshold voltage of the discharge model, mV.
    #[arg(long, default_value_t = 300.0)]
    pub vth: f64,
    /// Sampling-time scale of the discharge model.
    #[arg(long, default_value_t = 0.04)]
    pub t0: f64,
    #[arg(long, default_value = "knobs.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long, required_unless_present = "arch")]
    pub model: Option<PathBuf>,
    /// Layer widths of a model with zero batch-norm constants, used when no
    /// model file is given.
    #[arg(long, value_delimiter = ',')]
    pub arch: Option<Vec<usize>>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, default_value_t = 33)]
    pub passes: usize,
    #[arg(long, default_value_t = 25e6)]
    pub clock: f64,
    #[arg(long, default_value_t = 0.8e-3)]
    pub power: f64,
    /// Images per knob retune (`inf` for no retuning cost).
    #[arg(long, default_value = "1")]
    pub batch: String,
    #[arg(long, default_value_t = 0.0)]
    pub tuning_cycles: f64,
    /// Fixed overhead per image; skips calibration when given.
    #[arg(long)]
    pub overhead: Option<f64>,
    /// Throughput the overhead is fitted to.
    #[arg(long, default_value_t = 560e3)]
    pub target_throughput: f64,
    /// Clock at which the target throughput was measured. The fit uses this
    /// clock, the given pass count and no tuning cost; the fitted overhead
    /// then applies at `--clock`, `--batch` and `--tuning-cycles`.
    #[arg(long, default_value_t = 25e6)]
    pub fit_clock: f64,
    #[arg(long, default_value = "report.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
