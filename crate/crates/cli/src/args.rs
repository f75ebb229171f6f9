//! Command-line grammar. Every command struct is serialisable so a run can
//! be recorded in its manifest and replayed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cspm", version, about = "Complex subband phase-motion modulation classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Synthesise a labelled I/Q dataset container.
    Generate(GenerateArgs),
    /// Split a dataset, train a model and score it on the held-out test split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and compare every front-end variant under one shared split.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Print the filter-bank parameters stored in a checkpoint.
    InspectFilters(InspectArgs),
    /// Write the feature map of one example as CSV.
    DumpFeatures(DumpArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// `all` or a comma-separated list such as `BPSK,QPSK,QAM16`.
    #[arg(long, default_value = "all")]
    pub classes: String,
    /// `start:step:stop` (inclusive) or a comma-separated list, in dB.
    #[arg(long, default_value = "-20:2:20", allow_hyphen_values = true)]
    pub snr: String,
    #[arg(long, default_value_t = 100)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 128)]
    pub length: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Disable random phase, frequency offset and timing drift.
    #[arg(long)]
    pub no_impairments: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    pub subbands: usize,
    #[arg(long, default_value_t = 33)]
    pub kernel: usize,
    /// Comma-separated ascending lags.
    #[arg(long, default_value = "1,2,4,8")]
    pub lags: String,
    #[arg(long, default_value_t = 64)]
    pub mix_channels: usize,
    #[arg(long, default_value_t = 3)]
    pub mix_kernel: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub attention_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub mlp_hidden: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Largest admissible trainable-parameter count.
    #[arg(long, default_value_t = 300_000)]
    pub budget: usize,
    /// Global gradient-norm clip (off unless given).
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Train/validation/test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub split: String,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
    /// Seeds both the split and training.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    pub format: FormatArg,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated training seeds; the split always uses the first.
    #[arg(long, default_value = "42")]
    pub seeds: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    PhaseMotionOnly,
    FixedMorlet,
    LearnableMorlet,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
    /// Defaults to 1e-4 for f32 and 1e-6 for f64.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write the report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DFT length for the magnitude response; at least the kernel length.
    #[arg(long, default_value_t = 128)]
    pub nfft: usize,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DumpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Use this checkpoint's filter bank; otherwise a default full model
    /// initialised with seed 42.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
