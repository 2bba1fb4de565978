use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evdl_core::decision::Channel;
use evdl_core::losses::{LossKind, RiskMode};

#[derive(Debug, Parser)]
#[command(name = "evdl", version, about = "Evidential privacy classifier with uncertainty-based delegation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-cluster dataset.
    Synth(SynthArgs),
    /// Train an evidential model and print the epoch history as CSV.
    Train(TrainArgs),
    /// Continue training a checkpoint on personal data.
    Finetune(FinetuneArgs),
    /// Metrics and uncertainty histograms of a model on a dataset, as JSON.
    Evaluate(EvaluateArgs),
    /// Accuracy and coverage over thresholds or delegation rates, as CSV.
    Sweep(SweepArgs),
    /// Evidential model against SNN, MC dropout and a deep ensemble.
    Compare(CompareArgs),
    /// Run the HTTP assistant.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Brier,
    Ce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Brier => LossKind::ExpectedBrier,
            LossArg::Ce => LossKind::ExpectedCrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RiskModeArg {
    Kl,
    Direct,
    Both,
}

impl From<RiskModeArg> for RiskMode {
    fn from(r: RiskModeArg) -> Self {
        match r {
            RiskModeArg::Kl => RiskMode::KlScaling,
            RiskModeArg::Direct => RiskMode::DirectRegularizer,
            RiskModeArg::Both => RiskMode::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ChannelArg {
    U,
    Entropy,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::U => Channel::U,
            ChannelArg::Entropy => Channel::Entropy,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output file; receives the training part when --test is given.
    #[arg(long)]
    pub out: PathBuf,
    /// Also split off a test file (stratified, half of each class).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0.17)]
    pub overlap: f64,
    /// Write a single-annotator persona dataset of this many items instead.
    #[arg(long)]
    pub persona_items: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 10)]
    pub epochs: u32,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, value_enum, default_value = "brier")]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value = "kl")]
    pub risk_mode: RiskModeArg,
    /// Cost of calling public content private.
    #[arg(long, default_value_t = 1.0)]
    pub r01: f64,
    /// Cost of calling private content public.
    #[arg(long, default_value_t = 1.0)]
    pub r10: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 32])]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Personal dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Replace the checkpoint's risk matrix before training.
    #[arg(long)]
    pub r01: Option<f64>,
    #[arg(long)]
    pub r10: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub theta: f64,
    /// Histogram bins over [0, 1].
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "u")]
    pub channel: ChannelArg,
    /// Thresholds to sweep; defaults to 0, 0.1, ..., 1.
    #[arg(long, value_delimiter = ',', conflicts_with = "rates")]
    pub thetas: Option<Vec<f64>>,
    /// Delegation rates to sweep instead of thresholds.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Evidential checkpoint; trained from --data when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, default_value_t = 0.05)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = 5)]
    pub passes: usize,
    #[arg(long, default_value_t = 5)]
    pub members: usize,
    /// Randomization test iterations.
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Starting checkpoint, used until a fine-tune replaces it.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluation set for /metrics and /sweeps.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Directory holding the queue, persona, personal data and the active model.
    #[arg(long, default_value = "evdl-state")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Initial persona threshold, if no persona was saved yet.
    #[arg(long, default_value_t = 0.7)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r01: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r10: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}
