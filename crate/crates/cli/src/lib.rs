//! Command-line surface of `ictasnet`: configuration files, WAV I/O and the
//! `summary`, `enhance`, `train`, `gradcheck` and `synth` subcommands.

pub mod commands;
pub mod config;
pub mod fsutil;
pub mod wav;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ictasnet", version, about = "Multichannel Conv-TasNet speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the per-layer summary, parameter count and receptive field.
    Summary(SummaryArgs),
    /// Enhance a multichannel WAV file into a mono WAV file.
    Enhance(EnhanceArgs),
    /// Train a model and write a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Run finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write synthetic noisy/clean WAV pairs.
    Synth(SynthArgs),
}

/// Model selection shared by all model-dependent commands. Without either
/// flag the defaults apply.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// TOML file with [model] and [train] sections.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named architecture, e.g. model10, modelD, mc, toy-ic.
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    #[default]
    Text,
    Toml,
}

#[derive(Debug, Clone, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Compare every preset with its published size instead.
    #[arg(long)]
    pub diff_paper: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: SummaryFormat,
    /// Sample rate used to express the receptive field in seconds.
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
}

impl Default for SummaryArgs {
    fn default() -> Self {
        Self {
            model: ModelArgs::default(),
            diff_paper: false,
            format: SummaryFormat::Text,
            sample_rate: 16000,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trained parameters; random initial weights without it.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("data").required(true).args(["synth", "input"])))]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Train on generated pairs.
    #[arg(long)]
    pub synth: bool,
    /// Directory of `*_noisy.wav` / `*_clean.wav` pairs.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Loss CSV to write; defaults to the checkpoint path with a .csv extension.
    #[arg(long, value_name = "PATH")]
    pub loss: Option<PathBuf>,
    /// Overrides the model, training and data seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of generated pairs.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Length of each generated pair in seconds.
    #[arg(long, default_value_t = 0.5)]
    pub duration: f64,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("which").required(true).args(["all", "op"])))]
pub struct GradcheckArgs {
    #[arg(long)]
    pub all: bool,
    /// A single registered check.
    #[arg(long, value_name = "NAME")]
    pub op: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Channel count and reference channel come from the model config.
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0.5)]
    pub duration: f64,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Summary(a) => commands::summary(a, out).map(drop),
        Command::Enhance(a) => commands::enhance(a, out),
        Command::Train(a) => commands::train(a, out).map(drop),
        Command::Gradcheck(a) => commands::gradcheck(a, out),
        Command::Synth(a) => commands::synth(a, out).map(drop),
    }
}
