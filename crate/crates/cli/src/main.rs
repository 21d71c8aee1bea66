//! `timecaps` command-line driver.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use timecaps::data::NormalizeMode;

/// A failure with the exit code it maps to: 1 for failed verification,
/// 2 for usage, configuration, data and I/O problems.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<timecaps::Error> for CliError {
    fn from(e: timecaps::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(name = "timecaps", version, about = "Temporal capsule networks for 1D signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write model.ckpt, report.json and confusion.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write original/reconstruction pairs for sampled signals.
    Reconstruct(ReconstructArgs),
    /// Compare tape gradients with central differences on a tiny network.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic sine/square/sawtooth dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labelled CSV; synthetic data is generated when neither this nor the
    /// config names a file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise level of generated synthetic data.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    None,
    Zscore,
    Minmax,
}

impl From<NormalizeArg> for NormalizeMode {
    fn from(a: NormalizeArg) -> Self {
        match a {
            NormalizeArg::None => NormalizeMode::None,
            NormalizeArg::Zscore => NormalizeMode::Zscore,
            NormalizeArg::Minmax => NormalizeMode::Minmax,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to load; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for eval_confusion.csv; defaults to the checkpoint's.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    pub normalize: NormalizeArg,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for recon_*.csv; defaults to the checkpoint's.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of signals to reconstruct.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Seed for choosing the signals.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    pub normalize: NormalizeArg,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Run configuration whose routing iterations and activations are
    /// applied to the tiny network.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb one component's tape gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TIMECAPS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("TIMECAPS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
