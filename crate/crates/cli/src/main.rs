//! `ssr`: train, evaluate and inspect frequency-aware multimodal recommenders.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssr_core::SsrError;

#[derive(Debug, Parser)]
#[command(name = "ssr", version, about = "Frequency-aware multimodal graph recommendation")]
#[command(after_help = "Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.\n\
Set SSR_THREADS to cap worker threads. File formats are described in FORMATS.md.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, log and test metrics.
    Train(TrainArgs),
    /// Score a checkpoint on the validation or test split.
    Evaluate(EvaluateArgs),
    /// Report the spectrum and band partitions for a dataset.
    Decompose(DecomposeArgs),
    /// Export band energies, gate weights and modality center distances.
    Diagnose(DiagnoseArgs),
    /// Check analytic gradients of the full objective against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a planted-block synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Interaction log: `user item timestamp` per line.
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// Image feature matrix, one row per item.
    #[arg(long)]
    pub img_features: Option<PathBuf>,
    /// Text feature matrix, one row per item.
    #[arg(long)]
    pub txt_features: Option<PathBuf>,
    /// Read feature matrices as comma-separated text instead of the binary format.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Flat TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data files; default to those recorded next to the checkpoint.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    /// Only users with at most 5 training interactions.
    #[arg(long)]
    pub cold_start: bool,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    pub k: Vec<usize>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceChoice {
    Euclidean,
    Cosine,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub distance: DistanceChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 9)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Coordinates probed per parameter tensor.
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, default_value_t = 20)]
    pub interactions_per_user: usize,
    /// Feature noise around the block centroid.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub cold_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub img_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub txt_dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a subcommand, mapped onto the exit-code taxonomy.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    /// A check that ran to completion but did not pass.
    Numerical(String),
    Engine(SsrError),
}

impl From<SsrError> for Failure {
    fn from(e: SsrError) -> Self {
        Failure::Engine(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 3,
            Failure::Engine(e) if e.is_numerical() => 3,
            Failure::Engine(_) => 2,
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SSR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SSR_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}\n\nRun `ssr --help` for usage."),
                Failure::Numerical(msg) => eprintln!("error: {msg}"),
                Failure::Engine(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
