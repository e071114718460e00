//! `pcgpwm` command-line tool.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "pcgpwm", version, about = "Surrogates for simulation output with missing responses")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Root seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PCGPWM_THREADS")]
    pub threads: Option<usize>,
    /// Directory for every file the command writes.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// More log output (repeatable).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(long, short = 'q', global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a surrogate and write model.json and fit_report.json.
    Fit(FitArgs),
    /// Predictive means and standard deviations at new parameters.
    Predict(PredictArgs),
    /// Sample the parameter posterior given observations.
    Calibrate(CalibrateArgs),
    /// Run a benchmark experiment and write results.csv.
    Benchmark(BenchmarkArgs),
    /// Fill missing responses and write completed.csv.
    Impute(ImputeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long)]
    pub locations: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON surrogate settings; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variance_fraction: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One parameter vector per row.
    #[arg(long)]
    pub theta: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One row per output: the observation, then optionally its error
    /// variance.
    #[arg(long)]
    pub observations: PathBuf,
    /// Error variance for every output when the file has one column.
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub temps: usize,
    /// Adaptation iterations before sampling (default: --samples).
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 100.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Experiment configuration; without it the bundled desk config runs.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMethod {
    /// Conditional means from the missing-data principal components.
    Em,
    /// Average of the nearest available entries.
    Knn,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ImputeMethod::Em)]
    pub method: ImputeMethod,
    #[arg(long, default_value_t = 0.995)]
    pub variance_fraction: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

/// Failure split by exit code: 2 for bad input, 1 for internal errors.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<pcgpwm::Error> for CliError {
    fn from(e: pcgpwm::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.into())
        } else {
            CliError::Internal(e.into())
        }
    }
}

pub fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(anyhow::anyhow!("{msg}"))
}

fn init_logging(g: &Global) {
    let level = match (g.quiet, g.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, _) => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global);
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}
