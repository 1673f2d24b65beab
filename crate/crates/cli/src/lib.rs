//! Command-line front end: simulate sites, fit, debias and run benchmarks.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedsurv::baselines::PseudoMethod;
use fedsurv::debias::ThresholdRule;
use fedsurv::Link;

mod bench;
mod debias;
mod fit;
mod output;
mod simulate;

pub use output::{read_fit_csv, FitRow, DEBIAS_HEADER, FIT_HEADER, KM_HEADER, KM_STATE_FILE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fedsurv::Error),
    #[error("{path}: {message}")]
    Output { path: String, message: String },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fedsurv", version, about = "Federated pseudo-value survival regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated multi-site dataset.
    Simulate(SimulateArgs),
    /// Fit the federated, pooled or Cox model to site directories.
    Fit(FitArgs),
    /// Shrink each site's local fit toward a global fit.
    Debias(DebiasArgs),
    /// Replicated simulation experiments.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Ph,
    Weibull,
    Hetero,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, env = "FEDSURV_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// `balanced`, `skewed`, or comma-separated site sizes.
    #[arg(long)]
    pub sites: Option<String>,
    #[arg(long)]
    pub event_rate: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub target_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    Federated,
    Pooled,
    Cox,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory holding one subdirectory per site.
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long, default_value = "cloglog")]
    pub link: Link,
    /// `lo,hi,J`; defaults to site-1 event time percentiles.
    #[arg(long)]
    pub landmarks: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub time_varying: Vec<String>,
    #[arg(long, value_enum, default_value = "federated")]
    pub mode: FitMode,
    /// Pseudo-values for `--mode pooled`.
    #[arg(long, default_value = "influence")]
    pub pseudo: PseudoMethod,
    #[arg(long, default_value_t = fedsurv::baselines::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Keep every protocol message in this directory.
    #[arg(long)]
    pub mailbox: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    /// `fit.csv` from a federated or pooled fit; `km_state.json` must sit beside it.
    #[arg(long)]
    pub global: PathBuf,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value = "algorithm2")]
    pub rule: ThresholdRule,
    #[arg(long, default_value = "cloglog")]
    pub link: Link,
    /// Output root; one `<site>/debiased.csv` per site. Defaults to the directory of `--global`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub figure: u8,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, env = "FEDSURV_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.1])]
    pub event_rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.15, 0.3, 0.5])]
    pub deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [500, 100, 50])]
    pub target_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value = "algorithm2")]
    pub rule: ThresholdRule,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Debias(a) => debias::run(a),
        Command::Benchmark(a) => bench::run(a),
    }
}
