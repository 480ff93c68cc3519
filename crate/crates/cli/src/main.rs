mod commands;
mod config;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{
    CliError, ConfigFile, EnergyArgs, List, ModelArgs, OutputArgs, Spacing, StabilityArgs, TimeArgs,
};

/// Sample-based forward-invariance certificates for simulated dynamical
/// systems.
#[derive(Debug, Parser)]
#[command(name = "simcert", version)]
pub struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for the parallel sample loops [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trajectory-divergence bound table `T,a,b,exp_bound,sqrt_a_term,sqrt_b_term`.
    Bounds(BoundsArgs),
    /// Monte-Carlo check of the exponential envelope, CSV `t,max_abs_x,envelope`.
    Montecarlo(MontecarloArgs),
    /// Certify that {E ≤ ℓ} is forward invariant. Exit 0 invariant, 1 inconclusive, 2 falsified.
    Verify(VerifyArgs),
    /// Certificate margin over horizons × sample counts.
    Sweep(SweepArgs),
    /// Re-run a stored recipe and compare against its reference constants.
    Repro(ReproArgs),
    /// Single trajectory CSV `t,x1,...`.
    Simulate(SimulateArgs),
    /// Sample grid CSV `x1,...` for a level set.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub stability: StabilityArgs,
    /// Row spacing in steps [default: 10].
    #[arg(long)]
    pub stride: Option<usize>,
    /// Report the first T where both square-root terms are below this [default: 0.001].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MontecarloArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub stability: StabilityArgs,
    /// Number of trajectories [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Also fit (k, λ) heuristically from the ensemble.
    #[arg(long)]
    pub fit: bool,
    /// Safety factor for the fit [default: 0.8].
    #[arg(long)]
    pub safety: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub stability: StabilityArgs,
    #[command(flatten)]
    pub energy: EnergyArgs,
    /// Sample covering radius δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Maximum adaptation rounds [default: 8].
    #[arg(long)]
    pub adapt_limit: Option<usize>,
    /// covering or strict [default: covering].
    #[arg(long)]
    pub spacing: Option<Spacing>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub stability: StabilityArgs,
    #[command(flatten)]
    pub energy: EnergyArgs,
    /// Step counts N [default: 100,200,...,1000].
    #[arg(long)]
    pub steps_grid: Option<List<usize>>,
    /// Samples across the set diameter [default: 11,21,41,81,161].
    #[arg(long)]
    pub sample_counts: Option<List<usize>>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// ex2, ex3, ex4, ex6, ex8, ex9, fig1, fig2, fig3, fig4 or all.
    pub id: repro::ReproId,
    /// Directory for emitted CSV files [default: repro-out].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seed for the Monte-Carlo recipes [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    /// Initial state, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<List<f64>>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub energy: EnergyArgs,
    /// State dimension when --p is not given [default: 1].
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// covering or strict [default: covering].
    #[arg(long)]
    pub spacing: Option<Spacing>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut threads = cli.threads;
    config::fill(&mut threads, &mut file, "threads")?;
    let command = cli.command;
    let job = move || commands::dispatch(command, &mut file);
    match threads {
        Some(0) => Err(config::usage("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| config::usage(format!("cannot start {t} threads: {e}")))?
            .install(job),
        None => job(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(64),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("simcert: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
