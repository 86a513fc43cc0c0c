mod artifacts;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covsteer::{InitStrategy, Variant};

#[derive(Parser, Debug)]
#[command(name = "covsteer", version, about = "Stochastic covariance steering with truncated disturbance feedback")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write the policy, moments and ellipses.
    Solve(SolveArgs),
    /// Solve over a list of truncation windows and tabulate the objectives.
    Sweep(SweepArgs),
    /// Monte-Carlo validation of a solved policy.
    Simulate(SimulateArgs),
}

/// Overrides applied on top of the problem file.
#[derive(Args, Debug, Clone, Default)]
pub struct ProblemFlags {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    /// CCP stopping tolerance on successive objectives.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// CCP initialization: zero, mean-feedforward or hard-warm-start.
    #[arg(long)]
    pub init: Option<InitStrategy>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub problem_flags: ProblemFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub problem: PathBuf,
    /// Comma-separated truncation windows.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub gammas: Vec<i64>,
    /// Variant to solve; defaults to the problem file's.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Solve both variants at every window.
    #[arg(long, conflicts_with = "variant")]
    pub both: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Maximum number of concurrent solves.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Skip the monotonicity check on the hard column.
    #[arg(long)]
    pub no_assert: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub problem: PathBuf,
    /// Solution document written by `solve`.
    pub solution: PathBuf,
    /// Number of rollouts.
    #[arg(short = 'N', long = "samples", default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
