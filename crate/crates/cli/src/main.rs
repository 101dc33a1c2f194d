//! `posminimax`: validate, synthesize, simulate and certify minimax control
//! problems for positive linear systems, and build them from DC networks.
//!
//! Exit codes: 0 success, 1 condition violation, 2 input/parse/limit error,
//! 3 value iteration did not converge (diverged or ran out of iterations).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "posminimax", version, about)]
struct Cli {
    /// Print a one-line human-readable summary to stderr.
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the positivity and cost conditions of a problem file.
    Validate(ValidateArgs),
    /// Run value iteration and synthesize the controller and adversary gains.
    Synth(SynthArgs),
    /// Simulate the closed loop and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Compare the linear value against brute-force dynamic programming.
    OracleCheck(OracleArgs),
    /// Build a problem file from a DC network description.
    Dcnet(DcnetArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    problem: PathBuf,
    /// Absolute slack on every elementwise comparison.
    #[arg(long, default_value_t = 0.0)]
    slack: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct IterationArgs {
    /// Stop once the infinity-norm step change is at most this.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Report divergence once the value exceeds this.
    #[arg(long, default_value_t = 1e12)]
    cap: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    problem: PathBuf,
    #[command(flatten)]
    iteration: IterationArgs,
    /// Initial state (comma separated) for reporting the optimal cost.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Worst,
    Zero,
    Random,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    problem: PathBuf,
    #[command(flatten)]
    iteration: IterationArgs,
    /// JSON file with "K" (and optionally "L"); synthesized when absent.
    #[arg(long)]
    gain: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Worst)]
    policy: PolicyArg,
    /// Number of steps.
    #[arg(long)]
    horizon: usize,
    /// Required for the random policy.
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state (comma separated); defaults to all ones.
    #[arg(long)]
    x0: Option<String>,
    /// Trajectory CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    problem: PathBuf,
    /// Dynamic-programming horizon k.
    #[arg(long)]
    horizon: usize,
    /// Number of random states drawn uniformly from [0, 10]^n.
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Scaled tolerance on |J_k(x) - p_k'x| / (1 + |J_k(x)|).
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DcnetArgs {
    network: PathBuf,
    /// JSON with "E", "G", "s", "r", "gamma"; read from the network file
    /// when absent.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Discretization step; assembles and emits a problem file.
    #[arg(long)]
    h: Option<f64>,
    /// Report the largest feasible step size.
    #[arg(long)]
    hmax: bool,
    /// Problem file path; stdout when absent (the report then goes to stderr).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(args) => commands::validate(args, cli.human),
        Command::Synth(args) => commands::synth(args, cli.human),
        Command::Simulate(args) => commands::simulate(args, cli.human),
        Command::OracleCheck(args) => commands::oracle_check(args, cli.human),
        Command::Dcnet(args) => commands::dcnet(args, cli.human),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::Status::InputError as u8)
        }
    }
}
