//! `gepower`: solve, check, sweep, simulate and export the belief-MDP power
//! allocation problem from a JSON config.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;
use crate::exit::CliError;

#[derive(Parser)]
#[command(name = "gepower", version, about = "Optimal power allocation over Gilbert-Elliott channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration on the grid; writes solution.csv and solve_meta.json.
    Solve(Common),
    /// Structural checks on a solved policy; writes check.json, exits 1 on failure.
    Check(Common),
    /// Region volumes over the config's sweep section; writes sweep.csv.
    Sweep(Common),
    /// Monte Carlo evaluation of the named policies; writes simulate.json.
    Simulate(Common),
    /// Writes the LP as problem.lp plus lp_variables.json.
    ExportLp(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `out`, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per axis before adding lambda0 and lambda1.
    #[arg(long)]
    resolution: Option<usize>,
    /// Target sup-norm error of value iteration.
    #[arg(long)]
    epsilon: Option<f64>,
}

type Handler = fn(&config::Resolved) -> Result<(), CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (run, common): (Handler, Common) = match cli.command {
        Command::Solve(c) => (commands::solve, c),
        Command::Check(c) => (commands::check, c),
        Command::Sweep(c) => (commands::sweep_cmd, c),
        Command::Simulate(c) => (commands::simulate, c),
        Command::ExportLp(c) => (commands::export_lp, c),
    };
    let overrides = Overrides {
        out: common.out,
        seed: common.seed,
        resolution: common.resolution,
        epsilon: common.epsilon,
    };
    let result = config::load(&common.config, &overrides).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
