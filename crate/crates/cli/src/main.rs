//! `dln`: run flows, fiber minimizations, realization balancing and the
//! invariant battery from the command line.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid input,
//! 3 numerical failure.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, FlowArgs, MinimizeArgs, RealizeArgs, VerifyArgs};

#[derive(Parser, Debug)]
#[command(name = "dln", version, about = "Deep linear network geometry and flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a flow; writes flow-<kind>.csv and flow-<kind>.json.
    Flow(FlowArgs),
    /// Minimize a norm over the fiber of X; writes minimize-<kind>.json.
    Minimize(MinimizeArgs),
    /// Balance a state-space realization; writes realize.json.
    Realize(RealizeArgs),
    /// Run the invariant battery; writes verify.json.
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.command {
        Command::Flow(a) => ExperimentConfig::flow(a),
        Command::Minimize(a) => ExperimentConfig::minimize(a),
        Command::Realize(a) => ExperimentConfig::realize(a),
        Command::Verify(a) => ExperimentConfig::verify(a),
    };
    match cfg.and_then(|c| commands::run(&c)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
