//! `margin-lab`: generate separable datasets, solve for max-margin
//! classifiers, run smoothed-margin dynamics, and verify the recorded
//! trajectories against the margin guarantees.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config error,
//! 3 non-separable data, 4 numerical failure.

mod args;
mod commands;

use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;

fn main() {
    let cli = Cli::parse();
    let ctx = Ctx { no_timestamp: cli.no_timestamp };
    let config = cli.config.as_ref();
    let result = match cli.command {
        Command::Gen(opts) => {
            args::load_config(config).and_then(|file| opts.resolve(file)).and_then(|p| {
                commands::cmd_gen(&ctx, p)
            })
        }
        Command::Solve(opts) => {
            args::load_config(config).and_then(|file| opts.resolve(file)).and_then(|p| {
                commands::cmd_solve(&ctx, p)
            })
        }
        Command::Run(opts) => {
            args::load_config(config).and_then(|file| opts.resolve(file)).and_then(|p| {
                commands::cmd_run(&ctx, p)
            })
        }
        Command::Verify(opts) => {
            args::load_config(config).and_then(|file| opts.resolve(file)).and_then(|p| {
                commands::cmd_verify(&ctx, p)
            })
        }
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code_for(&err));
        }
    }
}

/// Maps failures onto the documented exit codes. Anything that is not a
/// domain error (config parsing, I/O plumbing) counts as a usage error.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    use margin_lab::Error;
    let Some(domain) = err.chain().find_map(|e| e.downcast_ref::<Error>()) else {
        return 2;
    };
    match domain {
        Error::NonSeparable { .. } => 3,
        Error::InvalidParameter(_)
        | Error::Csv { .. }
        | Error::DatasetMismatch { .. }
        | Error::WrongDriver(_)
        | Error::TooFewRecords { .. }
        | Error::GenerationCap { .. }
        | Error::Io(_) => 2,
        Error::IterationCap { .. }
        | Error::Diverged { .. }
        | Error::RiskOverflow { .. }
        | Error::ZeroVector
        | Error::ZeroFunction
        | Error::DegenerateProduct { .. }
        | Error::NonPositiveField { .. } => 4,
    }
}
