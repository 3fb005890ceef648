//! `ankle-reduce`: command-line front end for the ankle-reduce-core pipeline.
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage or input error,
//! 3 plan computed but outside tolerance.

mod args;
mod cmd_evaluate;
mod cmd_model;
mod cmd_phantom;
mod cmd_plan;
mod cmd_run_all;
mod cmd_segment;
mod support;

use clap::Parser;

use args::{Cli, Command};
use support::CliError;

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    support::init_thread_pool()?;
    let echo = support::Echo::new(cli.quiet);
    match cli.command {
        Command::Phantom(args) => cmd_phantom::run(&args, &echo),
        Command::BuildModel(args) => cmd_model::run(&args, &echo),
        Command::Segment(args) => cmd_segment::run(&args, &echo),
        Command::Plan(args) => cmd_plan::run(&args, &echo),
        Command::Evaluate(args) => cmd_evaluate::run(&args, &echo),
        Command::RunAll(args) => cmd_run_all::run(&args, &echo),
    }
}
