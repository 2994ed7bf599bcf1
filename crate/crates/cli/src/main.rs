//! Binary entry point: parse, dispatch, map errors to exit codes.
//! 0 success, 2 bad input or I/O failure, 3 planner found no feasible plan.

use clap::Parser;
use pipeplan_cli::commands::{self, Cli};

fn main() {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if commands::is_infeasibility(&err) { 3 } else { 2 };
            std::process::exit(code);
        }
    }
}
