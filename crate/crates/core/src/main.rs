use std::process::ExitCode;

use clap::Parser;
use replaybench::cli::{run, Cli, Outcome};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("replaybench: {e}");
            ExitCode::from(2)
        }
    }
}
