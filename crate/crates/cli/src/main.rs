use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match compgrpo_cli::run(compgrpo_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
