mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::UsageError;
use picbnn::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_CAPACITY: u8 = 4;
const EXIT_CALIBRATION: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Format(_) | Error::Profile(_) => EXIT_FORMAT,
                Error::Capacity(_) => EXIT_CAPACITY,
                Error::Calibration { .. } => EXIT_CALIBRATION,
                Error::Input(_) => EXIT_USAGE,
                _ => EXIT_OTHER,
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_FORMAT;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
