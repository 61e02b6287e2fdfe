mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use diffbeam::Error;

use args::{Cli, Command};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::UnknownArchitecture(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Selftest => {
            return if commands::selftest() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUNTIME) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
