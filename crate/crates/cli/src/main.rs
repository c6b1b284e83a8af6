mod args;
mod commands;
mod config;
mod io;

use std::process::ExitCode;

use clap::Parser;
use mixdens::Error;

use crate::args::Cli;

/// 2: bad arguments. 3: unreadable or unsuitable data. 4: numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 2,
        Error::ZeroLikelihoodRow { .. } => 3,
        e if e.is_numeric() => 4,
        _ => 3,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
