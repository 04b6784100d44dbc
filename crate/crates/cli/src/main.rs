//! `besent`: ingest, train, evaluate and query sentiment/Bloom classifiers.

mod commands;
mod config;

use std::io::Write as _;
use std::process::ExitCode;

use besent_core::Error;
use clap::{error::ErrorKind, Parser};

use commands::Cli;

/// 0 success, 1 usage, 2 data or validation, 3 I/O.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Transport { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if !out.is_empty() {
                let _ = writeln!(stdout, "{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
