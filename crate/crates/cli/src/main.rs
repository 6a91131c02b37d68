//! `dec`: command-line runner for the decomposition/composition pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod args;
mod commands;
mod data;
mod manifest;
mod settings;

use std::fmt;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;

/// Bad invocation or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A nested run that already reported its own failure.
#[derive(Debug)]
pub struct Failed(pub i32);

impl fmt::Display for Failed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run exited with status {}", self.0)
    }
}

impl std::error::Error for Failed {}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(run(&argv));
}

pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(Failed(code)) = cause.downcast_ref::<Failed>() {
            return *code;
        }
        if let Some(err) = cause.downcast_ref::<dec_core::Error>() {
            return match err {
                dec_core::Error::Config(_) => 1,
                dec_core::Error::Numeric(_) => 3,
                _ => 2,
            };
        }
    }
    2
}
