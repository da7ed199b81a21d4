mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use quadstab::Error;

use crate::args::{normalize, Cli};
use crate::config::Config;

/// Bad input detected by the CLI itself rather than by the library.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Domain(_)
                | Error::Spec(_)
                | Error::Dimension { .. }
                | Error::UnknownParameter(_)
                | Error::Length(..) => EXIT_USAGE,
                Error::Io(_) | Error::Csv(_) | Error::Corrupt { .. } | Error::Version { .. } => EXIT_IO,
                Error::Numerical { .. } | Error::Singular(_) | Error::Training(_) | Error::Sampling { .. } => {
                    EXIT_NUMERICAL
                }
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(normalize(std::env::args_os()));
    let result = cli
        .config
        .as_deref()
        .map_or_else(|| Ok(Config::default()), Config::load)
        .and_then(|cfg| commands::run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
