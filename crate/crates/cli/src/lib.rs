//! Batch driver for `fbm-ergodic` experiments.
//!
//! Each subcommand validates its configuration, runs the pipeline and writes
//! CSV artifacts plus a `manifest.json` with their SHA-256 digests into the
//! output directory. Exit codes: 0 success, 2 configuration error, 3 resource
//! error, 4 numerical failure.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;
use fbm_ergodic::ModelRegistry;

pub use commands::{execute, Context};
pub use config::{Command, ExperimentConfig};
pub use error::CliError;
pub use manifest::RunManifest;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = cli
        .command
        .resolve()
        .and_then(|(command, config)| Context::prepare(config, command, &ModelRegistry::with_builtins()))
        .and_then(|ctx| execute(&ctx));
    match outcome {
        Ok(manifest) => {
            println!(
                "{}: wrote {} artifact(s) and {} to {}",
                manifest.command,
                manifest.artifacts.len(),
                manifest::MANIFEST_FILE,
                manifest.config.out_dir.display()
            );
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
