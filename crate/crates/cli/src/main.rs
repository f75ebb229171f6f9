//! `cspm`: dataset generation, training, evaluation and ablations for the
//! complex subband phase-motion classifier.

// `!(x > 0.0)` is used on purpose so that NaN fails the same checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod error;
mod manifest;
mod parse;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use cspm_core::par;

use crate::args::{Cli, Command};
use crate::error::Result;
use crate::manifest::{RunManifest, MANIFEST_SCHEMA_VERSION};

fn run(cmd: &Command) -> Result<()> {
    let cmd = match cmd {
        Command::Replay(r) => {
            let recorded = RunManifest::load(&r.manifest)?;
            eprintln!(
                "replaying {} recorded by {} {}",
                r.manifest.display(),
                recorded.tool,
                recorded.version
            );
            recorded.command
        }
        other => other.clone(),
    };
    let start = Instant::now();
    let outcome = commands::dispatch(&cmd)?;
    if let Some(path) = &outcome.manifest {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: cmd.clone(),
            resolved: outcome.resolved,
            seeds: outcome.seeds,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            threads: par::threads(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        }
        .save(path)?;
    }
    outcome.failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("CSPM_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                par::init_threads(n);
            }
            _ => {
                eprintln!("error: CSPM_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
