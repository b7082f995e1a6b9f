//! `featsearch`: build feature stores, search them offline, serve them over
//! HTTP, benchmark and verify them.
//!
//! Machine-readable output goes to stdout as JSON; diagnostics go to stderr.
//! Exit codes: 0 success, 1 user error, 2 data corruption, 3 internal error.

mod bench;
mod exit;
mod ingest;
mod metrics;
mod search;
mod serve;
mod verify;

use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use featsearch_core::{ImageMask, Matrix};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "featsearch", version, about = "Region-based CNN feature search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add FMAP1 shards to a store, optionally creating it.
    Ingest(ingest::Args),
    /// Search a store for the regions most similar to a masked query.
    Search(search::Args),
    /// Serve the HTTP API for the stores listed in a config file.
    Serve(serve::Args),
    /// Time streamed and in-memory searches over a whole store.
    Bench(bench::Args),
    /// Check every chunk of a store.
    Verify(verify::Args),
    /// Result-set analyses.
    #[command(subcommand)]
    Metrics(metrics::Command),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    // clap exits with 2 on usage errors; 2 is reserved for corruption here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(exit::USER),
            };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest::run(a),
        Command::Search(a) => search::run(a),
        Command::Serve(a) => serve::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Verify(a) => verify::run(a),
        Command::Metrics(c) => metrics::run(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::classify(&e)
        }
    }
}

pub(crate) fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| exit::user(format!("{}: {e}", path.display())))
}

/// Mask file: `{"rows": H, "cols": W, "data": [...]}`, values in [0, 1].
pub(crate) fn read_mask(path: &Path) -> anyhow::Result<ImageMask> {
    let m: Matrix = read_json(path)?;
    ImageMask::new(m).with_context(|| format!("mask {}", path.display()))
}
