use std::path::PathBuf;
use std::process::ExitCode;

use featsearch_core::verify_store;

use crate::exit::{user, CORRUPT};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    store: PathBuf,
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    if !args.store.is_dir() {
        return Err(user(format!("{} is not a directory", args.store.display())));
    }
    let report = verify_store(&args.store);
    crate::print_json(&report)?;
    if report.ok {
        Ok(ExitCode::SUCCESS)
    } else {
        for c in report.failed_chunks() {
            eprintln!(
                "chunk {}: {}",
                c.ordinal,
                c.error.as_deref().unwrap_or("failed")
            );
        }
        for issue in &report.issues {
            eprintln!("{issue}");
        }
        Ok(ExitCode::from(CORRUPT))
    }
}
