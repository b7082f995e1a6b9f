use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use featsearch_core::search::{topk_search_oracle, topk_search_stream};
use featsearch_core::{downsample_mask, prepare_query, FeatureStore};
use featsearch_service::api::{present_hits, SearchResponse};

use crate::exit::user;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    query_id: String,
    /// Full-resolution mask JSON: {"rows": H, "cols": W, "data": [...]}.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Score with the brute-force sliding-window scan instead of correlation.
    #[arg(long)]
    oracle: bool,
    /// Where to write the response JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    if args.k == 0 {
        return Err(user("--k must be at least 1"));
    }
    let mask = crate::read_mask(&args.mask)?;
    let store = FeatureStore::open(&args.store)
        .with_context(|| format!("opening store {}", args.store.display()))?;
    let dims = store.dims();
    if mask.rows() < dims.rows || mask.cols() < dims.cols {
        return Err(user(format!(
            "mask {}x{} is smaller than the {}x{} feature grid",
            mask.rows(),
            mask.cols(),
            dims.rows,
            dims.cols
        )));
    }
    let query = store.get_feature_map(&args.query_id)?;
    let mask_l = downsample_mask(&mask, dims.rows, dims.cols)?;

    let started = Instant::now();
    let hits = if args.oracle {
        topk_search_oracle(&query, &mask_l, store.load_all()?, args.k)?
    } else {
        let qf = prepare_query(&query, &mask_l)?;
        let batch = store.manifest().images_per_chunk as usize;
        topk_search_stream(&qf, store.iterate_batches(batch)?, args.k)?
    };
    let timing_ms = started.elapsed().as_millis() as u64;

    let manifest = store.manifest();
    let response = SearchResponse {
        hits: present_hits(&manifest.dataset_name, manifest, hits),
        timing_ms,
    };
    let json = serde_json::to_vec_pretty(&response)?;
    std::fs::write(&args.out, json)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!(
        "{} hits in {timing_ms} ms{}",
        response.hits.len(),
        if args.oracle { " (oracle)" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}
