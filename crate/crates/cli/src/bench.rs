use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use featsearch_core::search::topk_search_stream;
use featsearch_core::{downsample_mask, prepare_query, topk_search, Dims, FeatureStore};
use serde::Serialize;

use crate::exit::user;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    store: PathBuf,
    /// Full-resolution mask JSON applied to the query image.
    #[arg(long)]
    mask: PathBuf,
    /// Query image; defaults to the first image in the store.
    #[arg(long)]
    query_id: Option<String>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,
    /// Skip the in-memory run when the decoded store exceeds this many MiB.
    #[arg(long)]
    ram_budget: Option<u64>,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub images: usize,
    pub dims: Dims,
    pub query_id: String,
    pub k: usize,
    pub repeat: u32,
    /// Median over samples.
    pub streamed_ms: f64,
    /// Median over samples; null when the store exceeds the RAM budget.
    pub in_ram_ms: Option<f64>,
    /// One-off cost of decoding the whole store into memory.
    pub load_ms: Option<f64>,
    pub streamed_samples_ms: Vec<f64>,
    pub in_ram_samples_ms: Vec<f64>,
    pub decoded_bytes: u64,
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    let mask = crate::read_mask(&args.mask)?;
    let store = FeatureStore::open(&args.store)
        .with_context(|| format!("opening store {}", args.store.display()))?;
    let dims = store.dims();
    let query_id = match args.query_id {
        Some(id) => id,
        None => store
            .image_ids()
            .next()
            .ok_or_else(|| user("store is empty"))?
            .to_owned(),
    };
    let k = args.k as usize;
    let query = store.get_feature_map(&query_id)?;
    let qf = prepare_query(&query, &downsample_mask(&mask, dims.rows, dims.cols)?)?;
    let batch = store.manifest().images_per_chunk as usize;

    let mut streamed = Vec::new();
    for _ in 0..args.repeat {
        let t = Instant::now();
        topk_search_stream(&qf, store.iterate_batches(batch)?, k)?;
        streamed.push(ms(t));
    }

    let decoded_bytes = store.decoded_bytes();
    let fits = args
        .ram_budget
        .map_or(true, |mb| decoded_bytes <= mb.saturating_mul(1024 * 1024));
    let (mut in_ram, mut load_ms) = (Vec::new(), None);
    if fits {
        let t = Instant::now();
        let maps = store.load_all()?;
        load_ms = Some(ms(t));
        for _ in 0..args.repeat {
            let t = Instant::now();
            topk_search(&qf, maps.iter(), k)?;
            in_ram.push(ms(t));
        }
    } else {
        log::warn!("store decodes to {decoded_bytes} bytes, over the RAM budget; in-memory run skipped");
    }

    let report = BenchReport {
        images: store.len(),
        dims,
        query_id,
        k,
        repeat: args.repeat,
        streamed_ms: median(&streamed),
        in_ram_ms: (!in_ram.is_empty()).then(|| median(&in_ram)),
        load_ms,
        streamed_samples_ms: streamed,
        in_ram_samples_ms: in_ram,
        decoded_bytes,
    };
    if let Some(r) = report.in_ram_ms {
        if r > report.streamed_ms * 2.0 {
            log::warn!("in-memory search ({r:.1} ms) slower than twice the streamed search ({:.1} ms)", report.streamed_ms);
        }
    }
    crate::print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}
