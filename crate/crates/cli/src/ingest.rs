use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use featsearch_core::store::shard::read_shard;
use featsearch_core::store::{DATA_FILE, INDEX_FILE, LOCK_FILE, MANIFEST_FILE};
use featsearch_core::{Compression, Dims, FeatureMap, FeatureStore, StoreManifest, StoreWriter};
use serde::Serialize;

use crate::exit::user;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    store: PathBuf,
    /// Glob matching FMAP1 shard files, ingested in sorted path order.
    #[arg(long)]
    shards: String,
    /// Create a new store instead of extending an existing one.
    #[arg(long, requires_all = ["dataset", "model", "layer"])]
    create: bool,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    layer: Option<String>,
    /// Images per chunk (new stores only).
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..=65535))]
    chunk: u32,
    /// Chunk compression (new stores only): deflate or none.
    #[arg(long, default_value = "deflate")]
    compression: Compression,
    /// JSON object mapping image id to class label.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct StoreStats {
    path: PathBuf,
    dataset_name: String,
    model_name: String,
    layer_name: String,
    dims: Dims,
    image_count: u64,
    chunks: usize,
    compression: Compression,
    data_bytes: u64,
}

#[derive(Debug, Serialize)]
struct Report {
    ingested: usize,
    shards: usize,
    store: StoreStats,
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    let mut paths = glob::glob(&args.shards)
        .map_err(|e| user(format!("bad --shards pattern: {e}")))?
        .collect::<Result<Vec<_>, _>>()
        .context("listing shards")?;
    paths.sort();
    if paths.is_empty() {
        return Err(user(format!("no shard matches {}", args.shards)));
    }
    let labels: Option<BTreeMap<String, String>> =
        args.labels.as_deref().map(crate::read_json).transpose()?;

    // Everything is parsed and checked before the store is touched, so a bad
    // shard anywhere leaves the store as it was.
    let (dims, maps) = load_shards(&paths)?;

    let mut writer = if args.create {
        let manifest = StoreManifest::new(
            args.dataset.unwrap_or_default(),
            args.model.unwrap_or_default(),
            args.layer.unwrap_or_default(),
            dims,
            args.chunk,
            args.compression,
        );
        let existed = args.store.exists();
        let mut writer = FeatureStore::create(&args.store, manifest)?;
        if let Err(e) = writer.append(&maps) {
            drop(writer);
            discard_new_store(&args.store, existed);
            return Err(e.into());
        }
        writer
    } else {
        let mut writer = StoreWriter::open(&args.store)
            .with_context(|| format!("opening store {}", args.store.display()))?;
        if writer.store().dims() != dims {
            return Err(user(format!(
                "shards hold {dims} maps but the store holds {}",
                writer.store().dims()
            )));
        }
        writer.append(&maps)?;
        writer
    };

    if let Some(labels) = labels {
        let unknown = labels.keys().filter(|id| !writer.store().contains(id)).count();
        if unknown > 0 {
            log::warn!("{unknown} labels name images that are not in the store");
        }
        writer.set_labels(labels)?;
    }

    let store = writer.store();
    let data_bytes = std::fs::metadata(store.root().join(DATA_FILE))?.len();
    let m = store.manifest();
    crate::print_json(&Report {
        ingested: maps.len(),
        shards: paths.len(),
        store: StoreStats {
            path: store.root().to_path_buf(),
            dataset_name: m.dataset_name.clone(),
            model_name: m.model_name.clone(),
            layer_name: m.layer_name.clone(),
            dims: m.dims,
            image_count: m.image_count,
            chunks: store.index().len(),
            compression: m.compression,
            data_bytes,
        },
    })?;
    Ok(ExitCode::SUCCESS)
}

fn load_shards(paths: &[PathBuf]) -> anyhow::Result<(Dims, Vec<FeatureMap>)> {
    let mut dims = None;
    let mut maps = Vec::new();
    let mut seen = HashSet::new();
    for path in paths {
        let (header, shard) = read_shard(path)
            .map_err(|e| user(format!("shard {}: {e}", path.display())))?;
        match dims {
            None => dims = Some(header.dims),
            Some(d) if d != header.dims => {
                return Err(user(format!(
                    "shard {} holds {} maps, earlier shards hold {d}",
                    path.display(),
                    header.dims
                )))
            }
            Some(_) => {}
        }
        for m in &shard {
            if !seen.insert(m.image_id().to_owned()) {
                return Err(user(format!(
                    "duplicate image id {} in {}",
                    m.image_id(),
                    path.display()
                )));
            }
        }
        log::info!("{}: {} maps", path.display(), shard.len());
        maps.extend(shard);
    }
    Ok((dims.expect("at least one shard"), maps))
}

fn discard_new_store(root: &Path, dir_existed: bool) {
    if dir_existed {
        for f in [MANIFEST_FILE, INDEX_FILE, DATA_FILE, LOCK_FILE] {
            let _ = std::fs::remove_file(root.join(f));
        }
    } else {
        let _ = std::fs::remove_dir_all(root);
    }
}
