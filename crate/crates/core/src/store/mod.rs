//! On-disk cache of precomputed feature maps.
//!
//! A store is a directory holding three files:
//!
//! * `manifest.json` - [`StoreManifest`], UTF-8 JSON.
//! * `index.bin` - one [`ChunkIndexEntry`] per chunk (see [`index`]).
//! * `data.bin` - the compressed chunks, back to back.
//!
//! Each chunk holds up to `images_per_chunk` maps serialized as row-major
//! little-endian `f32` and compressed as a unit. `data.bin` is only ever
//! appended to; the index and manifest are replaced by write-then-rename
//! after the new chunk bytes are synced, so readers never see an index entry
//! whose data is not durable.

pub mod index;
pub mod shard;
mod verify;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap};

pub use index::ChunkIndexEntry;
pub use verify::{verify_store, ChunkStatus, VerifyReport};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.bin";
pub const DATA_FILE: &str = "data.bin";
pub const LOCK_FILE: &str = "write.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    None,
    #[default]
    Deflate,
}

impl std::str::FromStr for Compression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Compression::None),
            "deflate" => Ok(Compression::Deflate),
            other => Err(Error::invalid(format!("unknown compression {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub dataset_name: String,
    pub model_name: String,
    pub layer_name: String,
    pub dims: Dims,
    pub image_count: u64,
    pub images_per_chunk: u32,
    pub compression: Compression,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<BTreeMap<String, String>>,
}

impl StoreManifest {
    pub fn new(
        dataset_name: impl Into<String>,
        model_name: impl Into<String>,
        layer_name: impl Into<String>,
        dims: Dims,
        images_per_chunk: u32,
        compression: Compression,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dataset_name: dataset_name.into(),
            model_name: model_name.into(),
            layer_name: layer_name.into(),
            dims,
            image_count: 0,
            images_per_chunk,
            compression,
            label_map: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported store format version {}",
                self.format_version
            )));
        }
        self.dims.validate()?;
        if self.images_per_chunk == 0 || self.images_per_chunk > u16::MAX as u32 {
            return Err(Error::invalid(format!(
                "images_per_chunk must be in 1..={}, got {}",
                u16::MAX,
                self.images_per_chunk
            )));
        }
        Ok(())
    }

    pub fn label(&self, image_id: &str) -> Option<&str> {
        self.label_map.as_ref()?.get(image_id).map(String::as_str)
    }
}

pub(crate) fn read_manifest(root: &Path) -> Result<StoreManifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(format!(
                "no store manifest at {}",
                path.display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let manifest: StoreManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::CorruptMetadata(format!("{}: {e}", path.display())))?;
    manifest
        .validate()
        .map_err(|e| Error::CorruptMetadata(e.to_string()))?;
    Ok(manifest)
}

pub(crate) fn read_index(root: &Path) -> Result<Vec<ChunkIndexEntry>> {
    let path = root.join(INDEX_FILE);
    match fs::read(&path) {
        Ok(b) => index::decode(&b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::CorruptMetadata(format!(
            "missing index file {}",
            path.display()
        ))),
        Err(e) => Err(e.into()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_manifest(root: &Path, manifest: &StoreManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&root.join(MANIFEST_FILE), &json)
}

fn encode_chunk(maps: &[FeatureMap], compression: Compression) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(maps.iter().map(|m| m.dims().byte_len()).sum());
    for m in maps {
        for v in m.data() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(match compression {
        Compression::None => raw,
        Compression::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&raw)?;
            enc.finish()?
        }
    })
}

/// Checks the CRC, decompresses and splits one chunk into maps.
pub(crate) fn decode_chunk(
    entry: &ChunkIndexEntry,
    payload: &[u8],
    dims: Dims,
    compression: Compression,
) -> Result<Vec<FeatureMap>> {
    let corrupt = |detail: String| Error::Corruption {
        chunk: entry.chunk_ordinal,
        detail,
    };
    let crc = crc32fast::hash(payload);
    if crc != entry.checksum {
        return Err(corrupt(format!(
            "checksum mismatch at offset {}: stored {:08x}, computed {crc:08x}",
            entry.byte_offset, entry.checksum
        )));
    }
    let expected = entry.image_ids.len() * dims.byte_len();
    let raw = match compression {
        Compression::None => payload.to_vec(),
        Compression::Deflate => {
            let mut raw = Vec::with_capacity(expected);
            DeflateDecoder::new(payload)
                .take(expected as u64 + 1)
                .read_to_end(&mut raw)
                .map_err(|e| corrupt(format!("deflate stream: {e}")))?;
            raw
        }
    };
    if raw.len() != expected {
        return Err(corrupt(format!(
            "decoded {} bytes, expected {expected}",
            raw.len()
        )));
    }
    let map_bytes = dims.byte_len();
    entry
        .image_ids
        .iter()
        .enumerate()
        .map(|(n, id)| {
            let data: Vec<f32> = raw[n * map_bytes..(n + 1) * map_bytes]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            FeatureMap::new(id.clone(), dims, data).map_err(|e| corrupt(e.to_string()))
        })
        .collect()
}

fn read_payload(data: &mut File, data_len: u64, entry: &ChunkIndexEntry) -> Result<Vec<u8>> {
    if entry.end() > data_len {
        return Err(Error::Corruption {
            chunk: entry.chunk_ordinal,
            detail: format!(
                "data file ends at byte {data_len} but chunk spans [{}, {})",
                entry.byte_offset,
                entry.end()
            ),
        });
    }
    let mut buf = vec![0u8; entry.byte_length as usize];
    data.seek(SeekFrom::Start(entry.byte_offset))?;
    data.read_exact(&mut buf)?;
    Ok(buf)
}

/// Read-only view of a store. Cheap to clone; clones share the index.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
    manifest: StoreManifest,
    index: Arc<Vec<ChunkIndexEntry>>,
    locations: Arc<HashMap<String, (usize, usize)>>,
}

impl FeatureStore {
    /// Creates an empty store and returns its (only) writer.
    pub fn create(path: impl AsRef<Path>, manifest: StoreManifest) -> Result<StoreWriter> {
        let root = path.as_ref().to_path_buf();
        let mut manifest = manifest;
        manifest.validate()?;
        if root.join(MANIFEST_FILE).exists() {
            return Err(Error::AlreadyExists(root));
        }
        fs::create_dir_all(&root)?;
        let lock = acquire_lock(&root)?;
        manifest.image_count = 0;
        OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .open(root.join(DATA_FILE))?
            .sync_all()?;
        write_atomic(&root.join(INDEX_FILE), &[])?;
        write_manifest(&root, &manifest)?;
        Ok(StoreWriter {
            store: FeatureStore::from_parts(root, manifest, Vec::new())?,
            _lock: lock,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let manifest = read_manifest(&root)?;
        let index = read_index(&root)?;
        Self::from_parts(root, manifest, index)
    }

    fn from_parts(
        root: PathBuf,
        mut manifest: StoreManifest,
        index: Vec<ChunkIndexEntry>,
    ) -> Result<Self> {
        let mut locations = HashMap::new();
        for (c, entry) in index.iter().enumerate() {
            for (p, id) in entry.image_ids.iter().enumerate() {
                if locations.insert(id.clone(), (c, p)).is_some() {
                    return Err(Error::CorruptMetadata(format!(
                        "image id {id} appears twice in the index"
                    )));
                }
            }
        }
        // The index is authoritative; the manifest count may lag after a crash.
        manifest.image_count = locations.len() as u64;
        Ok(Self {
            root,
            manifest,
            index: Arc::new(index),
            locations: Arc::new(locations),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn dims(&self) -> Dims {
        self.manifest.dims
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.locations.contains_key(image_id)
    }

    pub fn index(&self) -> &[ChunkIndexEntry] {
        &self.index
    }

    /// All ids in index order.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.index
            .iter()
            .flat_map(|e| e.image_ids.iter().map(String::as_str))
    }

    /// Bytes needed to hold every map decompressed.
    pub fn decoded_bytes(&self) -> u64 {
        self.len() as u64 * self.dims().byte_len() as u64
    }

    fn data_file(&self) -> Result<(File, u64)> {
        let f = File::open(self.root.join(DATA_FILE))?;
        let len = f.metadata()?.len();
        Ok((f, len))
    }

    pub fn read_chunk(&self, ordinal: usize) -> Result<Vec<FeatureMap>> {
        let entry = self
            .index
            .get(ordinal)
            .ok_or_else(|| Error::NotFound(format!("chunk {ordinal}")))?;
        let (mut f, len) = self.data_file()?;
        let payload = read_payload(&mut f, len, entry)?;
        decode_chunk(entry, &payload, self.dims(), self.manifest.compression)
    }

    pub fn get_feature_map(&self, image_id: &str) -> Result<FeatureMap> {
        let &(chunk, pos) = self
            .locations
            .get(image_id)
            .ok_or_else(|| Error::NotFound(format!("image {image_id}")))?;
        let mut maps = self.read_chunk(chunk)?;
        Ok(maps.swap_remove(pos))
    }

    /// Streams every map once, in index order, `batch_size` at a time. A
    /// background thread decodes upcoming chunks while the caller works.
    pub fn iterate_batches(&self, batch_size: usize) -> Result<BatchIter> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let (tx, rx) = mpsc::sync_channel::<Result<Vec<FeatureMap>>>(1);
        let store = self.clone();
        let worker = std::thread::Builder::new()
            .name("featsearch-prefetch".into())
            .spawn(move || {
                let (mut f, len) = match store.data_file() {
                    Ok(v) => v,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                for entry in store.index.iter() {
                    let chunk = read_payload(&mut f, len, entry).and_then(|p| {
                        decode_chunk(entry, &p, store.dims(), store.manifest.compression)
                    });
                    let failed = chunk.is_err();
                    if tx.send(chunk).is_err() || failed {
                        return;
                    }
                }
            })?;
        Ok(BatchIter {
            rx: Some(rx),
            worker: Some(worker),
            pending: Vec::new(),
            batch_size,
            done: false,
        })
    }

    /// Decodes the whole store into memory.
    pub fn load_all(&self) -> Result<Vec<FeatureMap>> {
        let mut all = Vec::with_capacity(self.len());
        for batch in self.iterate_batches(self.manifest.images_per_chunk as usize)? {
            all.extend(batch?);
        }
        Ok(all)
    }
}

/// Iterator returned by [`FeatureStore::iterate_batches`]. Halts after the
/// first error.
pub struct BatchIter {
    rx: Option<Receiver<Result<Vec<FeatureMap>>>>,
    worker: Option<JoinHandle<()>>,
    pending: Vec<FeatureMap>,
    batch_size: usize,
    done: bool,
}

impl Iterator for BatchIter {
    type Item = Result<Vec<FeatureMap>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        while self.pending.len() < self.batch_size {
            match self.rx.as_ref().and_then(|rx| rx.recv().ok()) {
                Some(Ok(chunk)) => self.pending.extend(chunk),
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => break,
            }
        }
        if self.pending.is_empty() {
            self.done = true;
            return None;
        }
        let take = self.batch_size.min(self.pending.len());
        let rest = self.pending.split_off(take);
        Some(Ok(std::mem::replace(&mut self.pending, rest)))
    }
}

impl Drop for BatchIter {
    fn drop(&mut self) {
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn acquire_lock(root: &Path) -> Result<File> {
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(root.join(LOCK_FILE))?;
    match lock.try_lock() {
        Ok(()) => Ok(lock),
        Err(fs::TryLockError::WouldBlock) => Err(Error::invalid(format!(
            "store {} is already open for writing",
            root.display()
        ))),
        Err(fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

/// Exclusive append handle. Holds an OS file lock for its lifetime.
#[derive(Debug)]
pub struct StoreWriter {
    store: FeatureStore,
    _lock: File,
}

impl StoreWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let on_disk = read_manifest(&root)?;
        let lock = acquire_lock(&root)?;
        let store = FeatureStore::open(&root)?;
        let writer = StoreWriter { store, _lock: lock };
        if on_disk.image_count != writer.store.manifest.image_count {
            write_manifest(&root, &writer.store.manifest)?;
        }
        Ok(writer)
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.store.manifest
    }

    fn validate_new(&self, maps: &[FeatureMap]) -> Result<()> {
        let dims = self.store.dims();
        let mut seen = HashSet::with_capacity(maps.len());
        for m in maps {
            let id = m.image_id();
            if m.dims() != dims {
                return Err(Error::invalid(format!(
                    "feature map {id} has dims {} but the store holds {dims}",
                    m.dims()
                )));
            }
            if id.is_empty() || id.len() > u16::MAX as usize {
                return Err(Error::invalid(format!(
                    "image id must be 1..={} bytes, got {}",
                    u16::MAX,
                    id.len()
                )));
            }
            if self.store.contains(id) || !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate image id {id}")));
            }
        }
        Ok(())
    }

    /// Appends maps as new chunks. Nothing is written if any map is rejected.
    pub fn append(&mut self, maps: &[FeatureMap]) -> Result<usize> {
        self.validate_new(maps)?;
        if maps.is_empty() {
            return Ok(0);
        }
        let root = self.store.root.clone();
        let compression = self.store.manifest.compression;
        let per_chunk = self.store.manifest.images_per_chunk as usize;

        let mut index = (*self.store.index).clone();
        let mut offset = index.last().map_or(0, ChunkIndexEntry::end);
        let mut data = OpenOptions::new().write(true).open(root.join(DATA_FILE))?;
        // Bytes past the last indexed chunk belong to an interrupted append.
        data.set_len(offset)?;
        data.seek(SeekFrom::Start(offset))?;
        for group in maps.chunks(per_chunk) {
            let payload = encode_chunk(group, compression)?;
            data.write_all(&payload)?;
            index.push(ChunkIndexEntry {
                chunk_ordinal: index.len() as u32,
                byte_offset: offset,
                byte_length: payload.len() as u64,
                checksum: crc32fast::hash(&payload),
                image_ids: group.iter().map(|m| m.image_id().to_owned()).collect(),
            });
            offset += payload.len() as u64;
        }
        data.sync_all()?;

        write_atomic(&root.join(INDEX_FILE), &index::encode(&index))?;
        let manifest = self.store.manifest.clone();
        self.store = FeatureStore::from_parts(root.clone(), manifest, index)?;
        write_manifest(&root, &self.store.manifest)?;
        Ok(maps.len())
    }

    /// Ingests FMAP1 shards. Each shard is all-or-nothing; shards before a
    /// failing one stay ingested.
    pub fn ingest_interchange<P: AsRef<Path>>(&mut self, shard_paths: &[P]) -> Result<usize> {
        let mut total = 0;
        for path in shard_paths {
            let (header, maps) = shard::read_shard(path.as_ref())?;
            if header.dims != self.store.dims() {
                return Err(Error::invalid(format!(
                    "shard {} has dims {} but the store holds {}",
                    path.as_ref().display(),
                    header.dims,
                    self.store.dims()
                )));
            }
            total += self.append(&maps)?;
        }
        Ok(total)
    }

    /// Merges `labels` into the manifest's label map.
    pub fn set_labels(&mut self, labels: BTreeMap<String, String>) -> Result<()> {
        let mut manifest = self.store.manifest.clone();
        manifest
            .label_map
            .get_or_insert_with(BTreeMap::new)
            .extend(labels);
        write_manifest(&self.store.root, &manifest)?;
        self.store.manifest = manifest;
        Ok(())
    }
}
