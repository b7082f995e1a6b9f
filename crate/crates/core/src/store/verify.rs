use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use serde::Serialize;

use super::{decode_chunk, read_index, read_manifest, read_payload, DATA_FILE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkStatus {
    pub ordinal: u32,
    pub byte_offset: u64,
    pub byte_length: u64,
    pub images: usize,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub image_count: u64,
    pub chunks: Vec<ChunkStatus>,
    /// Store-level problems not tied to a single chunk.
    pub issues: Vec<String>,
}

impl VerifyReport {
    pub fn failed_chunks(&self) -> impl Iterator<Item = &ChunkStatus> {
        self.chunks.iter().filter(|c| !c.ok)
    }
}

/// Checks every chunk checksum and payload plus index and manifest
/// consistency. Damage is reported, never returned as an error.
pub fn verify_store(path: impl AsRef<Path>) -> VerifyReport {
    let root = path.as_ref();
    let mut report = VerifyReport {
        ok: false,
        image_count: 0,
        chunks: Vec::new(),
        issues: Vec::new(),
    };
    let manifest = match read_manifest(root) {
        Ok(m) => m,
        Err(e) => {
            report.issues.push(format!("manifest: {e}"));
            return report;
        }
    };
    let index = match read_index(root) {
        Ok(i) => i,
        Err(e) => {
            report.issues.push(format!("index: {e}"));
            return report;
        }
    };
    let (mut data, data_len) =
        match File::open(root.join(DATA_FILE)).and_then(|f| f.metadata().map(|m| (f, m.len()))) {
            Ok(v) => v,
            Err(e) => {
                report.issues.push(format!("data file: {e}"));
                return report;
            }
        };

    let mut seen = HashSet::new();
    let mut prev_end = 0u64;
    for (n, entry) in index.iter().enumerate() {
        let mut problems = Vec::new();
        if entry.chunk_ordinal as usize != n {
            problems.push(format!("ordinal {} at position {n}", entry.chunk_ordinal));
        }
        if entry.byte_offset < prev_end {
            problems.push(format!(
                "offset {} overlaps previous chunk ending at {prev_end}",
                entry.byte_offset
            ));
        }
        if entry.image_ids.is_empty() || entry.image_ids.len() > manifest.images_per_chunk as usize
        {
            problems.push(format!(
                "{} images, expected 1..={}",
                entry.image_ids.len(),
                manifest.images_per_chunk
            ));
        }
        for id in &entry.image_ids {
            if !seen.insert(id.as_str()) {
                problems.push(format!("duplicate image id {id}"));
            }
        }
        if let Err(e) = read_payload(&mut data, data_len, entry)
            .and_then(|p| decode_chunk(entry, &p, manifest.dims, manifest.compression))
        {
            problems.push(e.to_string());
        }
        prev_end = prev_end.max(entry.end());
        report.image_count += entry.image_ids.len() as u64;
        report.chunks.push(ChunkStatus {
            ordinal: entry.chunk_ordinal,
            byte_offset: entry.byte_offset,
            byte_length: entry.byte_length,
            images: entry.image_ids.len(),
            ok: problems.is_empty(),
            error: (!problems.is_empty()).then(|| problems.join("; ")),
        });
    }
    if manifest.image_count != report.image_count {
        report.issues.push(format!(
            "manifest image_count {} but index holds {}",
            manifest.image_count, report.image_count
        ));
    }
    report.ok = report.issues.is_empty() && report.chunks.iter().all(|c| c.ok);
    report
}
