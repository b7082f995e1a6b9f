//! FMAP1 interchange shards written by the feature extractor.
//!
//! Layout: the magic `FMAP1\n`, a little-endian `u32` header length, a UTF-8
//! JSON header `{"dims": [H, W, D], "dtype": "f32le", "image_ids": [...]}`,
//! then every tensor as raw row-major little-endian `f32`, in id order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap};

pub const SHARD_MAGIC: &[u8; 6] = b"FMAP1\n";
pub const SHARD_DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub dims: Dims,
    pub dtype: String,
    pub image_ids: Vec<String>,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_shard(maps: &[FeatureMap]) -> Result<Vec<u8>> {
    let dims = match maps.first() {
        Some(m) => m.dims(),
        None => return Err(Error::invalid("a shard needs at least one feature map")),
    };
    if let Some(m) = maps.iter().find(|m| m.dims() != dims) {
        return Err(Error::invalid(format!(
            "feature map {} has dims {} but the shard has {dims}",
            m.image_id(),
            m.dims()
        )));
    }
    let header = ShardHeader {
        dims,
        dtype: SHARD_DTYPE.into(),
        image_ids: maps.iter().map(|m| m.image_id().to_owned()).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + header.len() + maps.len() * dims.byte_len());
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for m in maps {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_shard(path: impl AsRef<Path>, maps: &[FeatureMap]) -> Result<()> {
    let bytes = encode_shard(maps)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn decode_shard(bytes: &[u8]) -> Result<(ShardHeader, Vec<FeatureMap>)> {
    if bytes.len() < SHARD_MAGIC.len() || &bytes[..SHARD_MAGIC.len()] != SHARD_MAGIC {
        return Err(parse_err(0, "missing FMAP1 magic"));
    }
    let mut pos = SHARD_MAGIC.len();
    if bytes.len() < pos + 4 {
        return Err(parse_err(pos, "truncated header length"));
    }
    let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if bytes.len() - pos < header_len {
        return Err(parse_err(
            bytes.len(),
            format!("header needs {header_len} bytes from offset {pos}"),
        ));
    }
    let header: ShardHeader = serde_json::from_slice(&bytes[pos..pos + header_len])
        .map_err(|e| parse_err(pos, format!("bad header JSON: {e}")))?;
    if header.dtype != SHARD_DTYPE {
        return Err(parse_err(
            pos,
            format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    header
        .dims
        .validate()
        .map_err(|e| parse_err(pos, e.to_string()))?;
    pos += header_len;

    let map_bytes = header.dims.byte_len();
    let expected = header.image_ids.len() * map_bytes;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(parse_err(
            bytes.len(),
            format!(
                "payload truncated: {} tensors need {expected} bytes, found {}",
                header.image_ids.len(),
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(parse_err(pos + expected, "trailing bytes after payload"));
    }

    let mut maps = Vec::with_capacity(header.image_ids.len());
    for (n, id) in header.image_ids.iter().enumerate() {
        let start = n * map_bytes;
        let raw = &payload[start..start + map_bytes];
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(
                pos + start + bad * 4,
                format!("non-finite value in tensor {id}"),
            ));
        }
        maps.push(FeatureMap::new(id.clone(), header.dims, data)?);
    }
    Ok((header, maps))
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<(ShardHeader, Vec<FeatureMap>)> {
    decode_shard(&std::fs::read(path)?)
}
