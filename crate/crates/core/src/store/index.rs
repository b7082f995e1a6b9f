//! `index.bin` codec. Records are little-endian:
//! `u32 ordinal, u64 offset, u64 length, u32 crc32, u16 id_count`, then
//! `id_count` ids, each a `u16` byte length followed by UTF-8 bytes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkIndexEntry {
    pub chunk_ordinal: u32,
    pub byte_offset: u64,
    pub byte_length: u64,
    /// CRC-32 of the compressed payload.
    pub checksum: u32,
    pub image_ids: Vec<String>,
}

impl ChunkIndexEntry {
    pub fn end(&self) -> u64 {
        self.byte_offset + self.byte_length
    }
}

pub fn encode(entries: &[ChunkIndexEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend_from_slice(&e.chunk_ordinal.to_le_bytes());
        out.extend_from_slice(&e.byte_offset.to_le_bytes());
        out.extend_from_slice(&e.byte_length.to_le_bytes());
        out.extend_from_slice(&e.checksum.to_le_bytes());
        out.extend_from_slice(&(e.image_ids.len() as u16).to_le_bytes());
        for id in &e.image_ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptMetadata(format!(
                "index truncated reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<ChunkIndexEntry>> {
    let mut r = Reader { buf, pos: 0 };
    let mut entries = Vec::new();
    while r.pos < buf.len() {
        let chunk_ordinal = r.u32("ordinal")?;
        let byte_offset = r.u64("offset")?;
        let byte_length = r.u64("length")?;
        let checksum = r.u32("checksum")?;
        let count = r.u16("id count")?;
        let mut image_ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u16("id length")? as usize;
            let at = r.pos;
            let bytes = r.take(len, "id")?;
            let id = std::str::from_utf8(bytes).map_err(|_| {
                Error::CorruptMetadata(format!("index id at byte {at} is not UTF-8"))
            })?;
            image_ids.push(id.to_owned());
        }
        entries.push(ChunkIndexEntry {
            chunk_ordinal,
            byte_offset,
            byte_length,
            checksum,
            image_ids,
        });
    }
    Ok(entries)
}
