//! Shared binary layout for checkpoints and feature files:
//!
//! ```text
//! magic[4] | version: u32 LE | header_len: u64 LE | header (UTF-8 JSON)
//!          | payload: f64 LE × n | crc32(payload): u32 LE
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) fn encode(magic: &[u8; 4], version: u32, header: &[u8], payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + payload.len() * 8 + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    let start = out.len();
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Splits a container, checking magic, version, length and CRC.
///
/// `payload_len` receives the raw header and returns the number of `f64`
/// values the header promises.
pub(crate) fn decode<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    version: u32,
    payload_len: impl FnOnce(&'a [u8]) -> Result<usize>,
) -> Result<(&'a [u8], Vec<f64>)> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "truncated: {} bytes is shorter than the fixed preamble",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::Version {
            found,
            supported: version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| Error::Format("truncated: header runs past end of file".into()))?;
    let header = &bytes[16..header_end];
    let n = payload_len(header)?;
    let rest = &bytes[header_end..];
    let expected = n * 8 + 4;
    if rest.len() != expected {
        return Err(Error::Format(format!(
            "truncated or oversized payload: header promises {expected} bytes, found {}",
            rest.len()
        )));
    }
    let (payload, crc_bytes) = rest.split_at(n * 8);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Byte offset where the payload begins.
/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) fn payload_offset(bytes: &[u8]) -> Option<usize> {
    let len = u64::from_le_bytes(bytes.get(8..16)?.try_into().ok()?) as usize;
    Some(16 + len)
}
