//! Flat binary field snapshots.
//!
//! Layout: `N` as little-endian `u32`, `Lpatches` as little-endian `u32`,
//! then `N*N` little-endian `f64` values, row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::Field2D;
use crate::error::{Error, Result};

pub fn encode(field: &Field2D) -> Result<Vec<u8>> {
    let patches = field.length.round();
    if (field.length - patches).abs() > 1e-12 || patches < 1.0 {
        return Err(Error::invalid(format!(
            "snapshot needs an integer patch count, domain length is {}",
            field.length
        )));
    }
    let mut out = Vec::with_capacity(8 + 8 * field.values.len());
    out.extend_from_slice(&(field.n as u32).to_le_bytes());
    out.extend_from_slice(&(patches as u32).to_le_bytes());
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Field2D> {
    let bad = |msg: &str| Error::Parse {
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 8 {
        return Err(bad("snapshot shorter than its header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let patches = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let body = &bytes[8..];
    if body.len() != n * n * 8 {
        return Err(bad("snapshot body length does not match N*N doubles"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Field2D {
        n,
        length: patches as f64,
        values,
    })
}

pub fn write_snapshot(field: &Field2D, path: &Path) -> Result<()> {
    let bytes = encode(field)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Field2D> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
