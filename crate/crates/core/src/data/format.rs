//! `SRNF` feature files: magic, version, dim, count, then `count × dim`
//! little-endian `f32` values.

use std::io::{Read, Write};

use super::DataError;

pub const FEATURE_MAGIC: &[u8; 4] = b"SRNF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Raw contents of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

pub fn encode_features(dim: usize, rows: &[Vec<f32>]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(rows.len(), "count")?.to_le_bytes());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(DataError::DimensionMismatch {
                context: format!("row {i}"),
                expected: dim,
                actual: row.len(),
            });
        }
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn to_u32(v: usize, what: &str) -> Result<u32, DataError> {
    u32::try_from(v).map_err(|_| DataError::CorruptFormat(format!("{what} {v} exceeds u32")))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureBlock, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataError::CorruptFormat(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(DataError::CorruptFormat(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(DataError::CorruptFormat(format!(
            "unsupported version {version}"
        )));
    }
    let dim = word(8) as usize;
    let count = word(12) as usize;
    if dim == 0 {
        return Err(DataError::CorruptFormat("dim is zero".into()));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| DataError::CorruptFormat("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(DataError::CorruptFormat(format!(
            "expected {expected} bytes for {count}×{dim}, found {}",
            bytes.len()
        )));
    }
    let rows = bytes[HEADER_LEN..]
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok(FeatureBlock { dim, rows })
}

pub fn read_features(mut reader: impl Read) -> Result<FeatureBlock, DataError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_features(&bytes)
}

pub fn write_features(mut writer: impl Write, dim: usize, rows: &[Vec<f32>]) -> Result<(), DataError> {
    writer.write_all(&encode_features(dim, rows)?)?;
    Ok(())
}
