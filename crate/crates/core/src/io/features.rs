use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, SsrError};

/// Leading bytes of a feature matrix file.
pub const FEATURE_MAGIC: [u8; 4] = *b"SSRF";
const HEADER_LEN: usize = 12;

fn format_error(path: &Path, offset: usize, reason: impl Into<String>) -> SsrError {
    SsrError::Format { path: path.display().to_string(), offset: offset as u64, reason: reason.into() }
}

/// Parses the binary container: magic, `u32` rows, `u32` columns (little
/// endian), then a row-major `f32` payload.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_error(path, bytes.len(), "truncated header"));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(format_error(path, 0, format!("bad magic {:?}", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_error(path, 4, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(format_error(
            path,
            HEADER_LEN + payload.len().min(expected),
            format!("payload has {} bytes, {rows}x{cols} needs {expected}", payload.len()),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_error(path, HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        values.push(v as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

pub fn encode_features(x: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, cols) = x.dim();
    let too_big = |n: usize| u32::try_from(n).map_err(|_| SsrError::InvalidArgument(format!("dimension {n} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&too_big(rows)?.to_le_bytes());
    out.extend_from_slice(&too_big(cols)?.to_le_bytes());
    for &v in x.iter() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(SsrError::NonFinite(format!("feature value {v}")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn load_features(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| SsrError::io(path, e))?;
    decode_features(&bytes, path)
}

/// Values are stored as `f32`.
pub fn save_features(path: &Path, x: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_features(x)?).map_err(|e| SsrError::io(path, e))
}

/// Comma-separated rows of numbers, no header.
pub fn load_features_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_error(path, 0, e.to_string()))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            format_error(path, offset, e.to_string())
        })?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(format_error(path, offset, format!("row {rows} has {} columns", record.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| format_error(path, offset, format!("row {rows}: not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(format_error(path, offset, format!("row {rows}: non-finite value")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| format_error(path, 0, "no rows"))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("rectangular"))
}
