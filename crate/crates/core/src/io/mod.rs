//! File formats: feature matrices, interaction logs, checkpoints and the
//! diagnostic tables.

mod checkpoint;
mod features;
mod interactions;

#[cfg(test)]
mod tests;

use std::fs;
use std::path::Path;

use serde::Serialize;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use features::{decode_features, encode_features, load_features, load_features_csv, save_features, FEATURE_MAGIC};
pub use interactions::{load_interactions, parse_interactions, save_id_map, save_interactions, LoadedInteractions};

use crate::error::{Result, SsrError};
use crate::evaluator::CenterDistances;
use crate::spectral::Modality;

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SsrError::Format {
        path: path.display().to_string(),
        offset: 0,
        reason: e.to_string(),
    })?;
    for row in rows {
        w.serialize(row).map_err(|e| SsrError::Format {
            path: path.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| SsrError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| SsrError::InvalidArgument(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SsrError::io(path, e))
}

/// One entry of a center-distance matrix in long form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub band: usize,
    pub from: Modality,
    pub to: Modality,
    pub distance: f64,
}

pub fn distance_rows(tables: &[CenterDistances]) -> Vec<DistanceRow> {
    let mut rows = Vec::new();
    for t in tables {
        for (i, &from) in t.modalities.iter().enumerate() {
            for (j, &to) in t.modalities.iter().enumerate() {
                rows.push(DistanceRow { band: t.band, from, to, distance: t.distances[[i, j]] });
            }
        }
    }
    rows
}
