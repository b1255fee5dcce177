use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Result, SsrError};
use crate::model::{ModelParams, ModelShape};
use crate::spectral::{BandPartition, Modality};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    shape: ModelShape,
    partitions: Vec<(Modality, BandPartition)>,
    best_epoch: usize,
    tensors: Vec<TensorEntry>,
}

/// A trained model: configuration, fixed band partitions and parameters.
/// Parameters are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub partitions: Vec<(Modality, BandPartition)>,
    pub best_epoch: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Rounds every parameter to `f32`, the precision it is stored at.
    pub fn quantized(mut self) -> Self {
        for (_, t) in self.params.store.iter_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
        self
    }
}

fn format_error(path: &Path, offset: usize, reason: impl Into<String>) -> SsrError {
    SsrError::Format { path: path.display().to_string(), offset: offset as u64, reason: reason.into() }
}

/// Magic, `u32` version, `u64` header length, JSON header, then each tensor's
/// `f32` values in header order, all little endian.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors: Vec<TensorEntry> = ckpt
        .params
        .store
        .iter()
        .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
        .collect();
    let header = Header {
        config: ckpt.config.clone(),
        config_hash: ckpt.config.hash(),
        shape: ckpt.params.shape.clone(),
        partitions: ckpt.partitions.clone(),
        best_epoch: ckpt.best_epoch,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| SsrError::InvalidArgument(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in ckpt.params.store.iter() {
        for &v in t.iter() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(SsrError::NonFinite(format!("parameter {name}")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(format_error(path, bytes.len(), "truncated header"));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_error(path, 0, "not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format_error(path, 4, format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| format_error(path, 8, "header length past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..json_end]).map_err(|e| format_error(path, 16, e.to_string()))?;
    if header.config_hash != header.config.hash() {
        return Err(format_error(path, 16, "config hash does not match config"));
    }
    let mut store = ParamStore::new();
    let mut offset = json_end;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(format_error(path, bytes.len(), format!("tensor {} truncated", entry.name)));
        }
        let values: Vec<f64> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format_error(path, offset + 4 * i, format!("non-finite value in {}", entry.name)));
        }
        store.insert(entry.name.clone(), ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked"));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(format_error(path, offset, "trailing bytes"));
    }
    let params = ModelParams::from_store(header.shape, store)?;
    Ok(Checkpoint { config: header.config, partitions: header.partitions, best_epoch: header.best_epoch, params })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| SsrError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| SsrError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
