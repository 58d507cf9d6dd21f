//! Checkpoint layout:
//!
//! ```text
//! "GFCK" | u32 version | u32 header_len | header JSON | f32 LE parameters
//! ```
//!
//! The header holds the field config, the scale normalizer and the length of
//! each parameter group. Parameters follow in model order: hash table, then
//! each MLP layer's weights (row-major, `in x out`) and bias.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AffinityField, FieldConfig, FieldError, Real};
use crate::scale::ScaleNormalizer;

const MAGIC: &[u8; 4] = b"GFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: FieldConfig,
    normalizer: ScaleNormalizer,
    table_len: usize,
    layers: Vec<(usize, usize)>,
}

pub fn to_bytes<R: Real>(model: &AffinityField<R>) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        table_len: model.grid.table.len(),
        layers: model.mlp.weights.iter().map(|w| w.dim()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for group in model.param_slices() {
        for v in group {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes<R: Real>(bytes: &[u8]) -> Result<AffinityField<R>, CheckpointError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let version = word(4);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let json_len = word(8) as usize;
    let body = 12 + json_len;
    let header: Header = serde_json::from_slice(bytes.get(12..body).ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut model = AffinityField::<R>::new(header.config, header.normalizer)?;
    let expected_layers: Vec<(usize, usize)> = model.mlp.weights.iter().map(|w| w.dim()).collect();
    if header.table_len != model.grid.table.len() || header.layers != expected_layers {
        return Err(CheckpointError::Corrupt("parameter shapes do not match the config".into()));
    }
    let n = model.param_count();
    if bytes.len() != body + 4 * n {
        return Err(CheckpointError::Corrupt(format!("expected {} parameter bytes, found {}", 4 * n, bytes.len() - body)));
    }
    let mut at = body;
    for group in model.param_slices_mut() {
        for v in group.iter_mut() {
            *v = R::from_f64(f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as f64);
            at += 4;
        }
    }
    Ok(model)
}

pub fn save<R: Real>(model: &AffinityField<R>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<R: Real>(path: &Path) -> Result<AffinityField<R>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

impl<R: Real> AffinityField<R> {
    /// Same model with parameters converted to another precision.
    pub fn cast<S: Real>(&self) -> AffinityField<S> {
        let conv = |v: &R| S::from_f64(v.as_f64());
        AffinityField {
            config: self.config.clone(),
            grid: super::HashGrid {
                n_levels: self.grid.n_levels,
                features: self.grid.features,
                resolutions: self.grid.resolutions.clone(),
                offsets: self.grid.offsets.clone(),
                hashed: self.grid.hashed.clone(),
                table: self.grid.table.iter().map(conv).collect(),
                aabb: self.grid.aabb,
            },
            mlp: super::Mlp {
                weights: self.mlp.weights.iter().map(|w: &Array2<R>| w.map(conv)).collect(),
                biases: self.mlp.biases.iter().map(|b: &Array1<R>| b.map(conv)).collect(),
            },
            normalizer: self.normalizer.clone(),
        }
    }
}
