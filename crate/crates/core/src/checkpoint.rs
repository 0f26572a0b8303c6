//! Single-file checkpoints.
//!
//! Layout: `DSCK`, u32 version, u32 header length, UTF-8 JSON header, then
//! the tensors as little-endian `f32` in header order. Tensor offsets are
//! byte offsets from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, Vocabulary};
use crate::error::{CoreError, Result};
use crate::model::{DsTts, ModelConfig};
use crate::params::ParamStore;
use crate::Mat;

pub const MAGIC: &[u8; 4] = b"DSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: u64,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    run: serde_json::Value,
    vocabulary: Vec<String>,
    stats: FeatureStats,
    step: u64,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to rebuild a model for synthesis or evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DsTts,
    /// Free-form run configuration recorded alongside the model.
    pub run: serde_json::Value,
    pub vocabulary: Vocabulary,
    pub stats: FeatureStats,
    pub step: u64,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.model.params.len());
        let mut payload = Vec::with_capacity(self.model.params.scalar_count() * 4);
        for (_, name, value) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                offset: payload.len() as u64,
                shape: [value.nrows(), value.ncols()],
            });
            for &v in value.iter() {
                let v = v as f32;
                if !v.is_finite() {
                    return Err(CoreError::NonFinite(format!("tensor {name} at f32 precision")));
                }
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model: self.model.config.clone(),
            run: self.run.clone(),
            vocabulary: self.vocabulary.symbols().to_vec(),
            stats: self.stats,
            step: self.step,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CoreError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing DSCK magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported version {}", word(4))));
        }
        let header_len = word(8) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        let payload = &bytes[header_end..];

        let model_shell = DsTts::new(header.model.clone(), 0)?;
        let mut params = ParamStore::new();
        let mut expected_offset = 0u64;
        for entry in &header.tensors {
            let count = entry.shape[0] * entry.shape[1];
            if entry.offset != expected_offset {
                return Err(CoreError::Checkpoint(format!("tensor {} at unexpected offset", entry.name)));
            }
            let start = entry.offset as usize;
            let end = start + 4 * count;
            if end > payload.len() {
                return Err(CoreError::Checkpoint(format!("tensor {} runs past the payload", entry.name)));
            }
            let values: Vec<f64> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let m = Mat::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                .map_err(|e| CoreError::Checkpoint(e.to_string()))?;
            params.insert(entry.name.clone(), m);
            expected_offset = end as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        let mut model = model_shell;
        if params.len() != model.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} tensors stored, architecture has {}",
                params.len(),
                model.params.len()
            )));
        }
        for (_, name, value) in params.iter() {
            model.params.assign(name, value.clone())?;
        }
        let vocabulary = Vocabulary::new(header.vocabulary)?;
        if vocabulary.len() != model.config.vocab_size {
            return Err(bad("vocabulary size disagrees with the model"));
        }
        Ok(Self {
            model,
            run: header.run,
            vocabulary,
            stats: header.stats,
            step: header.step,
        })
    }

    /// Writes through a temporary file so an interrupted save never
    /// replaces an existing checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| CoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::decode(&bytes)
    }
}
