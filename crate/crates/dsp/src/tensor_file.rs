//! The `DSTT` feature tensor format.
//!
//! ```text
//! b"DSTT" | u32 version (=1) | u8 rank | rank x u32 dims | f32 payload
//! ```
//!
//! All integers and floats are little-endian; the payload is row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{DspError, Result};

pub const MAGIC: &[u8; 4] = b"DSTT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(DspError::TensorFormat(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_vec(values: &[f64]) -> Self {
        Self {
            dims: vec![values.len()],
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        Self {
            dims: vec![a.nrows(), a.ncols()],
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        let (r, c) = match self.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            other => {
                return Err(DspError::TensorFormat(format!(
                    "expected a rank-2 tensor, got dims {other:?}"
                )))
            }
        };
        Ok(Array2::from_shape_vec((r, c), self.to_vec()).expect("length checked on construction"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| DspError::TensorFormat(m.to_string());
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(bad("missing DSTT magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(DspError::TensorFormat(format!("unsupported version {version}")));
        }
        let rank = bytes[8] as usize;
        let header = 9 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated dims"));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|i| u32::from_le_bytes(bytes[9 + 4 * i..13 + 4 * i].try_into().unwrap()) as usize)
            .collect();
        let count: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != 4 * count {
            return Err(DspError::TensorFormat(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|source| DspError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DspError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}
