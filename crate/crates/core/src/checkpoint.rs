//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"UPDACKPT"            magic
//! u32                    format version (1)
//! u64                    index length in bytes
//! [index]                UTF-8 JSON index
//! [payload]              row-major f64 tensors, little-endian
//! ```
//!
//! The index lists every tensor with its name, shape, trainable flag and
//! byte offset into the payload, plus a free-form metadata object that the
//! model uses to record its architecture.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"UPDACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Index {
    version: u32,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value, params: ParamSet) -> Self {
        Self { metadata, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, p) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                trainable: p.trainable,
                offset,
            });
            offset += 8 * p.value.len() as u64;
        }
        let index = Index {
            version: FORMAT_VERSION,
            metadata: self.metadata.clone(),
            tensors,
        };
        let index = serde_json::to_vec(&index).expect("index serializes");
        let mut out = Vec::with_capacity(20 + index.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        for (_, p) in self.params.iter() {
            for v in p.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or truncated header)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let index_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload_start = 20usize
            .checked_add(index_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated index".into()))?;
        let index: Index =
            serde_json::from_slice(&bytes[20..payload_start]).map_err(|e| bad(format!("bad index: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut params = ParamSet::new();
        let mut expected_offset = 0u64;
        for t in index.tensors {
            if t.offset != expected_offset {
                return Err(bad(format!(
                    "tensor `{}` has offset {}, expected {expected_offset}",
                    t.name, t.offset
                )));
            }
            let len = t.rows * t.cols;
            let start = t.offset as usize;
            let end = start + 8 * len;
            if end > payload.len() {
                return Err(bad(format!("tensor `{}` runs past the payload", t.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(t.name, Matrix::from_vec(t.rows, t.cols, data), t.trainable);
            expected_offset = end as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(bad("trailing bytes after the last tensor".into()));
        }
        Ok(Self {
            metadata: index.metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), frozen in any::<bool>()) {
            let mut p = ParamSet::new();
            p.insert("g.l1.w", Matrix::row_vector(values.clone()), true);
            p.insert("g.in_mean", Matrix::column_vector(values), !frozen);
            let c = Checkpoint::new(serde_json::json!({"d": 4}), p);
            prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }

    #[test]
    fn truncation_is_an_error() {
        let mut p = ParamSet::new();
        p.insert("reg.l1.w", Matrix::identity(3), true);
        let bytes = Checkpoint::new(serde_json::Value::Null, p).to_bytes();
        for cut in [0, 10, 25, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }
}
