//! Named parameter collection and the "difaug-params-v1" container.
//!
//! File layout: 4-byte little-endian header length, a JSON header with the
//! shape registry, then raw little-endian f64 values in registry order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DifaugError, Result};

use super::tape::{Tape, VarId};
use super::Tensor;

pub const PARAMS_VERSION: &str = "difaug-params-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    precision: String,
    endianness: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// Ordered, named parameter tensors with accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut t: Tensor) {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name {name}"
        );
        t.requires_grad = true;
        self.entries.push((name, t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Bind every parameter onto a tape; returned ids are in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<VarId> {
        self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    /// Bind without gradient tracking (frozen parameters).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<VarId> {
        self.entries
            .iter()
            .map(|(_, t)| {
                let mut frozen = t.clone();
                frozen.requires_grad = false;
                frozen.grad = None;
                tape.leaf(frozen)
            })
            .collect()
    }

    /// Accumulate a backward pass into stored gradients.
    pub fn accumulate(&mut self, grads: &super::tape::Grads, bound: &[VarId]) {
        for (i, var) in bound.iter().enumerate() {
            if let Some(g) = grads.get(*var) {
                let g = g.to_vec();
                self.entries[i].1.accumulate_grad(&g);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: PARAMS_VERSION.to_string(),
            precision: "f64".to_string(),
            endianness: "little".to_string(),
            tensors: self
                .entries
                .iter()
                .map(|(n, t)| TensorMeta { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| DifaugError::Other(format!("header encode: {e}")))?;
        let mut file = std::fs::File::create(path)
            .map_err(|e| DifaugError::io(path.display().to_string(), e))?;
        let werr = |e| DifaugError::io(path.display().to_string(), e);
        file.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(werr)?;
        file.write_all(&header_bytes).map_err(werr)?;
        for (_, t) in &self.entries {
            for v in t.data() {
                file.write_all(&v.to_le_bytes()).map_err(werr)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| DifaugError::io(path.display().to_string(), e))?;
        let rerr = |e| DifaugError::io(path.display().to_string(), e);
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes).map_err(rerr)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes).map_err(rerr)?;
        let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| {
            DifaugError::Parse { offset: 4, detail: format!("params header: {e}") }
        })?;
        if header.version != PARAMS_VERSION {
            return Err(DifaugError::Parse {
                offset: 4,
                detail: format!("unsupported params version {:?}", header.version),
            });
        }
        let mut store = ParamStore::new();
        let mut offset = 4 + header_len;
        for meta in header.tensors {
            let numel: usize = meta.shape.iter().product();
            let mut raw = vec![0u8; numel * 8];
            file.read_exact(&mut raw).map_err(|_| DifaugError::Parse {
                offset,
                detail: format!("truncated data for tensor {:?}", meta.name),
            })?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += numel * 8;
            store.add(meta.name, Tensor::from_vec(meta.shape, data)?);
        }
        Ok(store)
    }
}
