//! `HYQR1` parameter container.
//!
//! Layout: the 5-byte magic `HYQR1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the raw little-endian `f64` payloads. Tensor
//! offsets in the header are byte offsets from the start of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::param::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"HYQR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Named tensors read back from a checkpoint, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

pub fn encode(store: &ParamStore, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::new();
    for (_, p) in store.iter() {
        let (r, c) = p.value.shape();
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [r, c],
            dtype: "f64".into(),
            offset: payload.len(),
            len: r * c * 8,
        });
        for x in p.value.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        format: "HYQR1".into(),
        meta,
        tensors,
    })?;
    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |message: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_owned(),
    };
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing HYQR1 magic"));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[5..13]);
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header_end = 13usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[13..header_end])?;
    let payload = &bytes[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        if t.dtype != "f64" {
            return Err(bad(&format!("unsupported dtype `{}`", t.dtype)));
        }
        let [r, c] = t.shape;
        if t.len != r * c * 8 || t.offset + t.len > payload.len() {
            return Err(bad(&format!("tensor `{}` out of bounds", t.name)));
        }
        let data = payload[t.offset..t.offset + t.len]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        tensors.push((t.name, Matrix::new(r, c, data)?));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn save(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let bytes = encode(store, meta)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
