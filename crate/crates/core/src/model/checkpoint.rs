//! Versioned parameter container: magic `MWCK`, `u32` version, `u32` header
//! length, a JSON header (kind, config echo, labels and their hash, skeleton,
//! free-form metadata, tensor table), then little-endian f32 tensor data in
//! table order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::kinematics::Skeleton;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MWCK";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    labels: Vec<String>,
    label_hash: String,
    skeleton: Skeleton,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub labels: Vec<String>,
    pub skeleton: Skeleton,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn tensor_data(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1()?)
}

impl Checkpoint {
    pub fn from_store(
        kind: &str,
        config: serde_json::Value,
        labels: &LabelSet,
        skeleton: &Skeleton,
        meta: serde_json::Value,
        params: &ParamStore,
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, var) in params.iter() {
            tensors.insert(name.to_string(), (var.dims().to_vec(), tensor_data(var.as_tensor())?));
        }
        Ok(Self {
            kind: kind.to_string(),
            config,
            labels: labels.names().to_vec(),
            skeleton: skeleton.clone(),
            meta,
            tensors,
        })
    }

    /// Adds extra tensors (e.g. optimizer moments) under `prefix`.
    pub fn insert(&mut self, name: String, t: &Tensor) -> Result<()> {
        self.tensors.insert(name, (t.dims().to_vec(), tensor_data(t)?));
        Ok(())
    }

    pub fn tensor(&self, name: &str, device: &Device) -> Result<Option<Tensor>> {
        self.tensors
            .get(name)
            .map(|(shape, data)| Ok(Tensor::from_slice(data, shape.as_slice(), device)?))
            .transpose()
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    /// The stored label set, checked against `expected` when given.
    pub fn label_set(&self, expected: Option<&LabelSet>) -> Result<LabelSet> {
        let labels = LabelSet::from_names(self.labels.clone())?;
        if let Some(e) = expected {
            if e != &labels {
                return Err(Error::LabelSetMismatch {
                    checkpoint: labels.hash(),
                    expected: e.hash(),
                });
            }
        }
        Ok(labels)
    }

    /// Copies every parameter of `params` from this checkpoint.
    pub fn restore(&self, params: &ParamStore) -> Result<()> {
        for (name, var) in params.iter() {
            let (shape, data) = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if shape.as_slice() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {shape:?}, model expects {:?}",
                    var.dims()
                )));
            }
            params.set(name, &Tensor::from_slice(data, shape.as_slice(), params.device())?)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let labels = LabelSet::from_names(self.labels.clone())?;
        let header = Header {
            version: CHECKPOINT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            labels: self.labels.clone(),
            label_hash: labels.hash(),
            skeleton: self.skeleton.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, (shape, _))| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in self.tensors.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionUnsupported {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?)?;
        let labels = LabelSet::from_names(header.labels.clone())?;
        if labels.hash() != header.label_hash {
            return Err(bad("label hash does not match the stored labels"));
        }
        let mut offset = 12 + len;
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(&format!("truncated data for '{}'", entry.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(entry.name, (entry.shape, data));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            labels: header.labels,
            skeleton: header.skeleton,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
