//! Self-describing little-endian checkpoint container.
//!
//! Layout: magic `"SUMO"`, format version `u32`, header length `u64`, a JSON
//! header (architecture, ordered name/shape table, training metadata,
//! optimizer step), then the raw `f32` blocks in table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelParams, TrainingMeta};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"SUMO";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    meta: TrainingMeta,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Model plus optional extra named tensors (optimizer moments) stored after
/// the model tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams<f32>,
    pub optimizer_step: Option<u64>,
    pub extra: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(model: ModelParams<f32>) -> Self {
        Self { model, optimizer_step: None, extra: Vec::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, &Tensor<f32>)> =
            self.model.tensors().into_iter().map(|(n, _, t)| (n, t)).collect();
        entries.extend(self.extra.iter().map(|(n, t)| (n.clone(), t)));
        let header = Header {
            arch: self.model.arch.clone(),
            meta: self.model.meta.clone(),
            optimizer_step: self.optimizer_step,
            tensors: entries
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = entries.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 16 {
            return Err(fmt("checkpoint truncated before header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic, not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(fmt("checkpoint truncated inside header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        header.arch.validate().map_err(|e| Error::Format(format!("checkpoint arch: {e}")))?;

        let mut model = ModelParams::<f32>::build(&header.arch, 0)?;
        let expected: Vec<TensorEntry> = model
            .tensors()
            .into_iter()
            .map(|(name, _, t)| TensorEntry { name, shape: t.shape().to_vec() })
            .collect();
        if header.tensors.len() < expected.len() || header.tensors[..expected.len()] != expected[..] {
            return Err(fmt("tensor table does not match the checkpoint architecture"));
        }

        let mut data = &body[hlen..];
        let mut read = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n: usize = shape.iter().product();
            if data.len() < 4 * n {
                return Err(fmt("checkpoint truncated inside tensor data"));
            }
            let vals = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[4 * n..];
            Tensor::new(shape.to_vec(), vals).map_err(|e| Error::Format(e.to_string()))
        };
        for ((_, _, dst), entry) in model.tensors_mut().into_iter().zip(&header.tensors) {
            *dst = read(&entry.shape)?;
        }
        let mut extra = Vec::new();
        for entry in &header.tensors[expected.len()..] {
            extra.push((entry.name.clone(), read(&entry.shape)?));
        }
        if !data.is_empty() {
            return Err(fmt("trailing bytes after tensor data"));
        }
        model.meta = header.meta;
        Ok(Self { model, optimizer_step: header.optimizer_step, extra })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(params.clone()).save(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

/// Loads a checkpoint and insists it was built from `arch`.
pub fn load_expecting(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<ModelParams<f32>> {
    let model = load(path)?;
    if &model.arch != arch {
        return Err(Error::Format(format!(
            "checkpoint architecture {:?} differs from requested {:?}",
            model.arch, arch
        )));
    }
    Ok(model)
}
