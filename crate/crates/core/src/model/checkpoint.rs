//! Parameters as little-endian `f64` arrays in one binary file, described by
//! a JSON manifest holding names, shapes, offsets and the model config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::Model;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "ptdet-checkpoint-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
    /// Offset into the binary file, in values.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    data_file: String,
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: serde_json::Value,
}

fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (JSON manifest) and `<path>` with a `.bin` extension.
pub fn save_checkpoint(path: &Path, model: &Model, metadata: serde_json::Value) -> Result<()> {
    let mut bytes = Vec::with_capacity(model.params.num_values() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    let all = model
        .params
        .iter()
        .map(|(n, t)| (n, t, Kind::Param))
        .chain(model.params.buffers().map(|(n, t)| (n, t, Kind::Buffer)));
    for (name, t, kind) in all {
        tensors.push(Entry { name: name.clone(), kind, shape: t.shape().to_vec(), offset });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    let bin = data_path(path);
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config.clone(),
        data_file: bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
        metadata,
    };
    write_atomic(&bin, &bytes)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    let bin_path = path.with_file_name(&manifest.data_file);
    let bytes = std::fs::read(&bin_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: length not a multiple of 8", bin_path.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamStore::new();
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Format(format!("tensor {} runs past the data file", e.name)))?
            .to_vec();
        let t = Tensor::new(e.shape.clone(), data)?;
        match e.kind {
            Kind::Param => params.insert(e.name.clone(), t),
            Kind::Buffer => params.insert_buffer(e.name.clone(), t),
        }
    }
    Ok(Checkpoint {
        model: Model { config: manifest.config, params },
        metadata: manifest.metadata,
    })
}
