//! JSON checkpoint container: config plus named tensors stored as base64
//! little-endian bytes, so a save/load round trip is bit-exact.

use std::path::Path;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FusionModel, FusionModelConfig};
use crate::tensor::{Real, Tensor};

pub const FORMAT: &str = "mmreid-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] super::ModelError),
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    dtype: String,
    config: FusionModelConfig,
    params: Vec<StoredTensor>,
    buffers: Vec<StoredTensor>,
}

fn encode<T: Real>(name: &str, t: &Tensor<T>) -> StoredTensor {
    let mut bytes = Vec::with_capacity(t.numel() * T::BYTES);
    for &v in t.data() {
        v.write_le(&mut bytes);
    }
    StoredTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: base64::engine::general_purpose::STANDARD.encode(bytes),
    }
}

fn decode<T: Real>(s: &StoredTensor, expect: &Tensor<T>) -> Result<Tensor<T>, CheckpointError> {
    if s.shape != expect.shape() {
        return Err(CheckpointError::Format(format!(
            "{}: stored shape {:?}, model expects {:?}",
            s.name,
            s.shape,
            expect.shape()
        )));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(&s.data)
        .map_err(|e| CheckpointError::Format(format!("{}: {e}", s.name)))?;
    if bytes.len() != expect.numel() * T::BYTES {
        return Err(CheckpointError::Format(format!("{}: truncated data", s.name)));
    }
    let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(&s.shape, data).map_err(|e| CheckpointError::Format(e.to_string()))
}

pub fn to_json<T: Real>(model: &FusionModel<T>) -> Result<String, CheckpointError> {
    let c = Container {
        format: FORMAT.into(),
        version: VERSION,
        dtype: T::DTYPE.into(),
        config: model.config.clone(),
        params: model
            .store
            .params
            .iter()
            .map(|p| encode(&p.name, &p.value))
            .collect(),
        buffers: model
            .store
            .buffers
            .iter()
            .map(|(n, t)| encode(n, t))
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&c)?)
}

pub fn from_json<T: Real>(text: &str) -> Result<FusionModel<T>, CheckpointError> {
    let c: Container = serde_json::from_str(text)?;
    if c.format != FORMAT || c.version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported container {} v{}",
            c.format, c.version
        )));
    }
    if c.dtype != T::DTYPE {
        return Err(CheckpointError::Format(format!(
            "checkpoint holds {}, requested {}",
            c.dtype,
            T::DTYPE
        )));
    }
    // The architecture is rebuilt from the config; the rng only fills
    // values that are overwritten below.
    let mut model = FusionModel::<T>::new(c.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    if c.params.len() != model.store.params.len() || c.buffers.len() != model.store.buffers.len() {
        return Err(CheckpointError::Format("tensor count does not match config".into()));
    }
    for (p, s) in model.store.params.iter_mut().zip(&c.params) {
        if p.name != s.name {
            return Err(CheckpointError::Format(format!(
                "expected parameter {}, found {}",
                p.name, s.name
            )));
        }
        p.value = decode(s, &p.value)?;
    }
    for ((name, t), s) in model.store.buffers.iter_mut().zip(&c.buffers) {
        if *name != s.name {
            return Err(CheckpointError::Format(format!(
                "expected buffer {name}, found {}",
                s.name
            )));
        }
        *t = decode(s, t)?;
    }
    Ok(model)
}

pub fn save<T: Real>(model: &FusionModel<T>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<FusionModel<T>, CheckpointError> {
    from_json(&std::fs::read_to_string(path)?)
}
