//! Versioned model checkpoints: container header (config echo, iteration,
//! seed, tensor table) plus little-endian `f32` parameter blobs in
//! [`Model::parameters`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"MOCOCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn checkpoint_bytes<T: Real>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let params = model.parameters();
    let header = Header {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors: params.iter().map(|p| TensorEntry { name: p.name.clone(), len: p.data.len() }).collect(),
    };
    let mut payload = Vec::with_capacity(model.param_count() * 4);
    for p in &params {
        container::push_f32(&mut payload, p.data.iter().map(|v| v.as_f64() as f32));
    }
    container::encode(MAGIC, VERSION, serde_json::to_value(&header)?, &payload)
}

/// Atomic write (temporary file, then rename).
pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    container::write_atomic(path, &checkpoint_bytes(model, meta)?)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let c = container::decode(MAGIC, VERSION, bytes)?;
    let header: Header = serde_json::from_value(c.header)?;
    let mut model = Model::<f32>::new(header.config, 0)?;
    let values = container::read_f32(&c.payload);
    let mut offset = 0;
    {
        let mut params = model.parameters_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint lists {} tensors, the model has {}",
                header.tensors.len(),
                params.len()
            )));
        }
        for (p, entry) in params.iter_mut().zip(&header.tensors) {
            if p.name != entry.name || p.data.len() != entry.len {
                return Err(Error::Format(format!(
                    "tensor {} ({} values) does not match model tensor {} ({} values)",
                    entry.name,
                    entry.len,
                    p.name,
                    p.data.len()
                )));
            }
            let end = offset + entry.len;
            let src = values.get(offset..end).ok_or_else(|| Error::Format("payload shorter than tensor table".into()))?;
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("tensor {} has non-finite values", entry.name)));
            }
            p.data.copy_from_slice(src);
            offset = end;
        }
    }
    if offset != values.len() {
        return Err(Error::Format("payload longer than tensor table".into()));
    }
    Ok((model, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    parse_checkpoint(&std::fs::read(path)?)
}
