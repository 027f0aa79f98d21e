use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::numerics::Tensor;

const FORMAT: &str = "trajformer-checkpoint";
const VERSION: u32 = 1;

/// Provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    #[serde(default)]
    pub partition: Option<String>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub epochs: usize,
    /// Free-form training settings snapshot.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    meta: CheckpointMeta,
    params: Vec<StoredTensor>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    let params = model
        .params()
        .iter()
        .map(|(_, name, t)| StoredTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        meta: meta.clone(),
        params,
    };
    let bytes = serde_json::to_vec(&file)?;
    crate::write_atomic(path, &bytes)?;
    Ok(())
}

/// Loads a checkpoint; with `expected` set, a differing stored config is rejected.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint format {} v{}",
            file.format, file.version
        )));
    }
    if let Some(cfg) = expected {
        if *cfg != file.config {
            return Err(ModelError::Checkpoint(format!(
                "config mismatch: checkpoint has {:?}, expected {:?}",
                file.config, cfg
            )));
        }
    }
    let mut model = Model::new(file.config, 0)?;
    if model.params().len() != file.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {} tensors, config implies {}",
            file.params.len(),
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for (id, stored) in ids.into_iter().zip(file.params) {
        let (name, current) = (model.params().name(id), model.params().get(id));
        if name != stored.name || current.shape() != stored.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} {:?} does not match {} {:?}",
                stored.name,
                stored.shape,
                name,
                current.shape()
            )));
        }
        *model.params_mut().get_mut(id) = Tensor::new(stored.shape, stored.data)?;
    }
    Ok(Checkpoint { model, meta: file.meta })
}
