//! Versioned JSON checkpoints holding the config, data shape and parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::DataShape;
use super::model::Model;
use crate::autograd::Mat;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Container {
    version: u32,
    config: ModelConfig,
    shape: DataShape,
    sem_dim: Option<usize>,
    params: Vec<Tensor>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let params = model
        .ps
        .ids()
        .map(|id| {
            let m = model.ps.get(id);
            Tensor { name: model.ps.name(id).to_string(), rows: m.nrows(), cols: m.ncols(), data: m.iter().copied().collect() }
        })
        .collect();
    let c = Container {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        shape: model.shape,
        sem_dim: model.sem_dim,
        params,
    };
    crate::util::write_atomic(path, serde_json::to_string(&c)?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    let c: Container = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if c.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})", c.version)));
    }
    let mut model = Model::new(c.config, c.shape, c.sem_dim)?;
    if c.params.len() != model.ps.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            c.params.len(),
            model.ps.len()
        )));
    }
    for t in c.params {
        let id = model.ps.find(&t.name).ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", t.name)))?;
        let slot = model.ps.get_mut(id);
        if slot.dim() != (t.rows, t.cols) || t.data.len() != t.rows * t.cols {
            return Err(Error::Checkpoint(format!("tensor {} has the wrong shape", t.name)));
        }
        *slot = Mat::from_shape_vec((t.rows, t.cols), t.data).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(model)
}
