//! JSON checkpoints of named parameter tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "bottleneck-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

/// Serialises in registration order; identical stores give identical bytes.
pub fn to_json(store: &ParamStore<f64>) -> Result<String> {
    let params = store
        .iter()
        .map(|(name, t)| Entry { name: name.to_string(), shape: t.shape(), data: t.data().to_vec() })
        .collect();
    let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, params };
    Ok(serde_json::to_string(&ck)?)
}

/// Loads values into a store that already has the matching layout.
pub fn load_json_into(store: &mut ParamStore<f64>, text: &str) -> Result<()> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
    }
    if ck.params.len() != store.len() {
        return Err(Error::Format(format!("checkpoint has {} tensors, model has {}", ck.params.len(), store.len())));
    }
    for e in ck.params {
        let id = store.id(&e.name).ok_or_else(|| Error::Format(format!("unknown parameter `{}`", e.name)))?;
        let t = Tensor::new(e.shape[0], e.shape[1], e.data)?;
        let dst = store.value_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Format(format!("parameter `{}` has shape {:?}, expected {:?}", e.name, t.shape(), dst.shape())));
        }
        if !t.all_finite() {
            return Err(Error::Format(format!("parameter `{}` holds non-finite values", e.name)));
        }
        *dst = t;
    }
    Ok(())
}

pub fn save(store: &ParamStore<f64>, path: &Path) -> Result<()> {
    fs::write(path, to_json(store)?)?;
    Ok(())
}

pub fn load_into(store: &mut ParamStore<f64>, path: &Path) -> Result<()> {
    load_json_into(store, &fs::read_to_string(path)?)
}
