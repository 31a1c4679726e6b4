use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::model::Model;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossComponents;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state. Floats are written with round-trip
/// precision, so a reloaded run continues bitwise-identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub iteration: usize,
    pub model: Model,
    pub optimizer: Adam,
    /// `view_id` of each training view, in training order.
    pub view_ids: Vec<usize>,
    /// Cached histogram-equalization curve of each training view.
    pub cdf: Vec<Vec<f64>>,
    pub background: [f64; 3],
    pub log: Vec<LossComponents>,
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(checkpoint).map_err(|e| Error::json(path, e))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: version {} is not supported (expected {CHECKPOINT_VERSION})",
            path.display(),
            ck.version
        )));
    }
    if ck.config_hash != ck.config.hash() {
        return Err(Error::Checkpoint(format!(
            "{}: config hash mismatch",
            path.display()
        )));
    }
    if ck.cdf.len() != ck.view_ids.len() || ck.model.matrices.len() != ck.view_ids.len() {
        return Err(Error::Checkpoint(format!(
            "{}: per-view state is inconsistent",
            path.display()
        )));
    }
    ck.model.store.ensure_grad_buffers();
    Ok(ck)
}
