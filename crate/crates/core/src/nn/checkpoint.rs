use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Mode, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "gyrocal.checkpoint/1";

/// Self-describing model file: configuration, every parameter buffer, running
/// batch-norm statistics, and the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub train_seed: u64,
    pub config_hash: Option<String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, train_seed: u64, config_hash: Option<String>) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            train_seed,
            config_hash,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| Error::format(path, e))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; the model comes back in Eval mode.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))?;
        if ckpt.schema != CHECKPOINT_SCHEMA {
            return Err(Error::format(path, format!("unsupported checkpoint schema `{}`", ckpt.schema)));
        }
        ckpt.model.config.validate()?;
        ckpt.model.check_shapes().map_err(|e| Error::format(path, e))?;
        if !ckpt.model.all_finite() {
            return Err(Error::format(path, "checkpoint contains non-finite parameters"));
        }
        ckpt.model.set_mode(Mode::Eval);
        Ok(ckpt)
    }
}
