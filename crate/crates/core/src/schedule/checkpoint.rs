//! Versioned JSON checkpoints of [`PolicyParams`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ppo::{PolicyParams, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, config: &TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            config_hash: config.hash(),
            config: config.clone(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Loads and checks the format version and the embedded config hash.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {}",
                ck.format
            )));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match embedded config".into(),
            ));
        }
        Ok(ck)
    }

    /// Loads and additionally requires the checkpoint to come from `config`.
    pub fn load_for(path: &Path, config: &TrainConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config_hash != config.hash() {
            return Err(Error::Checkpoint(
                "checkpoint was trained with a different config".into(),
            ));
        }
        Ok(ck)
    }
}
