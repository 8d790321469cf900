use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::Model;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::TokenEmbedder;

pub const CHECKPOINT_FORMAT: &str = "vulngraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub in_dim: usize,
    pub best_step: usize,
    pub best_val_f1: f64,
    pub embedder: Option<TokenEmbedder>,
    pub tensors: Vec<TensorRecord>,
}

/// Hex SHA-256 of the canonical JSON form of a config.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        config: &RunConfig,
        embedder: Option<TokenEmbedder>,
        best_step: usize,
        best_val_f1: f64,
    ) -> Result<Self> {
        let mut m = model.clone();
        let tensors = m
            .tensors_mut()
            .into_iter()
            .map(|t| TensorRecord {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect();
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(config)?,
            config: config.clone(),
            in_dim: model.in_dim(),
            best_step,
            best_val_f1,
            embedder,
            tensors,
        })
    }

    pub fn model(&self) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::init(&mut rng, self.in_dim, &self.config.model)?;
        let slots = model.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::input(format!(
                "checkpoint holds {} tensors, config implies {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for (slot, rec) in slots.into_iter().zip(&self.tensors) {
            if slot.name != rec.name || slot.shape != rec.shape || rec.data.len() != slot.data.len() {
                return Err(Error::input(format!(
                    "checkpoint tensor '{}' {:?} does not match expected '{}' {:?}",
                    rec.name, rec.shape, slot.name, slot.shape
                )));
            }
            slot.data.copy_from_slice(&rec.data);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::input(format!("not a checkpoint (format '{}')", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::input(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.config_hash != config_hash(&ck.config)? {
            return Err(Error::input("checkpoint config hash does not match its config"));
        }
        ck.config.validate()?;
        Ok(ck)
    }
}
