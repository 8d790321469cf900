//! Run configuration: every tunable in one serializable tree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{EmbedderMode, SkipGramConfig, DEFAULT_EMBED_DIM};
use crate::metrics::{validate_edges, DEFAULT_BUCKET_EDGES};
use crate::sapool::RefineConfig;
use crate::synth::SynthConfig;
use crate::trainer::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Synthesis and dataset split.
    pub data: u64,
    /// Parameter initialization.
    pub model: u64,
    /// Batch order and dropout.
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 0,
            model: 1,
            train: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub mode: EmbedderMode,
    pub dim: usize,
    pub seed: u64,
    pub skipgram: SkipGramConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            mode: EmbedderMode::Hash,
            dim: DEFAULT_EMBED_DIM,
            seed: 0,
            skipgram: SkipGramConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub refine: RefineConfig,
    pub train: TrainConfig,
    pub embedder: EmbedderConfig,
    pub synth: SynthConfig,
    pub buckets: Vec<f64>,
    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            refine: RefineConfig::default(),
            train: TrainConfig::default(),
            embedder: EmbedderConfig::default(),
            synth: SynthConfig::default(),
            buckets: DEFAULT_BUCKET_EDGES.to_vec(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.refine.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        validate_edges(&self.buckets)?;
        if self.embedder.dim == 0 {
            return Err(Error::config("embedder.dim must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON when possible,
    /// otherwise as a string. Unknown keys are rejected.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{s}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::config(format!("override key '{key}' descends into a non-object")))?;
                let child = obj
                    .get_mut(*part)
                    .ok_or_else(|| Error::config(format!("unknown config key '{key}'")))?;
                if i + 1 == parts.len() {
                    *child = value.clone();
                }
                node = child;
            }
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
