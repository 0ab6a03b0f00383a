//! Encoder checkpoints: a `CLAB` tensor file plus a JSON sidecar with the
//! resolved configuration, seed, epoch and loss history.
//!
//! The encoder of interest is stored under the `encoder.` prefix. Training
//! state (optimizer buffers, key encoder, queue) uses other prefixes and is
//! ignored by consumers that only need the encoder.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, TensorMap};
use crate::nn::{Encoder, EncoderConfig, ParamSet};

pub const SIDECAR_SCHEMA: u32 = 1;
pub const ENCODER_PREFIX: &str = "encoder";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Init,
    Supervised,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    pub seed: u64,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    /// Full resolved training configuration.
    pub config: serde_json::Value,
    /// Enclosing experiment configuration, when produced by a benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<serde_json::Value>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save(path: &Path, tensors: &TensorMap, meta: &CheckpointMeta) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint::save(path, tensors)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load(path: &Path) -> Result<(TensorMap, CheckpointMeta)> {
    let tensors = checkpoint::load(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.schema_version != SIDECAR_SCHEMA {
        return Err(Error::Format(format!(
            "{}: unsupported sidecar schema {}",
            side.display(),
            meta.schema_version
        )));
    }
    Ok((tensors, meta))
}

/// An encoder architecture with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub encoder: Encoder,
    pub params: ParamSet,
}

impl EncoderCheckpoint {
    pub fn new(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        encoder.check_params(&params)?;
        Ok(Self { encoder, params })
    }

    /// Fresh randomly initialized encoder ("no pretraining").
    pub fn fresh(config: EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config)?;
        let params = encoder.init(seed);
        Ok(Self { encoder, params })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (tensors, meta) = load(path)?;
        let params = checkpoint::extract_params(&tensors, ENCODER_PREFIX)?.weights_only();
        Ok((Self::new(meta.encoder.clone(), params)?, meta))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let mut tensors = TensorMap::new();
        checkpoint::insert_params(&mut tensors, ENCODER_PREFIX, &self.params, false);
        save(path, &tensors, meta)
    }
}
