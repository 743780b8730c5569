//! Versioned model checkpoints.
//!
//! A checkpoint is one JSON document: architecture sizes, step counter,
//! a name→{shape, row-major values} map (sorted, so bytes are stable for
//! a given state), and optional trainer state for resuming. Writes go
//! through a temp file and rename, so a crash never leaves a half-written
//! checkpoint behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edgenet::{DecoderConfig, EdgeNetParams, EncoderConfig};
use crate::numgrad::{Optimizer, Tensor};

pub const FORMAT: &str = "edgenet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] crate::edgenet::EdgeNetError),
    #[error(transparent)]
    Grad(#[from] crate::numgrad::NumGradError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Multiplier and optimizer state carried across a resume.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub multipliers: Vec<f64>,
    pub penalty: f64,
    pub optimizer: Optimizer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    pub fn capture(params: &EdgeNetParams, step: u64, trainer: Option<TrainerState>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    TensorEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            step,
            encoder: params.encoder.config,
            decoder: params.decoder.config,
            tensors,
            trainer,
        }
    }

    /// Rebuild the parameter set this checkpoint was captured from.
    pub fn restore(&self) -> Result<EdgeNetParams, CheckpointError> {
        if self.format != FORMAT {
            return Err(CheckpointError::Format(format!(
                "format is {:?}, expected {FORMAT:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(CheckpointError::Format(format!(
                "version {} not supported (this build reads {VERSION})",
                self.version
            )));
        }
        let mut params = EdgeNetParams::init(self.encoder, self.decoder, 0)?;
        let expected = params.tensors().len();
        if self.tensors.len() != expected {
            return Err(CheckpointError::Format(format!(
                "{} tensors stored, architecture needs {expected}",
                self.tensors.len()
            )));
        }
        for (name, slot) in params.tensors_mut() {
            let entry = self.tensors.get(&name).ok_or_else(|| {
                CheckpointError::Format(format!("missing tensor {name:?}"))
            })?;
            if entry.shape != slot.shape() {
                return Err(CheckpointError::Format(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    entry.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::from_vec(&entry.shape, entry.data.clone())?.with_grad();
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = serde_json::to_vec(self)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
