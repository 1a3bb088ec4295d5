use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use super::{LmConfig, LmError, LmParams, Result};

pub const CHECKPOINT_FORMAT: &str = "ktlab-lm";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON container for a model, the hash of the vocabulary it was trained
/// with, and an optional adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: LmConfig,
    pub vocab_hash: String,
    pub params: LmParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<LoraAdapter>,
}

impl Checkpoint {
    pub fn new(params: LmParams, vocab_hash: String, adapter: Option<LoraAdapter>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: params.config,
            vocab_hash,
            params,
            adapter,
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(ckpt)?)?;
    Ok(())
}

/// Loads a checkpoint and rejects it unless its vocabulary hash matches.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab_hash: &str) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(LmError::Checkpoint(format!("unexpected format `{}`", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(LmError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    if ckpt.vocab_hash != expected_vocab_hash {
        return Err(LmError::VocabMismatch {
            expected: expected_vocab_hash.to_string(),
            found: ckpt.vocab_hash,
        });
    }
    if ckpt.params.config != ckpt.config || !ckpt.params.all_finite() {
        return Err(LmError::Checkpoint("parameters inconsistent with config or non-finite".into()));
    }
    Ok(ckpt)
}
