use std::path::Path;

use super::config::ModelConfig;
use super::lslm::{LslmModel, ENCODER_GROUP};
use crate::error::{Error, Result};
use crate::tensor::{checkpoint, ParamStore};

impl LslmModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.params, self.checkpoint_metadata())
    }

    /// Loads a model checkpoint; the config comes from its header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, params) = checkpoint::load(path.as_ref())?;
        let config: ModelConfig = serde_json::from_value(
            header
                .metadata
                .get("model_config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{}: no model_config in header", path.as_ref().display())))?,
        )?;
        Self::from_params(config, params)
    }

    /// The `listen.encoder.*` tensors, as exported by listener pretraining.
    pub fn encoder_params(&self) -> ParamStore {
        self.params.subset(ENCODER_GROUP)
    }
}

/// Writes pretrained listener-encoder weights.
pub fn save_listener(path: impl AsRef<Path>, encoder: &ParamStore, config: &ModelConfig) -> Result<()> {
    let meta = serde_json::json!({
        "kind": "listener",
        "listener_config": config.listener,
        "vocab_version": crate::vocab::VOCAB_VERSION,
    });
    checkpoint::save(path, encoder, meta)
}

/// Reads listener-encoder weights, rejecting checkpoints of another kind.
pub fn load_listener(path: impl AsRef<Path>) -> Result<ParamStore> {
    let (header, params) = checkpoint::load(path.as_ref())?;
    if header.metadata.get("kind").and_then(|k| k.as_str()) != Some("listener") {
        return Err(Error::Checkpoint(format!("{} is not a listener checkpoint", path.as_ref().display())));
    }
    if params.names().any(|n| !n.starts_with(ENCODER_GROUP)) {
        return Err(Error::Checkpoint("listener checkpoint holds non-encoder tensors".into()));
    }
    Ok(params)
}
