use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::runtime::SamplerConfig;
use crate::seed::named;
use crate::train::{ListeningInit, SpeakingInit, TrainConfig};
use crate::world::WorldConfig;

/// Everything a run reads, resolved as defaults, then the `--config` file,
/// then command-line flags. Seeds inside the sections are derived from
/// `seed` and any value given for them is replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub model: ModelConfig,
    /// Vanilla TTS pretraining.
    pub tts: TrainConfig,
    /// Listener-encoder pretraining.
    pub listener: TrainConfig,
    /// Duplex training; also the template for every ablation mode.
    pub duplex: TrainConfig,
    pub sampler: SamplerConfig,
    /// Checkpoint evaluated, traced or served.
    pub checkpoint: Option<PathBuf>,
    /// A `make-data` directory to read instead of regenerating the corpus.
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig { train_size: 4_000, val_size: 200, ..WorldConfig::default() },
            model: ModelConfig::compact(),
            tts: TrainConfig { lr_max: 1e-3, warmup_steps: 200, total_steps: Some(2_500), ..TrainConfig::default() },
            listener: TrainConfig { lr_max: 1e-3, warmup_steps: 20, total_steps: Some(200), ..TrainConfig::default() },
            duplex: TrainConfig {
                lr_max: 1e-3,
                warmup_steps: 100,
                total_steps: Some(1_500),
                speaking_init: SpeakingInit::Finetune,
                listening_init: ListeningInit::Finetune,
                ..TrainConfig::default()
            },
            sampler: SamplerConfig::default(),
            checkpoint: None,
            data_dir: None,
        }
    }
}

/// Sub-seeds of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSeeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
    pub sampling: u64,
}

impl SubSeeds {
    pub fn of(master: u64) -> Self {
        Self {
            data: named(master, "data"),
            init: named(master, "init"),
            shuffle: named(master, "shuffle"),
            sampling: named(master, "sampling"),
        }
    }
}

fn overlay(base: &mut Value, file: Value, at: &str) -> Result<()> {
    match (base, file) {
        (Value::Object(b), Value::Object(f)) => {
            for (k, v) in f {
                let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &key)?,
                    None => return Err(Error::Config(format!("unknown config key {key}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a JSON config file. Keys are merged one by
    /// one, so a partial section keeps the remaining defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(Self::default())?;
        overlay(&mut merged, file, "")?;
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes the derived sub-seeds into every section.
    pub fn apply_seeds(&mut self) -> SubSeeds {
        let s = SubSeeds::of(self.seed);
        self.world.seed = s.data;
        self.model.seed = s.init;
        for t in [&mut self.tts, &mut self.listener, &mut self.duplex] {
            t.seed = s.shuffle;
        }
        self.sampler.seed = s.sampling;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.sampler.validate()?;
        for t in [&self.tts, &self.listener, &self.duplex] {
            if t.batch_size == 0 || !(t.lr_max > 0.0) {
                return Err(Error::Config("batch_size and lr_max must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("missing required field: checkpoint (--checkpoint or config key)".into()))
    }
}
