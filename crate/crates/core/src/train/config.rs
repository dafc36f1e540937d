use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the speaking backbone is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakingInit {
    Scratch,
    /// Load the pretrained TTS backbone and keep it fixed.
    Frozen,
    /// Load the pretrained TTS backbone and keep training it.
    Finetune,
}

/// How the streaming listener encoder is initialized. The projection is
/// always trained from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListeningInit {
    #[serde(alias = "scratch_projection_only")]
    Scratch,
    Frozen,
    Finetune,
}

impl SpeakingInit {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Scratch => "✗",
            Self::Frozen => "✓",
            Self::Finetune => "✚",
        }
    }
}

impl ListeningInit {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Scratch => "✗",
            Self::Frozen => "✓",
            Self::Finetune => "✚",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f32,
    pub warmup_steps: usize,
    /// Optimizer steps; `None` means `epochs` full passes.
    pub total_steps: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub speaking_init: SpeakingInit,
    pub listening_init: ListeningInit,
    pub pretrained_tts: Option<PathBuf>,
    pub pretrained_listener: Option<PathBuf>,
    pub grad_clip: f32,
    /// Validation items evaluated per epoch (`None`: the whole split).
    pub val_limit: Option<usize>,
    /// Record every n-th step in the log.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 5e-4,
            warmup_steps: 500,
            total_steps: None,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            speaking_init: SpeakingInit::Scratch,
            listening_init: ListeningInit::Scratch,
            pretrained_tts: None,
            pretrained_listener: None,
            grad_clip: 1.0,
            val_limit: None,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    /// Batch 4, 5,000 warm-up steps, 20 epochs: the reference recipe, kept
    /// for comparison with the scaled-down defaults.
    pub fn reference_recipe() -> Self {
        Self { batch_size: 4, warmup_steps: 5_000, ..Self::default() }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size.max(1)).max(1)
    }

    /// Total optimizer steps for a training set of `n_train` items.
    pub fn resolved_total_steps(&self, n_train: usize) -> usize {
        self.total_steps
            .unwrap_or_else(|| self.epochs * self.steps_per_epoch(n_train))
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_max > 0.0) {
            return Err(Error::Config("lr_max must be positive".into()));
        }
        let total = self.resolved_total_steps(n_train);
        if total == 0 {
            return Err(Error::Config("training would run zero steps".into()));
        }
        if self.warmup_steps > total {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {total}",
                self.warmup_steps
            )));
        }
        Ok(())
    }

    /// Checks that frozen/finetune modes name a pretrained checkpoint path.
    pub fn require_paths(&self) -> Result<()> {
        if self.speaking_init != SpeakingInit::Scratch && self.pretrained_tts.is_none() {
            return Err(Error::Config(format!(
                "speaking_init {:?} requires pretrained_tts",
                self.speaking_init
            )));
        }
        if self.listening_init != ListeningInit::Scratch && self.pretrained_listener.is_none() {
            return Err(Error::Config(format!(
                "listening_init {:?} requires pretrained_listener",
                self.listening_init
            )));
        }
        Ok(())
    }
}
