use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::LISTEN_VOCAB;

/// Where listening features join the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Added to the token + position embedding.
    Early,
    /// Added to the input of every transformer block.
    Middle,
    /// Mapped to logits and added before the softmax.
    Late,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [Self::Early, Self::Middle, Self::Late];

    pub fn name(self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Middle => "middle",
            Self::Late => "late",
        }
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Self::Early),
            "middle" => Ok(Self::Middle),
            "late" => Ok(Self::Late),
            other => Err(Error::Input(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerConfig {
    pub listen_vocab_size: usize,
    pub conv_depth: usize,
    pub kernel_size: usize,
    pub d_enc: usize,
}

impl ListenerConfig {
    /// Frames a feature depends on, including the current one.
    pub fn receptive_field(&self) -> usize {
        self.conv_depth * (self.kernel_size - 1) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub fusion: FusionStrategy,
    pub listener: ListenerConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Default laptop-scale configuration.
    pub fn desk() -> Self {
        Self {
            n_blocks: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            max_seq_len: 256,
            fusion: FusionStrategy::Middle,
            listener: ListenerConfig {
                listen_vocab_size: LISTEN_VOCAB,
                conv_depth: 3,
                kernel_size: 3,
                d_enc: 64,
            },
            seed: 0,
        }
    }

    /// Smaller configuration used by the test suites and quick examples.
    pub fn compact() -> Self {
        Self {
            n_blocks: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_seq_len: 96,
            fusion: FusionStrategy::Middle,
            listener: ListenerConfig {
                listen_vocab_size: LISTEN_VOCAB,
                conv_depth: 3,
                kernel_size: 3,
                d_enc: 32,
            },
            seed: 0,
        }
    }

    /// One block, `d_model = 8`; for gradient checks.
    pub fn tiny() -> Self {
        Self {
            n_blocks: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_seq_len: 64,
            fusion: FusionStrategy::Middle,
            listener: ListenerConfig {
                listen_vocab_size: LISTEN_VOCAB,
                conv_depth: 2,
                kernel_size: 3,
                d_enc: 4,
            },
            seed: 0,
        }
    }

    /// The 106M-parameter reference scale (12 blocks, 12 heads, 768/3072).
    /// Recorded for comparison; far beyond a CPU training budget here.
    pub fn reference_scale() -> Self {
        Self { n_blocks: 12, n_heads: 12, d_model: 768, d_ff: 3072, ..Self::desk() }
    }

    pub fn with_fusion(mut self, fusion: FusionStrategy) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_blocks == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("n_blocks, d_ff and max_seq_len must be positive".into()));
        }
        let l = &self.listener;
        if l.kernel_size == 0 || l.d_enc == 0 || l.listen_vocab_size == 0 {
            return Err(Error::Config("listener sizes must be positive".into()));
        }
        Ok(())
    }
}
