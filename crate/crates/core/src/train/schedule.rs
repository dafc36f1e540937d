use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up to `lr_max`, then cosine decay to zero at `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_max: f32,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn new(lr_max: f32, warmup: usize, total: usize) -> Result<Self> {
        if warmup > total {
            return Err(Error::Config(format!("warmup_steps {warmup} exceeds total_steps {total}")));
        }
        Ok(Self { lr_max, warmup, total })
    }

    pub fn lr_at(&self, step: usize) -> Result<f32> {
        if step > self.total {
            return Err(Error::Contract(format!("step {step} outside 0..={}", self.total)));
        }
        if step < self.warmup {
            return Ok(self.lr_max * step as f32 / self.warmup as f32);
        }
        let span = self.total - self.warmup;
        if span == 0 {
            return Ok(self.lr_max);
        }
        let progress = (step - self.warmup) as f32 / span as f32;
        Ok(self.lr_max * 0.5 * (1.0 + (PI * progress).cos()))
    }
}
