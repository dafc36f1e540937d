use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub top_p: f32,
    pub temperature: f32,
    pub seed: u64,
    /// Always take the most likely token (the zero-temperature limit).
    pub greedy: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { top_p: 0.99, temperature: 1.0, seed: 0, greedy: false }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self { greedy: true, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

pub fn argmax(values: &[f32]) -> usize {
    (0..values.len()).fold(0, |best, i| if values[i] > values[best] { i } else { best })
}

/// Indices of the smallest probability-sorted prefix whose cumulative mass
/// reaches `top_p`. Ties keep the lower index first.
pub fn nucleus(probs: &[f32], top_p: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0f64;
    let mut keep = 0;
    for &i in &order {
        mass += f64::from(probs[i]);
        keep += 1;
        if mass >= f64::from(top_p) - 1e-7 {
            break;
        }
    }
    order.truncate(keep.max(1));
    order
}

/// Temperature, nucleus filtering, renormalization, then one draw.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f32], cfg: &SamplerConfig, rng: &mut R) -> usize {
    if cfg.greedy {
        return argmax(logits);
    }
    let mut probs: Vec<f32> = logits.iter().map(|l| l / cfg.temperature).collect();
    softmax_in_place(&mut probs);
    let support = nucleus(&probs, cfg.top_p);
    let total: f64 = support.iter().map(|&i| f64::from(probs[i])).sum();
    let mut u = rng.random::<f64>() * total;
    for &i in &support {
        u -= f64::from(probs[i]);
        if u < 0.0 {
            return i;
        }
    }
    *support.last().expect("nucleus is never empty")
}
