use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First/second moment buffers for every trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update of every trainable parameter
    /// at learning rate `lr`. Frozen parameters are skipped.
    pub fn step(&mut self, params: &mut ParamStore, lr: f32) -> Result<()> {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let n = p.len();
            let grad = p
                .grad
                .take()
                .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient")))?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let data = p.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * data[i]);
            }
            p.grad = Some(grad);
        }
        Ok(())
    }
}
