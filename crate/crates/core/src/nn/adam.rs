use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{FlipError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update from the gradients stored on `params`; gradients are
    /// consumed.
    pub fn step(&mut self, params: Vec<&mut Tensor>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(FlipError::Usage(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let g = p
                .grad()
                .ok_or_else(|| FlipError::Usage("parameter has no gradient".into()))?
                .to_vec();
            if g.iter().any(|x| !x.is_finite()) {
                return Err(FlipError::Numeric("non-finite gradient".into()));
            }
            if g.len() != m.len() {
                return Err(FlipError::Usage("parameter size changed".into()));
            }
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
            p.clear_grad();
        }
        Ok(())
    }
}
