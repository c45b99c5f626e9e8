//! Discrete soft actor-critic over the factorized flip action space.

mod buffer;
pub mod episode;
mod train;
mod update;

use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use episode::{compute_reward, GreedyPolicy, Policy, SamplingPolicy, SceneRun, Transition};
pub use train::{train, write_log, LogRow, TrainOutput, Trainer};
pub use update::{actor_loss, critic_loss, expected_soft_value, update, update_batch, LossReport, Optimizers};

use crate::error::{FlipError, Result};
use crate::nn::{AdamConfig, ModelConfig};
use crate::scene::HEAD_SIZES;

/// `-0.5 · Σ_h ln |A_h|`
pub fn default_target_entropy() -> f32 {
    -0.5 * HEAD_SIZES.iter().map(|&n| (n as f32).ln()).sum::<f32>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub optimizer: AdamConfig,
    /// Discount; 0 for one-step episodes.
    pub gamma: f32,
    /// Target-network blend factor.
    pub tau: f32,
    pub target_entropy: f32,
    pub initial_alpha: f32,
    /// Step size of the temperature optimizer.
    pub alpha_learning_rate: f32,
    /// Freeze α at `initial_alpha` when false.
    pub learn_alpha: bool,
    /// Environment steps collected before the first update.
    pub warmup_steps: usize,
    /// Log interval, steps.
    pub eval_every: usize,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Episodes continue until the first failed attempt.
    pub multi_step: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 30_000,
            batch_size: 64,
            buffer_capacity: 20_000,
            optimizer: AdamConfig::default(),
            gamma: 0.0,
            tau: 0.005,
            target_entropy: default_target_entropy(),
            initial_alpha: 0.1,
            alpha_learning_rate: 1e-4,
            learn_alpha: true,
            warmup_steps: 64,
            eval_every: 500,
            checkpoint_every: 10_000,
            seed: 0,
            multi_step: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Multi-step reading: flip until failure with γ = 0.95.
    pub fn multi_step() -> Self {
        TrainConfig {
            gamma: 0.95,
            multi_step: true,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(FlipError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(FlipError::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(FlipError::Config("tau must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(FlipError::Config(
                "batch_size must be positive and no larger than buffer_capacity".into(),
            ));
        }
        if !(self.initial_alpha.is_finite() && self.initial_alpha > 0.0) {
            return Err(FlipError::Config("initial_alpha must be > 0".into()));
        }
        if !(self.alpha_learning_rate.is_finite() && self.alpha_learning_rate > 0.0) {
            return Err(FlipError::Config("alpha_learning_rate must be > 0".into()));
        }
        if !self.target_entropy.is_finite() {
            return Err(FlipError::Config("target_entropy must be finite".into()));
        }
        if self.eval_every == 0 {
            return Err(FlipError::Config("eval_every must be positive".into()));
        }
        if !self.multi_step && self.gamma != 0.0 {
            return Err(FlipError::Config(
                "one-step episodes are terminal; gamma must be 0 unless multi_step is set".into(),
            ));
        }
        Ok(())
    }
}
