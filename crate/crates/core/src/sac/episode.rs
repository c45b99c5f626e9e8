//! Coarse-to-fine episode collection shared by training and evaluation.

use std::sync::Arc;

use crate::error::{FlipError, Result};
use crate::nn::{ActMode, Agent};
use crate::perception::{Observation, Simulator};
use crate::physics::{apply_outcome, attempt_flip};
use crate::rng::{substream, SimRng};
use crate::scene::{new_scene, page_number, reset_scene, FlipAction, SceneConfig, StackState};

const ENV_SALT: u64 = 0xE1;

/// Anything that maps an observation to a flip action.
pub trait Policy {
    fn select(&mut self, obs: &Observation) -> Result<FlipAction>;
}

/// Stochastic policy used while collecting training data.
pub struct SamplingPolicy<'a> {
    pub agent: &'a Agent,
    pub rng: SimRng,
}

impl Policy for SamplingPolicy<'_> {
    fn select(&mut self, obs: &Observation) -> Result<FlipAction> {
        self.agent.act(obs, ActMode::Sample(&mut self.rng))
    }
}

/// Per-head argmax; used for evaluation.
pub struct GreedyPolicy<'a> {
    pub agent: &'a Agent,
}

impl Policy for GreedyPolicy<'_> {
    fn select(&mut self, obs: &Observation) -> Result<FlipAction> {
        self.agent.act(obs, ActMode::Greedy)
    }
}

/// One `(s, a, r, s', done)` record.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Arc<Observation>,
    pub action: FlipAction,
    pub reward: f32,
    pub next_obs: Arc<Observation>,
    pub done: bool,
    /// Layers detached by the attempt.
    pub layers: usize,
    /// Page index before and after the attempt.
    pub pages: (u64, u64),
}

/// `1` iff exactly one sheet (two pages) was turned.
pub fn compute_reward(n_before: u64, n_after: u64) -> Result<f32> {
    if n_after < n_before {
        return Err(FlipError::Contract(format!(
            "page index went backwards: {n_before} -> {n_after}"
        )));
    }
    Ok(if n_after == n_before + 2 { 1.0 } else { 0.0 })
}

/// A scene being worked through attempt by attempt. The observation taken
/// after one attempt is reused as the state of the next.
#[derive(Debug, Clone)]
pub struct SceneRun {
    config: SceneConfig,
    state: StackState,
    rng: SimRng,
    pending: Option<Arc<Observation>>,
    resets: u64,
}

impl SceneRun {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let state = new_scene(&config)?;
        let rng = substream(config.seed, ENV_SALT);
        Ok(SceneRun {
            config,
            state,
            rng,
            pending: None,
            resets: 0,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn state(&self) -> &StackState {
        &self.state
    }

    /// Number of times the stack ran out and was restocked.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// render → crop → swipe → normalize → act → flip → apply → reward.
    /// `done` is always true here; multi-step training overrides it.
    pub fn step(&mut self, sim: &Simulator, policy: &mut dyn Policy) -> Result<Transition> {
        let obs = match self.pending.take() {
            Some(o) => o,
            None => Arc::new(sim.observe(&self.state, &self.config, &mut self.rng)?),
        };
        let action = policy.select(&obs)?;
        let outcome = attempt_flip(&self.state, &action, &self.config, &sim.physics, &mut self.rng)?;
        let mut next = apply_outcome(&self.state, outcome)?;
        let pages = (page_number(&self.state), page_number(&next));
        let reward = compute_reward(pages.0, pages.1)?;
        if next.is_empty() {
            next = reset_scene(&next, &self.config)?;
            self.resets += 1;
        }
        let next_obs = Arc::new(sim.observe(&next, &self.config, &mut self.rng)?);
        self.state = next;
        self.pending = Some(next_obs.clone());
        Ok(Transition {
            obs,
            action,
            reward,
            next_obs,
            done: true,
            layers: outcome.layers,
            pages,
        })
    }
}
