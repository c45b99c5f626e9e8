//! Small dense networks with reverse-mode autodiff.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tape;
pub mod tensor;

use std::path::Path;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    argmax, choose, global_pool, ActMode, Actor, Critic, Dense, Encoder, EncoderInput, HeadStack, ModelConfig,
    Network, Pooling,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{FlipError, Result};
use crate::perception::Observation;
use crate::rng::substream;
use crate::scene::FlipAction;

const INIT_SALT: u64 = 0x1417;

/// Everything a trained policy consists of: actor, twin critics, their target
/// copies and the entropy temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: ModelConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub target: Critic,
    pub log_alpha: f32,
}

impl Agent {
    pub fn new(config: ModelConfig, seed: u64, initial_alpha: f32) -> Result<Self> {
        if !(initial_alpha.is_finite() && initial_alpha > 0.0) {
            return Err(FlipError::Config("initial alpha must be positive".into()));
        }
        let mut rng = substream(seed, INIT_SALT);
        let actor = Actor {
            net: Network::init(&mut rng),
        };
        let critic = Critic::init(&mut rng);
        Ok(Agent {
            config,
            actor,
            target: critic.clone(),
            critic,
            log_alpha: initial_alpha.ln(),
        })
    }

    pub fn alpha(&self) -> f32 {
        self.log_alpha.exp()
    }

    pub fn act(&self, obs: &Observation, mode: ActMode<'_>) -> Result<FlipAction> {
        Ok(self.actor.act(obs, self.config, mode)?.0)
    }

    fn layout() -> Vec<String> {
        let mut names = Network::names("actor");
        for p in ["critic.q1", "critic.q2", "target.q1", "target.q2"] {
            names.extend(Network::names(p));
        }
        names
    }

    fn networks(&self) -> [&Network; 5] {
        [
            &self.actor.net,
            &self.critic.q1,
            &self.critic.q2,
            &self.target.q1,
            &self.target.q2,
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<&Tensor> = self.networks().iter().flat_map(|n| n.tensors()).collect();
        let alpha = Tensor::scalar(self.log_alpha);
        let mask = Tensor::scalar(f32::from(u8::from(self.config.mask_proprio)));
        let pool = Tensor::scalar(f32::from(u8::from(self.config.pooling == Pooling::Max)));
        tensors.extend([&alpha, &mask, &pool]);
        let mut names = Self::layout();
        names.extend(["log_alpha", "meta.mask_proprio", "meta.pool_max"].map(String::from));
        let entries: Vec<(String, &Tensor)> = names.into_iter().zip(tensors).collect();
        checkpoint::encode(&entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = checkpoint::decode(bytes)?;
        let mut agent = Agent {
            config: ModelConfig::default(),
            actor: Actor { net: Network::zeroed() },
            critic: Critic::zeroed(),
            target: Critic::zeroed(),
            log_alpha: 0.0,
        };
        let mut names = Self::layout();
        names.extend(["log_alpha", "meta.mask_proprio", "meta.pool_max"].map(String::from));
        if entries.len() != names.len() {
            return Err(FlipError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                entries.len()
            )));
        }
        let (nets, meta) = entries.split_at(names.len() - 3);
        let mut slots: Vec<&mut Tensor> = Vec::new();
        slots.extend(agent.actor.net.tensors_mut());
        slots.extend(agent.critic.q1.tensors_mut());
        slots.extend(agent.critic.q2.tensors_mut());
        slots.extend(agent.target.q1.tensors_mut());
        slots.extend(agent.target.q2.tensors_mut());
        for ((slot, (name, t)), expect) in slots.into_iter().zip(nets).zip(&names) {
            if name != expect || t.shape() != slot.shape() {
                return Err(FlipError::Checkpoint(format!(
                    "entry {name} {:?} does not match expected {expect} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let mut scalars = [0f32; 3];
        for ((s, (name, t)), expect) in scalars.iter_mut().zip(meta).zip(&names[names.len() - 3..]) {
            if name != expect || t.len() != 1 {
                return Err(FlipError::Checkpoint(format!("bad entry {name}, expected scalar {expect}")));
            }
            *s = t.data()[0];
        }
        agent.log_alpha = scalars[0];
        agent.config = ModelConfig {
            mask_proprio: scalars[1] != 0.0,
            pooling: if scalars[2] != 0.0 { Pooling::Max } else { Pooling::Mean },
        };
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FlipError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FlipError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
