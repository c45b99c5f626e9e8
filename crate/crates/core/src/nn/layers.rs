//! Cross-sensory encoder, factorized categorical actor and twin critics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{FlipError, Result};
use crate::perception::{Observation, CROP_PIXELS};
use crate::rng::SimRng;
use crate::scene::{FlipAction, HEAD_SIZES};

/// Depth values are scaled by this before pooling (mm → ~[0, 0.3]).
pub const DEPTH_SCALE: f64 = 1e-3;
pub const PROPRIO_DIM: usize = 6;
pub const ENCODER_INPUT: usize = 1 + PROPRIO_DIM;
pub const HIDDEN: usize = 64;
pub const LATENT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

/// Architecture switches shared by every network of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Vision-only ablation: the proprioceptive slots are zeroed.
    pub mask_proprio: bool,
    pub pooling: Pooling,
}

/// Batched encoder input: the pooled depth scalar and the proprio vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pooled: Tensor,
    proprio: Tensor,
}

impl EncoderInput {
    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a Observation>, pooling: Pooling) -> Result<Self> {
        let mut pooled = Vec::new();
        let mut proprio = Vec::new();
        for o in obs {
            if !o.is_finite() {
                return Err(FlipError::Numeric("observation contains non-finite values".into()));
            }
            pooled.push(global_pool(o.depth.pixels(), pooling));
            proprio.extend_from_slice(&o.proprio.values);
        }
        let n = pooled.len();
        Ok(EncoderInput {
            pooled: Tensor::matrix(n, 1, pooled)?,
            proprio: Tensor::matrix(n, PROPRIO_DIM, proprio)?,
        })
    }

    pub fn single(obs: &Observation, pooling: Pooling) -> Result<Self> {
        Self::from_observations([obs], pooling)
    }

    /// Raw input rows, e.g. for tests: `pooled` has one value per row.
    pub fn from_parts(pooled: Vec<f32>, proprio: Vec<f32>) -> Result<Self> {
        let n = pooled.len();
        if proprio.len() != n * PROPRIO_DIM {
            return Err(FlipError::Argument("proprio rows do not match pooled rows".into()));
        }
        if pooled.iter().chain(&proprio).any(|v| !v.is_finite()) {
            return Err(FlipError::Numeric("encoder input".into()));
        }
        Ok(EncoderInput {
            pooled: Tensor::matrix(n, 1, pooled)?,
            proprio: Tensor::matrix(n, PROPRIO_DIM, proprio)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.pooled.len()
    }

    pub fn pooled(&self) -> &[f32] {
        self.pooled.data()
    }

    pub fn proprio(&self) -> &[f32] {
        self.proprio.data()
    }
}

/// Global pooling of a depth crop to one scaled scalar.
pub fn global_pool(depth: &[f32], pooling: Pooling) -> f32 {
    debug_assert_eq!(depth.len(), CROP_PIXELS);
    let v = match pooling {
        Pooling::Mean => depth.iter().map(|&d| f64::from(d)).sum::<f64>() / depth.len() as f64,
        Pooling::Max => depth.iter().copied().fold(f32::NEG_INFINITY, f32::max).into(),
    };
    (v * DEPTH_SCALE) as f32
}

/// Fully connected layer `y = x W + b`, `W` stored `[inputs, outputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// `W ~ U(-1/√inputs, 1/√inputs)`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SimRng) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            weight: Tensor::matrix(inputs, outputs, w).expect("sized"),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Tensor::zeros(vec![inputs, outputs]),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &Tape, x: Var, bound: &mut Vec<Var>) -> Result<Var> {
        let w = tape.leaf(self.weight.clone());
        let b = tape.leaf(self.bias.clone());
        bound.extend([w, b]);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn names(prefix: &str) -> Vec<String> {
        vec![format!("{prefix}.weight"), format!("{prefix}.bias")]
    }
}

/// `[pool(depth), proprio] → mlp1 (7→64, ReLU) → mlp2 (64→32) → l_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub mlp1: Dense,
    pub mlp2: Dense,
}

impl Encoder {
    pub fn init(rng: &mut SimRng) -> Self {
        Encoder {
            mlp1: Dense::init(ENCODER_INPUT, HIDDEN, rng),
            mlp2: Dense::init(HIDDEN, LATENT, rng),
        }
    }

    pub fn zeroed() -> Self {
        Encoder {
            mlp1: Dense::zeroed(ENCODER_INPUT, HIDDEN),
            mlp2: Dense::zeroed(HIDDEN, LATENT),
        }
    }

    pub fn forward(&self, tape: &Tape, input: &EncoderInput, config: ModelConfig, bound: &mut Vec<Var>) -> Result<Var> {
        let pooled = tape.constant(input.pooled.clone());
        let proprio = if config.mask_proprio {
            tape.constant(Tensor::zeros(vec![input.rows(), PROPRIO_DIM]))
        } else {
            tape.constant(input.proprio.clone())
        };
        let x = tape.concat(pooled, proprio)?;
        let h = self.mlp1.forward(tape, x, bound)?;
        let h = tape.relu(h)?;
        self.mlp2.forward(tape, h, bound)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        [self.mlp1.tensors(), self.mlp2.tensors()].concat()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mlp1.tensors_mut();
        v.extend(self.mlp2.tensors_mut());
        v
    }

    fn names(prefix: &str) -> Vec<String> {
        [Dense::names(&format!("{prefix}.mlp1")), Dense::names(&format!("{prefix}.mlp2"))].concat()
    }
}

/// Shared trunk (32→64, ReLU) feeding one linear head per action coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadStack {
    pub trunk: Dense,
    pub heads: [Dense; 4],
}

impl HeadStack {
    pub fn init(rng: &mut SimRng) -> Self {
        let trunk = Dense::init(LATENT, HIDDEN, rng);
        let heads = HEAD_SIZES.map(|n| Dense::init(HIDDEN, n, rng));
        HeadStack { trunk, heads }
    }

    pub fn zeroed() -> Self {
        HeadStack {
            trunk: Dense::zeroed(LATENT, HIDDEN),
            heads: HEAD_SIZES.map(|n| Dense::zeroed(HIDDEN, n)),
        }
    }

    pub fn forward(&self, tape: &Tape, latent: Var, bound: &mut Vec<Var>) -> Result<[Var; 4]> {
        let h = self.trunk.forward(tape, latent, bound)?;
        let h = tape.relu(h)?;
        let mut out = [h; 4];
        for (o, head) in out.iter_mut().zip(&self.heads) {
            *o = head.forward(tape, h, bound)?;
        }
        Ok(out)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.trunk.tensors();
        for h in &self.heads {
            v.extend(h.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.trunk.tensors_mut();
        for h in &mut self.heads {
            v.extend(h.tensors_mut());
        }
        v
    }

    fn names(prefix: &str) -> Vec<String> {
        let mut v = Dense::names(&format!("{prefix}.trunk"));
        for i in 0..HEAD_SIZES.len() {
            v.extend(Dense::names(&format!("{prefix}.head{i}")));
        }
        v
    }
}

/// Encoder plus head stack; used for both the actor and each Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Encoder,
    pub body: HeadStack,
}

impl Network {
    pub fn init(rng: &mut SimRng) -> Self {
        let encoder = Encoder::init(rng);
        let body = HeadStack::init(rng);
        Network { encoder, body }
    }

    pub fn zeroed() -> Self {
        Network {
            encoder: Encoder::zeroed(),
            body: HeadStack::zeroed(),
        }
    }

    /// Per-head outputs on `tape`; parameter leaves are appended to `bound`
    /// in [`Network::tensors`] order.
    pub fn forward(&self, tape: &Tape, input: &EncoderInput, config: ModelConfig, bound: &mut Vec<Var>) -> Result<[Var; 4]> {
        let latent = self.encoder.forward(tape, input, config, bound)?;
        self.body.forward(tape, latent, bound)
    }

    /// Forward pass without keeping the tape.
    pub fn eval(&self, input: &EncoderInput, config: ModelConfig) -> Result<[Tensor; 4]> {
        let tape = Tape::new();
        let mut bound = Vec::new();
        let out = self.forward(&tape, input, config, &mut bound)?;
        let mut res = [(); 4].map(|_| Tensor::zeros(vec![0]));
        for (r, v) in res.iter_mut().zip(out) {
            *r = tape.value(v)?;
            if !r.is_finite() {
                return Err(FlipError::Numeric("network output".into()));
            }
        }
        Ok(res)
    }

    /// The latent `l_t` alone.
    pub fn encode(&self, input: &EncoderInput, config: ModelConfig) -> Result<Tensor> {
        let tape = Tape::new();
        let l = self.encoder.forward(&tape, input, config, &mut Vec::new())?;
        let t = tape.value(l)?;
        if !t.is_finite() {
            return Err(FlipError::Numeric("latent".into()));
        }
        Ok(t)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        [self.encoder.tensors(), self.body.tensors()].concat()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.body.tensors_mut());
        v
    }

    pub fn names(prefix: &str) -> Vec<String> {
        [Encoder::names(&format!("{prefix}.encoder")), HeadStack::names(prefix)].concat()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self ← τ·source + (1 − τ)·self`
    pub fn blend_from(&mut self, source: &Network, tau: f32) {
        for (dst, src) in self.tensors_mut().into_iter().zip(source.tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }
}

/// Action selection rule.
#[derive(Debug)]
pub enum ActMode<'a> {
    Sample(&'a mut SimRng),
    Greedy,
}

/// Factorized categorical policy over `(x_bin, z_bin, theta_bin, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Network,
}

impl Actor {
    /// Per-head log-probabilities, each `[n, head_size]`.
    pub fn log_probs(&self, input: &EncoderInput, config: ModelConfig) -> Result<[Tensor; 4]> {
        let tape = Tape::new();
        let logits = self.net.forward(&tape, input, config, &mut Vec::new())?;
        let mut res = [(); 4].map(|_| Tensor::zeros(vec![0]));
        for (r, l) in res.iter_mut().zip(logits) {
            *r = tape.value(tape.log_softmax(l)?)?;
            if !r.is_finite() {
                return Err(FlipError::Numeric("policy log-probabilities".into()));
            }
        }
        Ok(res)
    }

    /// Chooses an action for a single observation. Returns the per-head log
    /// probability of each chosen bin.
    pub fn act(&self, obs: &Observation, config: ModelConfig, mode: ActMode<'_>) -> Result<(FlipAction, [f32; 4])> {
        let input = EncoderInput::single(obs, config.pooling)?;
        let lp = self.log_probs(&input, config)?;
        Ok(choose(&lp.each_ref().map(|t| t.row(0)), mode))
    }
}

/// Picks one bin per head from row log-probabilities.
pub fn choose(log_probs: &[&[f32]; 4], mut mode: ActMode<'_>) -> (FlipAction, [f32; 4]) {
    let mut bins = [0usize; 4];
    let mut chosen = [0f32; 4];
    for h in 0..4 {
        let row = log_probs[h];
        let b = match &mut mode {
            ActMode::Greedy => argmax(row),
            ActMode::Sample(rng) => sample_categorical(row, rng),
        };
        bins[h] = b;
        chosen[h] = row[b];
    }
    let action = FlipAction::from_bins(bins).expect("bins come from head sizes");
    (action, chosen)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(log_probs: &[f32], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        cum += f64::from(lp.exp());
        if u < cum {
            return i;
        }
    }
    // Rounding left the cumulative sum just below one.
    log_probs.len() - 1
}

/// Twin Q-networks that never share weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q1: Network,
    pub q2: Network,
}

impl Critic {
    pub fn init(rng: &mut SimRng) -> Self {
        let q1 = Network::init(rng);
        let q2 = Network::init(rng);
        Critic { q1, q2 }
    }

    pub fn zeroed() -> Self {
        Critic {
            q1: Network::zeroed(),
            q2: Network::zeroed(),
        }
    }

    /// Per-head Q-vectors from both networks.
    pub fn q_values(&self, input: &EncoderInput, config: ModelConfig) -> Result<[[Tensor; 4]; 2]> {
        Ok([self.q1.eval(input, config)?, self.q2.eval(input, config)?])
    }

    pub fn blend_from(&mut self, source: &Critic, tau: f32) {
        self.q1.blend_from(&source.q1, tau);
        self.q2.blend_from(&source.q2, tau);
    }
}
