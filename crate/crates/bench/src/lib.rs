//! Fixtures for the throughput benchmarks in `benches/`.

use flipbench_core::nn::Agent;
use flipbench_core::perception::Simulator;
use flipbench_core::sac::{ReplayBuffer, SamplingPolicy, SceneRun, TrainConfig};
use flipbench_core::rng::stream;
use flipbench_core::scene::{PaperSpec, Scenario, SceneConfig};
use flipbench_core::Result;

pub fn printer_book(seed: u64) -> SceneConfig {
    SceneConfig::new(Scenario::Book, PaperSpec::printer(), 0.0, seed)
}

/// Replay buffer filled with `n` transitions collected by a fresh agent.
pub fn filled_buffer(sim: &Simulator, agent: &Agent, n: usize) -> Result<ReplayBuffer> {
    let mut buffer = ReplayBuffer::new(n.max(1))?;
    let mut run = SceneRun::new(printer_book(1))?;
    let mut policy = SamplingPolicy { agent, rng: stream(2) };
    for _ in 0..n {
        buffer.push(run.step(sim, &mut policy)?);
    }
    Ok(buffer)
}

pub fn fresh_agent(config: &TrainConfig) -> Result<Agent> {
    Agent::new(config.model, config.seed, config.initial_alpha)
}
