use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{SamplingPolicy, SceneRun};
use super::update::{update, LossReport, Optimizers};
use super::{ReplayBuffer, TrainConfig};
use crate::error::{FlipError, Result};
use crate::nn::Agent;
use crate::perception::Simulator;
use crate::rng::{substream, SimRng};
use crate::scene::{page_number, SceneConfig};

const POLICY_SALT: u64 = 0xA1;
const REPLAY_SALT: u64 = 0xB1;
const ROLLING_WINDOW: usize = 100;

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub episode: usize,
    pub page: u64,
    pub reward: f32,
    pub rolling_sr_100: f64,
    pub critic1_loss: f32,
    pub critic2_loss: f32,
    pub actor_loss: f32,
    pub alpha: f32,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: Agent,
    pub log: Vec<LogRow>,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Interleaved collect/update loop.
pub struct Trainer<'a> {
    config: TrainConfig,
    sim: &'a Simulator,
    run: SceneRun,
    agent: Agent,
    opt: Optimizers,
    buffer: ReplayBuffer,
    policy_rng: SimRng,
    replay_rng: SimRng,
    recent: VecDeque<f32>,
    step: usize,
    episode: usize,
    last_losses: LossReport,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, scene: SceneConfig, sim: &'a Simulator) -> Result<Self> {
        config.validate()?;
        let agent = Agent::new(config.model, config.seed, config.initial_alpha)?;
        let opt = Optimizers::new(&agent, config.optimizer, config.alpha_learning_rate);
        Ok(Trainer {
            run: SceneRun::new(scene)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            policy_rng: substream(config.seed, POLICY_SALT),
            replay_rng: substream(config.seed, REPLAY_SALT),
            last_losses: LossReport {
                alpha: agent.alpha(),
                ..LossReport::default()
            },
            agent,
            opt,
            config,
            sim,
            recent: VecDeque::with_capacity(ROLLING_WINDOW),
            step: 0,
            episode: 0,
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn rolling_success(&self) -> f64 {
        if self.recent.is_empty() {
            return 0.0;
        }
        self.recent.iter().map(|&r| f64::from(r)).sum::<f64>() / self.recent.len() as f64
    }

    /// One environment step followed by one gradient update once warm.
    pub fn step(&mut self) -> Result<LogRow> {
        let mut policy = SamplingPolicy {
            agent: &self.agent,
            rng: self.policy_rng.clone(),
        };
        let mut t = self.run.step(self.sim, &mut policy)?;
        self.policy_rng = policy.rng;
        if self.config.multi_step {
            t.done = t.reward == 0.0;
        }
        let reward = t.reward;
        if t.done {
            self.episode += 1;
        }
        self.buffer.push(t);
        if self.recent.len() == ROLLING_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(reward);
        self.step += 1;

        let warm = self.buffer.len() >= self.config.batch_size.max(self.config.warmup_steps);
        if warm {
            self.last_losses = update(&self.buffer, &mut self.agent, &mut self.opt, &self.config, &mut self.replay_rng)?;
        }
        let l = self.last_losses;
        Ok(LogRow {
            step: self.step,
            episode: self.episode,
            page: page_number(self.run.state()),
            reward,
            rolling_sr_100: self.rolling_success(),
            critic1_loss: l.critic1,
            critic2_loss: l.critic2,
            actor_loss: l.actor,
            alpha: l.alpha,
        })
    }

    /// Runs the configured step budget. With `out_dir`, writes `train_log.csv`,
    /// periodic `checkpoint_<step>.flpb` files and the final `policy.flpb`.
    pub fn run(mut self, out_dir: Option<&Path>) -> Result<TrainOutput> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| FlipError::io(dir, e))?;
        }
        let mut log = Vec::new();
        let mut checkpoints = Vec::new();
        for _ in 0..self.config.steps {
            let row = self.step()?;
            if row.step % self.config.eval_every == 0 {
                log.push(row);
            }
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && row.step % every == 0 && row.step < self.config.steps {
                    let path = dir.join(format!("checkpoint_{:06}.flpb", row.step));
                    self.agent.save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        if let Some(dir) = out_dir {
            let path = dir.join("policy.flpb");
            self.agent.save(&path)?;
            checkpoints.push(path);
            write_log(&dir.join("train_log.csv"), &log)?;
        }
        Ok(TrainOutput {
            agent: self.agent,
            log,
            checkpoints,
        })
    }
}

/// Convenience wrapper around [`Trainer`].
pub fn train(config: &TrainConfig, scene: &SceneConfig, sim: &Simulator, out_dir: Option<&Path>) -> Result<TrainOutput> {
    Trainer::new(config.clone(), scene.clone(), sim)?.run(out_dir)
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FlipError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> FlipError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FlipError::io(path, io),
        other => FlipError::Table(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{PaperSpec, Scenario};

    fn small() -> TrainConfig {
        TrainConfig {
            steps: 120,
            batch_size: 16,
            eval_every: 20,
            checkpoint_every: 50,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let sim = Simulator::with_defaults();
        let scene = SceneConfig::new(Scenario::Book, PaperSpec::printer(), 0.0, 1);
        let cfg = TrainConfig {
            steps: 0,
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &scene, &sim, Some(dir.path())).unwrap();
        let init = Agent::new(cfg.model, cfg.seed, cfg.initial_alpha).unwrap();
        assert_eq!(out.agent, init);
        assert_eq!(Agent::load(&dir.path().join("policy.flpb")).unwrap(), init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn short_runs_are_deterministic() {
        let sim = Simulator::with_defaults();
        let scene = SceneConfig::new(Scenario::Book, PaperSpec::printer(), 0.0, 1);
        let a = train(&small(), &scene, &sim, None).unwrap();
        let b = train(&small(), &scene, &sim, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.agent, b.agent);
        assert_eq!(a.log.len(), 6);
        let c = train(&TrainConfig { seed: 10, ..small() }, &scene, &sim, None).unwrap();
        assert_ne!(a.agent, c.agent);
    }

    #[test]
    fn writes_log_and_checkpoints() {
        let sim = Simulator::with_defaults();
        let scene = SceneConfig::new(Scenario::Book, PaperSpec::printer(), 0.0, 1);
        let dir = tempfile::tempdir().unwrap();
        let out = train(&small(), &scene, &sim, Some(dir.path())).unwrap();
        let names: Vec<_> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["checkpoint_000050.flpb", "checkpoint_000100.flpb", "policy.flpb"]);
        let text = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "step,episode,page,reward,rolling_sr_100,critic1_loss,critic2_loss,actor_loss,alpha"
        );
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn buffer_respects_capacity() {
        let sim = Simulator::with_defaults();
        let scene = SceneConfig::new(Scenario::SingleSheet, PaperSpec::coated(), 30.0, 1);
        let cfg = TrainConfig {
            buffer_capacity: 32,
            ..small()
        };
        let mut t = Trainer::new(cfg, scene, &sim).unwrap();
        for _ in 0..80 {
            t.step().unwrap();
            assert!(t.buffer().len() <= 32);
        }
        // Oldest entries were evicted first: the newest transition is last.
        assert_eq!(t.buffer().len(), 32);
    }

    #[test]
    fn multi_step_mode_counts_episodes_by_failure() {
        let sim = Simulator::with_defaults();
        let scene = SceneConfig::new(Scenario::Book, PaperSpec::printer(), 0.0, 2);
        let cfg = TrainConfig {
            steps: 60,
            ..TrainConfig::multi_step()
        };
        let cfg = TrainConfig { batch_size: 16, eval_every: 10, ..cfg };
        let mut t = Trainer::new(cfg, scene, &sim).unwrap();
        let mut failures = 0;
        let mut last = None;
        for _ in 0..60 {
            let row = t.step().unwrap();
            failures += usize::from(row.reward == 0.0);
            last = Some(row);
        }
        assert_eq!(last.unwrap().episode, failures);
        assert!(last.unwrap().critic1_loss.is_finite());
    }
}
