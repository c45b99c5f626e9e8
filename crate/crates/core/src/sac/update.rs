use super::episode::Transition;
use super::{ReplayBuffer, TrainConfig};
use crate::error::{FlipError, Result};
use crate::nn::{Adam, AdamConfig, Agent, EncoderInput, ModelConfig, Network, Tape, Tensor, Var};
use crate::rng::SimRng;
use crate::scene::HEAD_SIZES;

/// Separate optimizer state for each trained quantity.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub actor: Adam,
    pub q1: Adam,
    pub q2: Adam,
    pub alpha: Adam,
}

impl Optimizers {
    pub fn new(agent: &Agent, config: AdamConfig, alpha_learning_rate: f32) -> Self {
        Optimizers {
            actor: Adam::new(config, &agent.actor.net.tensors()),
            q1: Adam::new(config, &agent.critic.q1.tensors()),
            q2: Adam::new(config, &agent.critic.q2.tensors()),
            alpha: Adam::new(
                AdamConfig {
                    learning_rate: alpha_learning_rate,
                    ..config
                },
                &[&Tensor::scalar(0.0)],
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub critic1: f32,
    pub critic2: f32,
    pub actor: f32,
    pub alpha_loss: f32,
    /// Temperature after the update.
    pub alpha: f32,
    /// Mean summed per-head policy entropy over the batch.
    pub entropy: f32,
}

/// Soft state value under the factorized policy for one state:
/// `mean_h Σ_a π_h(a) Q_h(a) − α Σ_h Σ_a π_h(a) log π_h(a)`.
pub fn expected_soft_value(log_probs: [&[f32]; 4], q: [&[f32]; 4], alpha: f32) -> f64 {
    let mut value = 0.0;
    let mut neg_entropy = 0.0;
    for (lp, qh) in log_probs.iter().zip(q) {
        for (l, qv) in lp.iter().zip(qh) {
            let p = f64::from(l.exp());
            value += p * f64::from(*qv);
            neg_entropy += p * f64::from(*l);
        }
    }
    value / log_probs.len() as f64 - f64::from(alpha) * neg_entropy
}

/// One-hot rows for head `h` of the given actions.
fn one_hot(actions: &[[usize; 4]], h: usize) -> Tensor {
    let n = HEAD_SIZES[h];
    let mut data = vec![0f32; actions.len() * n];
    for (r, a) in actions.iter().enumerate() {
        data[r * n + a[h]] = 1.0;
    }
    Tensor::matrix(actions.len(), n, data).expect("sized")
}

/// `Σ_h mean_b (Q_h(s_b, a_{b,h}) − y_b)²` recorded on `tape`. Returns the loss
/// and the per-head Q outputs.
pub fn critic_loss(
    tape: &Tape,
    net: &Network,
    input: &EncoderInput,
    actions: &[[usize; 4]],
    targets: &[f32],
    config: ModelConfig,
    bound: &mut Vec<Var>,
) -> Result<(Var, [Var; 4])> {
    let q = net.forward(tape, input, config, bound)?;
    let y = tape.constant(Tensor::matrix(targets.len(), 1, targets.to_vec())?);
    let mut total: Option<Var> = None;
    for (h, qh) in q.iter().enumerate() {
        let mask = tape.constant(one_hot(actions, h));
        let taken = tape.sum_rows(tape.mul(*qh, mask)?)?;
        let err = tape.square(tape.sub(taken, y)?)?;
        let l = tape.mean_all(err)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok((total.expect("four heads"), q))
}

/// `Σ_h mean_b Σ_a π_h(a|s_b) (α log π_h(a|s_b) − minQ_h(s_b, a))` recorded on
/// `tape`. Returns the loss and the per-head log-probabilities.
pub fn actor_loss(
    tape: &Tape,
    net: &Network,
    input: &EncoderInput,
    min_q: &[Tensor; 4],
    alpha: f32,
    config: ModelConfig,
    bound: &mut Vec<Var>,
) -> Result<(Var, [Var; 4])> {
    let logits = net.forward(tape, input, config, bound)?;
    let mut lps = logits;
    let mut total: Option<Var> = None;
    for (h, l) in logits.iter().enumerate() {
        let lp = tape.log_softmax(*l)?;
        lps[h] = lp;
        let p = tape.exp(lp)?;
        let q = tape.constant(min_q[h].clone());
        let inner = tape.sub(tape.scale(lp, alpha)?, q)?;
        let per_row = tape.sum_rows(tape.mul(p, inner)?)?;
        let term = tape.mean_all(per_row)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok((total.expect("four heads"), lps))
}

fn elementwise_min(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x.min(*y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn step_network(tape: &Tape, loss: Var, bound: &[Var], net: &mut Network, opt: &mut Adam) -> Result<f32> {
    let value = tape.value(loss)?.data()[0];
    if !value.is_finite() {
        return Err(FlipError::Numeric(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let mut params = net.tensors_mut();
    for (v, p) in bound.iter().zip(params.iter_mut()) {
        grads.write_to(*v, p)?;
    }
    opt.step(params)?;
    Ok(value)
}

/// Samples a batch and performs one critic, actor, temperature and target
/// update.
pub fn update(
    buffer: &ReplayBuffer,
    agent: &mut Agent,
    opt: &mut Optimizers,
    config: &TrainConfig,
    rng: &mut SimRng,
) -> Result<LossReport> {
    let batch = buffer.sample(config.batch_size, rng)?;
    update_batch(&batch, agent, opt, config)
}

pub fn update_batch(
    batch: &[&Transition],
    agent: &mut Agent,
    opt: &mut Optimizers,
    config: &TrainConfig,
) -> Result<LossReport> {
    let model = agent.config;
    let input = EncoderInput::from_observations(batch.iter().map(|t| t.obs.as_ref()), model.pooling)?;
    let actions: Vec<[usize; 4]> = batch.iter().map(|t| t.action.bins()).collect();
    let alpha = agent.alpha();

    let mut targets: Vec<f32> = batch.iter().map(|t| t.reward).collect();
    if config.gamma > 0.0 && batch.iter().any(|t| !t.done) {
        let next = EncoderInput::from_observations(batch.iter().map(|t| t.next_obs.as_ref()), model.pooling)?;
        let [tq1, tq2] = agent.target.q_values(&next, model)?;
        let lp = agent.actor.log_probs(&next, model)?;
        for (r, (y, t)) in targets.iter_mut().zip(batch).enumerate() {
            if t.done {
                continue;
            }
            let mins: Vec<Vec<f32>> = (0..4)
                .map(|h| tq1[h].row(r).iter().zip(tq2[h].row(r)).map(|(a, b)| a.min(*b)).collect())
                .collect();
            let v = expected_soft_value(
                [lp[0].row(r), lp[1].row(r), lp[2].row(r), lp[3].row(r)],
                [&mins[0], &mins[1], &mins[2], &mins[3]],
                alpha,
            );
            *y += config.gamma * v as f32;
        }
    }

    let mut critic_losses = [0f32; 2];
    for (i, (net, o)) in [(&mut agent.critic.q1, &mut opt.q1), (&mut agent.critic.q2, &mut opt.q2)]
        .into_iter()
        .enumerate()
    {
        let tape = Tape::new();
        let mut bound = Vec::new();
        let (loss, _) = critic_loss(&tape, net, &input, &actions, &targets, model, &mut bound)?;
        critic_losses[i] = step_network(&tape, loss, &bound, net, o)?;
    }
    let [q1, q2] = agent.critic.q_values(&input, model)?;
    let min_q: [Tensor; 4] = std::array::from_fn(|h| elementwise_min(&q1[h], &q2[h]));

    let tape = Tape::new();
    let mut bound = Vec::new();
    let (loss, lps) = actor_loss(&tape, &agent.actor.net, &input, &min_q, alpha, model, &mut bound)?;
    let mut entropy = 0f64;
    for lp in lps {
        tape.with_value(lp, |t| {
            for l in t.data() {
                entropy -= f64::from(l.exp()) * f64::from(*l);
            }
        })?;
    }
    let entropy = (entropy / batch.len() as f64) as f32;
    let actor = step_network(&tape, loss, &bound, &mut agent.actor.net, &mut opt.actor)?;

    let gap = entropy - config.target_entropy;
    let alpha_loss = agent.log_alpha * gap;
    if config.learn_alpha {
        let mut la = Tensor::scalar(agent.log_alpha);
        la.set_grad(vec![gap])?;
        opt.alpha.step(vec![&mut la])?;
        agent.log_alpha = la.data()[0];
    }
    agent.target.blend_from(&agent.critic, config.tau);

    Ok(LossReport {
        critic1: critic_losses[0],
        critic2: critic_losses[1],
        actor,
        alpha_loss,
        alpha: agent.alpha(),
        entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Critic, Pooling};
    use crate::perception::{DepthImage, Observation, ProprioObs};
    use crate::rng::stream;
    use crate::scene::{FlipAction, Lambda};
    use rand::Rng;
    use std::sync::Arc;

    fn transition(reward: f32, action: FlipAction, proprio: [f32; 6]) -> Transition {
        let obs = Arc::new(Observation {
            depth: DepthImage::uniform(295.0).unwrap(),
            proprio: ProprioObs { values: proprio },
        });
        Transition {
            obs: obs.clone(),
            action,
            reward,
            next_obs: obs,
            done: true,
            layers: reward as usize,
            pages: (1, 1 + 2 * reward as u64),
        }
    }

    #[test]
    fn soft_value_matches_joint_enumeration() {
        let mut rng = stream(1);
        let logits: Vec<Vec<f32>> = HEAD_SIZES.iter().map(|&n| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let q: Vec<Vec<f32>> = HEAD_SIZES.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let lp: Vec<Vec<f32>> = logits
            .iter()
            .map(|l| {
                let lse = l.iter().map(|v| v.exp()).sum::<f32>().ln();
                l.iter().map(|v| v - lse).collect()
            })
            .collect();
        let alpha = 0.3;
        let fast = expected_soft_value([&lp[0], &lp[1], &lp[2], &lp[3]], [&q[0], &q[1], &q[2], &q[3]], alpha);
        let mut brute = 0.0f64;
        for a in FlipAction::all() {
            let b = a.bins();
            let logp: f64 = (0..4).map(|h| f64::from(lp[h][b[h]])).sum();
            let qa: f64 = (0..4).map(|h| f64::from(q[h][b[h]])).sum::<f64>() / 4.0;
            brute += logp.exp() * (qa - f64::from(alpha) * logp);
        }
        assert!((fast - brute).abs() < 1e-6, "{fast} vs {brute}");
    }

    #[test]
    fn constant_rewards_drive_critic_loss_to_zero() {
        let mut agent = Agent::new(ModelConfig::default(), 1, 0.1).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut opt = Optimizers::new(&agent, cfg.optimizer, cfg.alpha_learning_rate);
        let mut rng = stream(2);
        let ts: Vec<Transition> = (0..8)
            .map(|i| {
                let a = FlipAction::from_joint_index(i * 97).unwrap();
                transition(1.0, a, [rng.random(), rng.random(), 0.1, 0.2, 0.3, 0.4])
            })
            .collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let first = update_batch(&batch, &mut agent, &mut opt, &cfg).unwrap();
        let mut last = first;
        for _ in 0..400 {
            last = update_batch(&batch, &mut agent, &mut opt, &cfg).unwrap();
        }
        assert!(first.critic1 > 0.1);
        assert!(last.critic1 < 1e-3 && last.critic2 < 1e-3, "{last:?}");
    }

    #[test]
    fn rewarded_action_gains_probability_monotonically() {
        let mut agent = Agent::new(ModelConfig::default(), 3, 1e-3).unwrap();
        agent.critic = Critic::zeroed();
        agent.target = Critic::zeroed();
        let cfg = TrainConfig {
            batch_size: 1,
            learn_alpha: false,
            initial_alpha: 1e-3,
            ..TrainConfig::default()
        };
        let mut opt = Optimizers::new(&agent, cfg.optimizer, cfg.alpha_learning_rate);
        let action = FlipAction::new(6, 6, 1, Lambda::Close).unwrap();
        let t = transition(1.0, action, [0.5; 6]);
        let input = EncoderInput::single(&t.obs, Pooling::Mean).unwrap();
        let probs = |agent: &Agent| {
            let lp = agent.actor.log_probs(&input, agent.config).unwrap();
            let b = action.bins();
            [0, 1, 2, 3].map(|h| lp[h].data()[b[h]].exp())
        };
        let mut prev = probs(&agent);
        for _ in 0..100 {
            update_batch(&[&t], &mut agent, &mut opt, &cfg).unwrap();
            let now = probs(&agent);
            for h in 0..4 {
                assert!(now[h] >= prev[h], "head {h}: {} -> {}", prev[h], now[h]);
            }
            prev = now;
        }
        assert!(prev.iter().all(|&p| p > 0.5), "{prev:?}");
    }

    #[test]
    fn frozen_alpha_critic_is_regression_on_taken_action() {
        // One gradient step on a zeroed critic: only the taken bins receive
        // target-directed updates in the final layer.
        let mut agent = Agent::new(ModelConfig::default(), 4, 1e-3).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            learn_alpha: false,
            ..TrainConfig::default()
        };
        let action = FlipAction::new(3, 9, 2, Lambda::Open).unwrap();
        let t = transition(1.0, action, [0.2; 6]);
        let input = EncoderInput::single(&t.obs, Pooling::Mean).unwrap();
        let tape = Tape::new();
        let mut bound = Vec::new();
        let (loss, q) = critic_loss(&tape, &agent.critic.q1, &input, &[action.bins()], &[1.0], agent.config, &mut bound).unwrap();
        let qv: Vec<Tensor> = q.iter().map(|v| tape.value(*v).unwrap()).collect();
        let expect: f32 = (0..4).map(|h| (qv[h].data()[action.bins()[h]] - 1.0).powi(2)).sum();
        assert!((tape.value(loss).unwrap().data()[0] - expect).abs() < 1e-5);
        let g = tape.backward(loss).unwrap();
        // Last-layer bias gradient is nonzero only at the taken bin.
        let head_bias = bound[bound.len() - 1];
        let gb = g.wrt(head_bias).unwrap();
        for (i, v) in gb.iter().enumerate() {
            if i == action.bins()[3] {
                assert!((v - 2.0 * (qv[3].data()[i] - 1.0)).abs() < 1e-5);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        let mut opt = Optimizers::new(&agent, cfg.optimizer, cfg.alpha_learning_rate);
        update_batch(&[&t], &mut agent, &mut opt, &cfg).unwrap();
        assert!((agent.alpha() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn target_networks_track_slowly() {
        let mut agent = Agent::new(ModelConfig::default(), 5, 0.2).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut opt = Optimizers::new(&agent, cfg.optimizer, cfg.alpha_learning_rate);
        let ts = [
            transition(1.0, FlipAction::from_joint_index(5).unwrap(), [0.1; 6]),
            transition(0.0, FlipAction::from_joint_index(900).unwrap(), [0.9; 6]),
        ];
        let before = agent.target.clone();
        update_batch(&[&ts[0], &ts[1]], &mut agent, &mut opt, &cfg).unwrap();
        assert_ne!(agent.target, before);
        assert_ne!(agent.target, agent.critic);
        let w = |c: &Critic| c.q1.body.heads[0].bias.data()[5];
        let expect = 0.005 * w(&agent.critic) + 0.995 * w(&before);
        assert!((w(&agent.target) - expect).abs() < 1e-7);
    }
}
