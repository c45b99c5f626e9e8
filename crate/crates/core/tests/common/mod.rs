//! Independent double-precision reference for the network and SAC losses.

#![allow(dead_code)]

use flipbench_core::nn::Network;
use flipbench_core::scene::HEAD_SIZES;

pub struct Net64 {
    pub params: Vec<Vec<f64>>,
}

/// `(inputs, outputs)` of each dense layer in parameter order.
pub const LAYERS: [(usize, usize); 7] = [(7, 64), (64, 32), (32, 64), (64, 13), (64, 13), (64, 4), (64, 2)];

impl Net64 {
    pub fn from_network(net: &Network) -> Self {
        let params = net
            .tensors()
            .iter()
            .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
            .collect();
        Net64 { params }
    }

    fn dense(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = LAYERS[layer];
        let w = &self.params[2 * layer];
        let b = &self.params[2 * layer + 1];
        (0..n_out)
            .map(|j| b[j] + (0..n_in).map(|i| x[i] * w[i * n_out + j]).sum::<f64>())
            .collect()
    }

    /// Per-head outputs of one input row plus the ReLU sign pattern.
    pub fn forward(&self, pooled: f64, proprio: &[f64], mask: bool) -> ([Vec<f64>; 4], Vec<bool>) {
        let mut x = vec![pooled];
        x.extend(proprio.iter().map(|&p| if mask { 0.0 } else { p }));
        let h1 = self.dense(0, &x);
        let mut pattern: Vec<bool> = h1.iter().map(|&v| v > 0.0).collect();
        let h1: Vec<f64> = h1.into_iter().map(|v| v.max(0.0)).collect();
        let latent = self.dense(1, &h1);
        let h2 = self.dense(2, &latent);
        pattern.extend(h2.iter().map(|&v| v > 0.0));
        let h2: Vec<f64> = h2.into_iter().map(|v| v.max(0.0)).collect();
        let heads = std::array::from_fn(|h| self.dense(3 + h, &h2));
        (heads, pattern)
    }
}

pub struct Batch {
    pub pooled: Vec<f64>,
    pub proprio: Vec<Vec<f64>>,
    pub actions: Vec<[usize; 4]>,
    pub targets: Vec<f64>,
    /// `[row][head][action]`
    pub min_q: Vec<[Vec<f64>; 4]>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `Σ_h mean_b (Q_h(s_b, a_{b,h}) − y_b)²` and the concatenated ReLU pattern.
pub fn critic_loss64(net: &Net64, batch: &Batch, mask: bool) -> (f64, Vec<bool>) {
    let n = batch.pooled.len() as f64;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for b in 0..batch.pooled.len() {
        let (q, p) = net.forward(batch.pooled[b], &batch.proprio[b], mask);
        pattern.extend(p);
        for h in 0..4 {
            let e = q[h][batch.actions[b][h]] - batch.targets[b];
            loss += e * e / n;
        }
    }
    (loss, pattern)
}

/// `Σ_h mean_b Σ_a π(a)(α log π(a) − minQ(a))` and the ReLU pattern.
pub fn actor_loss64(net: &Net64, batch: &Batch, alpha: f64, mask: bool) -> (f64, Vec<bool>) {
    let n = batch.pooled.len() as f64;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for b in 0..batch.pooled.len() {
        let (z, p) = net.forward(batch.pooled[b], &batch.proprio[b], mask);
        pattern.extend(p);
        for h in 0..4 {
            assert_eq!(z[h].len(), HEAD_SIZES[h]);
            let lp = log_softmax(&z[h]);
            for (a, l) in lp.iter().enumerate() {
                loss += l.exp() * (alpha * l - batch.min_q[b][h][a]) / n;
            }
        }
    }
    (loss, pattern)
}

/// Relative error with a floor on the denominator so that two near-zero
/// gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
