//! Reverse-mode automatic differentiation over small dense tensors.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{FlipError, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Relu(usize),
    Exp(usize),
    LogSoftmax(usize),
    Square(usize),
    SumAll(usize),
    MeanAll(usize),
    SumRows(usize),
    Concat(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one backward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f32>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if `var` did not
    /// influence the loss.
    pub fn wrt(&self, var: Var) -> Result<Vec<f32>> {
        if var.tape != self.tape || var.index >= self.grads.len() {
            return Err(FlipError::Usage("variable belongs to another tape".into()));
        }
        Ok(self.grads[var.index]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.lens[var.index]]))
    }

    /// Stores the gradient for `var` on `tensor`.
    pub fn write_to(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        tensor.set_grad(self.wrt(var)?)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<Tensor> {
        let i = self.check(v)?;
        let mut t = self.nodes.borrow()[i].value.clone();
        t.clear_grad();
        Ok(t)
    }

    /// Runs `f` on the recorded value without copying it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> Result<R> {
        let i = self.check(v)?;
        Ok(f(&self.nodes.borrow()[i].value))
    }

    fn push(&self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.clear_grad();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.len() {
            return Err(FlipError::Usage("variable belongs to another tape".into()));
        }
        Ok(v.index)
    }

    fn unary(&self, a: Var, op: impl FnOnce(usize) -> Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var> {
        let i = self.check(a)?;
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[i].value)?, nodes[i].requires_grad)
        };
        Ok(self.push(value, op(i), rg))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: impl FnOnce(usize, usize) -> Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var> {
        let i = self.check(a)?;
        let j = self.check(b)?;
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[i], &nodes[j]);
            (f(&x.value, &y.value)?, x.requires_grad || y.requires_grad)
        };
        Ok(self.push(value, op(i, j), rg))
    }

    /// `[n, k] × [k, m] → [n, m]`
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul, |x, y| {
            let (n, k) = x.dims2();
            let (k2, m) = y.dims2();
            if k != k2 {
                return Err(shape_err("matmul", x, y));
            }
            let mut out = vec![0f32; n * m];
            matmul_into(x.data(), y.data(), &mut out, n, k, m);
            Tensor::matrix(n, m, out)
        })
    }

    /// Adds a length-`m` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        self.binary(a, bias, Op::AddBias, |x, b| {
            let (n, m) = x.dims2();
            if b.len() != m {
                return Err(shape_err("add_bias", x, b));
            }
            let mut out = x.data().to_vec();
            for row in out.chunks_exact_mut(m) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            Tensor::matrix(n, m, out)
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| zip_same("add", x, y, |p, q| p + q))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| zip_same("sub", x, y, |p, q| p - q))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| zip_same("mul", x, y, |p, q| p * q))
    }

    pub fn scale(&self, a: Var, c: f32) -> Result<Var> {
        self.unary(a, |i| Op::Scale(i, c), |x| Ok(map(x, |v| v * c)))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| Ok(map(x, |v| v.max(0.0))))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp, |x| Ok(map(x, f32::exp)))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square, |x| Ok(map(x, |v| v * v)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSoftmax, |x| {
            let (n, m) = x.dims2();
            let mut out = Vec::with_capacity(n * m);
            for row in x.data().chunks_exact(m) {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|v| v - lse));
            }
            Tensor::new(x.shape().to_vec(), out)
        })
    }

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::SumAll, |x| Ok(Tensor::scalar(x.data().iter().sum())))
    }

    pub fn mean_all(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::MeanAll, |x| {
            if x.is_empty() {
                return Err(FlipError::Argument("mean of empty tensor".into()));
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f32>() / x.len() as f32))
        })
    }

    /// `[n, m] → [n, 1]`
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::SumRows, |x| {
            let (n, m) = x.dims2();
            let out = x.data().chunks_exact(m).map(|r| r.iter().sum()).collect();
            Tensor::matrix(n, 1, out)
        })
    }

    /// Column-wise concatenation `[n, p] ‖ [n, q] → [n, p + q]`.
    pub fn concat(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Concat, |x, y| {
            let (n, p) = x.dims2();
            let (n2, q) = y.dims2();
            if n != n2 {
                return Err(shape_err("concat", x, y));
            }
            let mut out = Vec::with_capacity(n * (p + q));
            for r in 0..n {
                out.extend_from_slice(x.row(r));
                out.extend_from_slice(y.row(r));
            }
            Tensor::matrix(n, p + q, out)
        })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[root].value.len() != 1 {
            return Err(FlipError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        if !nodes[root].requires_grad {
            return Err(FlipError::Usage(
                "backward on a loss detached from every parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let out = &node.value;
            let need = |j: usize| nodes[j].requires_grad;
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (&nodes[a].value, &nodes[b].value);
                    let (n, k) = x.dims2();
                    let (_, m) = y.dims2();
                    if need(a) {
                        // g · yᵀ
                        let ga = acc(&mut grads, a, x.len());
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for c in 0..k {
                                let yrow = &y.data()[c * m..(c + 1) * m];
                                ga[r * k + c] += dot(grow, yrow);
                            }
                        }
                    }
                    if need(b) {
                        // xᵀ · g
                        let gb = acc(&mut grads, b, y.len());
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for c in 0..k {
                                let xv = x.data()[r * k + c];
                                if xv != 0.0 {
                                    for (o, gv) in gb[c * m..(c + 1) * m].iter_mut().zip(grow) {
                                        *o += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::AddBias(a, b) => {
                    if need(a) {
                        add_into(acc(&mut grads, a, g.len()), &g, 1.0);
                    }
                    if need(b) {
                        let m = nodes[b].value.len();
                        let gb = acc(&mut grads, b, m);
                        for row in g.chunks_exact(m) {
                            add_into(gb, row, 1.0);
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if need(a) {
                        add_into(acc(&mut grads, a, g.len()), &g, 1.0);
                    }
                    if need(b) {
                        add_into(acc(&mut grads, b, g.len()), &g, sign);
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        let y = nodes[b].value.data();
                        for ((o, gv), yv) in acc(&mut grads, a, g.len()).iter_mut().zip(&g).zip(y) {
                            *o += gv * yv;
                        }
                    }
                    if need(b) {
                        let x = nodes[a].value.data();
                        for ((o, gv), xv) in acc(&mut grads, b, g.len()).iter_mut().zip(&g).zip(x) {
                            *o += gv * xv;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if need(a) {
                        add_into(acc(&mut grads, a, g.len()), &g, c);
                    }
                }
                Op::Relu(a) => {
                    if need(a) {
                        let x = nodes[a].value.data();
                        for ((o, gv), xv) in acc(&mut grads, a, g.len()).iter_mut().zip(&g).zip(x) {
                            if *xv > 0.0 {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Exp(a) => {
                    if need(a) {
                        for ((o, gv), ev) in acc(&mut grads, a, g.len()).iter_mut().zip(&g).zip(out.data()) {
                            *o += gv * ev;
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    if need(a) {
                        let (_, m) = out.dims2();
                        let ga = acc(&mut grads, a, g.len());
                        for ((orow, grow), lrow) in ga
                            .chunks_exact_mut(m)
                            .zip(g.chunks_exact(m))
                            .zip(out.data().chunks_exact(m))
                        {
                            let total: f32 = grow.iter().sum();
                            for ((o, gv), lv) in orow.iter_mut().zip(grow).zip(lrow) {
                                *o += gv - lv.exp() * total;
                            }
                        }
                    }
                }
                Op::Square(a) => {
                    if need(a) {
                        let x = nodes[a].value.data();
                        for ((o, gv), xv) in acc(&mut grads, a, g.len()).iter_mut().zip(&g).zip(x) {
                            *o += 2.0 * xv * gv;
                        }
                    }
                }
                Op::SumAll(a) | Op::MeanAll(a) => {
                    if need(a) {
                        let n = nodes[a].value.len();
                        let v = if matches!(node.op, Op::MeanAll(_)) { g[0] / n as f32 } else { g[0] };
                        for o in acc(&mut grads, a, n) {
                            *o += v;
                        }
                    }
                }
                Op::SumRows(a) => {
                    if need(a) {
                        let (_, m) = nodes[a].value.dims2();
                        let n = nodes[a].value.len();
                        for (row, gv) in acc(&mut grads, a, n).chunks_exact_mut(m).zip(&g) {
                            for o in row {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let (_, p) = nodes[a].value.dims2();
                    let (_, q) = nodes[b].value.dims2();
                    if need(a) {
                        let n = nodes[a].value.len();
                        for (row, grow) in acc(&mut grads, a, n).chunks_exact_mut(p).zip(g.chunks_exact(p + q)) {
                            add_into(row, &grow[..p], 1.0);
                        }
                    }
                    if need(b) {
                        let n = nodes[b].value.len();
                        for (row, grow) in acc(&mut grads, b, n).chunks_exact_mut(q).zip(g.chunks_exact(p + q)) {
                            add_into(row, &grow[p..], 1.0);
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        // Only leaves keep their gradient.
        for (i, n) in nodes.iter().enumerate().take(root + 1) {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            }
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            lens: nodes.iter().map(|n| n.value.len()).collect(),
        })
    }
}

fn acc(grads: &mut [Option<Vec<f32>>], i: usize, len: usize) -> &mut [f32] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32], c: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_into(x: &[f32], y: &[f32], out: &mut [f32], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for c in 0..k {
            let xv = x[r * k + c];
            if xv == 0.0 {
                continue;
            }
            for (o, yv) in orow.iter_mut().zip(&y[c * m..(c + 1) * m]) {
                *o += xv * yv;
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f32]) -> f32 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln()
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("same shape")
}

fn zip_same(name: &str, x: &Tensor, y: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if x.len() != y.len() {
        return Err(shape_err(name, x, y));
    }
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
    )
}

fn shape_err(op: &str, x: &Tensor, y: &Tensor) -> FlipError {
    FlipError::Argument(format!("{op}: incompatible shapes {:?} and {:?}", x.shape(), y.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[3], &[0.5, -2.0, 4.0]));
        let loss = tape.sum_all(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn half_sum_of_squares_gives_w() {
        let tape = Tape::new();
        let data = [0.5, -2.0, 4.0, 1e-3];
        let w = tape.leaf(t(&[4], &data));
        let sq = tape.square(w).unwrap();
        let s = tape.sum_all(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let mut param = t(&[4], &data);
        tape.backward(loss).unwrap().write_to(w, &mut param).unwrap();
        assert_eq!(param.grad().unwrap(), &data);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.sum_all(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn detached_and_foreign_vars_are_usage_errors() {
        let tape = Tape::new();
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let s = tape.sum_all(c).unwrap();
        assert!(matches!(tape.backward(s), Err(FlipError::Usage(_))));

        let other = Tape::new();
        let w = other.leaf(t(&[1], &[1.0]));
        assert!(matches!(tape.backward(w), Err(FlipError::Usage(_))));
        assert!(matches!(tape.relu(w), Err(FlipError::Usage(_))));

        let v = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(v), Err(FlipError::Usage(_))));
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0]));
        let w = tape.leaf(t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let b = tape.leaf(t(&[2], &[1.0, -1.0]));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.add_bias(y, b).unwrap();
        let expect = [3.2, 1.8, 2.05, 0.2];
        for (a, b) in tape.value(y).unwrap().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let loss = tape.sum_all(y).unwrap();
        let g = tape.backward(loss).unwrap();
        // d/dW_ij sum(xW) = sum_r x_ri
        assert_eq!(g.wrt(w).unwrap(), vec![0.0, 0.0, 2.5, 2.5, 5.0, 5.0]);
        assert_eq!(g.wrt(b).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[0.0, 1.0, 2.0, 5.0, 5.0, 5.0]));
        let l = tape.log_softmax(x).unwrap();
        let v = tape.value(l).unwrap();
        for r in 0..2 {
            let s: f32 = v.row(r).iter().map(|p| p.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!((v.row(1)[0] - (1.0f32 / 3.0).ln()).abs() < 1e-6);
        // Sum of all log-probs: gradient is 1 - m * softmax.
        let loss = tape.sum_all(l).unwrap();
        let g = tape.backward(loss).unwrap().wrt(x).unwrap();
        for (gv, lv) in g.iter().zip(v.data()) {
            assert!((gv - (1.0 - 3.0 * lv.exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_and_sum_rows_route_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).unwrap().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum_rows(p).unwrap();
        let sq = tape.square(s).unwrap();
        let loss = tape.mean_all(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        // s = [1+6+12, 8+25+36] = [19, 69]; dL/ds = s
        assert_eq!(g.wrt(a).unwrap(), vec![19.0, 4.0 * 69.0]);
        assert_eq!(g.wrt(b).unwrap(), vec![38.0, 57.0, 5.0 * 69.0, 6.0 * 69.0]);
    }

    #[test]
    fn relu_exp_sub_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.5, 2.0]));
        let r = tape.relu(x).unwrap();
        let e = tape.exp(x).unwrap();
        let d = tape.sub(r, e).unwrap();
        let a = tape.add(d, x).unwrap();
        let loss = tape.sum_all(a).unwrap();
        let g = tape.backward(loss).unwrap().wrt(x).unwrap();
        let expect = [0.0 - (-1f32).exp() + 1.0, 1.0 - 0.5f32.exp() + 1.0, 1.0 - 2f32.exp() + 1.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.leaf(Tensor::zeros(vec![4]));
        assert!(tape.add(a, c).is_err());
        assert!(tape.add_bias(a, c).is_err());
    }
}
