//! Reverse-mode automatic differentiation on a linear operation tape.
//!
//! Values live in an arena of [`Tensor`]s indexed by [`Var`]. The forward
//! pass records one [`Op`] per computation; `backward` replays the tape in
//! reverse, accumulating vector-Jacobian products into every node that can
//! reach a gradient-enabled leaf. Constants never accumulate gradient.
//!
//! A tape and its vars are confined to one owner; drop (or [`Tape::clear`])
//! frees all intermediates. Parameters live outside the tape as plain
//! tensors and are lifted onto it once per step.

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    /// True for gradient leaves and anything computed from one.
    needs_grad: bool,
    /// True only for leaves registered via `param`.
    is_param: bool,
}

enum Op<T> {
    Matmul { a: Var, b: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Sub { a: Var, b: Var, out: Var },
    Mul { a: Var, b: Var, out: Var },
    AddRow { a: Var, bias: Var, out: Var },
    Scale { a: Var, factor: T, out: Var },
    Relu { a: Var, out: Var },
    // Test fixture: forward is relu, backward is deliberately wrong.
    ReluBrokenGrad { a: Var, out: Var },
    Sigmoid { a: Var, out: Var },
    SoftmaxRows { a: Var, out: Var },
    LnClamped { a: Var, lo: f64, hi: f64, out: Var },
    MixRows { a: Var, b: Var, lambda: Vec<T>, out: Var },
    GradReverse { a: Var, coeff: T, out: Var },
    SumAll { a: Var, out: Var },
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    ops: Vec<Op<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Drop every node and op. Parameters are external tensors, so this
    /// frees all intermediates at once.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.ops.clear();
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, is_param: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            is_param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Lift a value onto the tape as a constant. Never accumulates gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, false)
    }

    /// Lift a value onto the tape as a gradient leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` with respect to `v`.
    ///
    /// `Some` for every param leaf after backward (zeros if unreached);
    /// `None` for constants and before backward.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn scalar_value(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn out_of(&mut self, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, needs, false)
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dims("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        let out = self.out_of(out, &[a, b]);
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise_binary("add", a, b, |x, y| x + y)?;
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise_binary("sub", a, b, |x, y| x - y)?;
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise_binary("mul", a, b, |x, y| x * y)?;
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    fn elementwise_binary(
        &mut self,
        what: &str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dims(what, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.out_of(value, &[a, b]))
    }

    /// Broadcast add of a bias row: `[B,n] + [n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if av.rank() != 2 || bv.rank() != 1 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dims("add_row", av.shape(), bv.shape()));
        }
        let (rows, n) = (av.shape()[0], av.shape()[1]);
        let mut data = Vec::with_capacity(rows * n);
        for i in 0..rows {
            for j in 0..n {
                data.push(av.data()[i * n + j] + bv.data()[j]);
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let out = self.out_of(value, &[a, bias]);
        self.ops.push(Op::AddRow { a, bias, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::Scale { a, factor, out });
        out
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(Error::Numeric("relu: non-finite input".into()));
        }
        let value = self.value(a).map(|x| x.maximum(T::ZERO));
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::Relu { a, out });
        Ok(out)
    }

    /// Forward identical to [`Tape::relu`]; backward scales the gradient by a
    /// wrong factor. Exists so gradient-check failure paths can be exercised.
    #[doc(hidden)]
    pub fn relu_broken_grad(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(Error::Numeric("relu: non-finite input".into()));
        }
        let value = self.value(a).map(|x| x.maximum(T::ZERO));
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::ReluBrokenGrad { a, out });
        Ok(out)
    }

    /// Logistic function, computed in f64 and pinned to the open interval
    /// (0,1) so downstream logs stay finite.
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(Error::Numeric("sigmoid: non-finite input".into()));
        }
        let lo = f64::MIN_POSITIVE;
        let hi = 1.0 - f64::EPSILON;
        let value = self.value(a).map(|x| {
            let s = 1.0 / (1.0 + (-x.to_f64()).exp());
            T::from_f64(s.clamp(lo, hi))
        });
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::Sigmoid { a, out });
        Ok(out)
    }

    /// Row-wise softmax over the last axis of a rank-2 tensor. Stabilized by
    /// max subtraction and accumulated in f64.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::dims("softmax_rows", av.shape(), &[0, 0]));
        }
        if !av.all_finite() {
            return Err(Error::Numeric("softmax: non-finite input".into()));
        }
        let (rows, n) = (av.shape()[0], av.shape()[1]);
        let mut data = Vec::with_capacity(rows * n);
        for i in 0..rows {
            let row = &av.data()[i * n..(i + 1) * n];
            let max = row
                .iter()
                .map(|v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| T::from_f64(e / sum)));
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::SoftmaxRows { a, out });
        Ok(out)
    }

    /// `ln(clamp(a, lo, hi))`. Gradient passes only where `lo <= a <= hi`.
    pub fn ln_clamped(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self
            .value(a)
            .map(|x| T::from_f64(x.to_f64().clamp(lo, hi).ln()));
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::LnClamped { a, lo, hi, out });
        out
    }

    /// Per-row convex combination with a constant coefficient vector:
    /// `out[i] = lambda[i]*a[i] + (1-lambda[i])*b[i]`. Gradients flow to
    /// both operands, scaled by their coefficients.
    pub fn mix_rows(&mut self, a: Var, b: Var, lambda: &[T]) -> Result<Var> {
        let value = Tensor::mix_rows(self.value(a), self.value(b), lambda)?;
        let out = self.out_of(value, &[a, b]);
        self.ops.push(Op::MixRows {
            a,
            b,
            lambda: lambda.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// `-coeff`. The adversarial min-max collapses into one descent step.
    pub fn grad_reverse(&mut self, a: Var, coeff: T) -> Var {
        let value = self.value(a).clone();
        let out = self.out_of(value, &[a]);
        self.ops.push(Op::GradReverse { a, coeff, out });
        out
    }

    /// Sum of all elements, as a scalar node. Accumulated in f64.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().map(|v| v.to_f64()).sum();
        let out = self.out_of(Tensor::scalar(T::from_f64(total)), &[a]);
        self.ops.push(Op::SumAll { a, out });
        out
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across every use of a node; after the sweep, each param leaf holds a
    /// gradient of its own shape (zeros if unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.seed(loss);

        for idx in (0..self.ops.len()).rev() {
            self.backward_op(idx);
        }

        for node in &mut self.nodes {
            if node.is_param && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn seed(&mut self, loss: Var) {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(shape, T::ONE));
    }

    fn take_out_grad(&self, out: Var) -> Option<Tensor<T>> {
        self.nodes[out.0].grad.clone()
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_op(&mut self, idx: usize) {
        // Ops are cheap to re-borrow; clone the small metadata up front.
        match &self.ops[idx] {
            Op::Matmul { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let (m, k) = (
                    self.value(a).shape()[0],
                    self.value(a).shape()[1],
                );
                let n = self.value(b).shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_nt_acc(g.data(), self.value(b).data(), da.data_mut(), m, n, k);
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Tensor::zeros(vec![k, n]);
                    matmul_tn_acc(self.value(a).data(), g.data(), db.data_mut(), m, k, n);
                    self.accumulate(b, db);
                }
            }
            Op::Add { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(a, g.clone());
                self.accumulate(b, g);
            }
            Op::Sub { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|x| -x));
            }
            Op::Mul { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                if self.nodes[a.0].needs_grad {
                    let bv = self.value(b);
                    let da = Tensor::new(
                        bv.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(bv.data())
                            .map(|(&gv, &bvv)| gv * bvv)
                            .collect(),
                    )
                    .expect("shape");
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.value(a);
                    let db = Tensor::new(
                        av.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gv, &avv)| gv * avv)
                            .collect(),
                    )
                    .expect("shape");
                    self.accumulate(b, db);
                }
            }
            Op::AddRow { a, bias, out } => {
                let (a, bias, out) = (*a, *bias, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let (rows, n) = (g.shape()[0], g.shape()[1]);
                if self.nodes[bias.0].needs_grad {
                    let mut db = Tensor::zeros(vec![n]);
                    for i in 0..rows {
                        for j in 0..n {
                            db.data_mut()[j] += g.data()[i * n + j];
                        }
                    }
                    self.accumulate(bias, db);
                }
                self.accumulate(a, g);
            }
            Op::Scale { a, factor, out } => {
                let (a, factor, out) = (*a, *factor, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(a, g.map(|x| x * factor));
            }
            Op::Relu { a, out } => {
                let (a, out) = (*a, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let av = self.value(a);
                let da = Tensor::new(
                    av.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| if x > T::ZERO { gv } else { T::ZERO })
                        .collect(),
                )
                .expect("shape");
                self.accumulate(a, da);
            }
            Op::ReluBrokenGrad { a, out } => {
                let (a, out) = (*a, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let wrong = T::from_f64(1.1);
                let av = self.value(a);
                let da = Tensor::new(
                    av.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| if x > T::ZERO { gv * wrong } else { T::ZERO })
                        .collect(),
                )
                .expect("shape");
                self.accumulate(a, da);
            }
            Op::Sigmoid { a, out } => {
                let (a, out) = (*a, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let sv = self.value(out);
                let da = Tensor::new(
                    sv.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(sv.data())
                        .map(|(&gv, &s)| gv * s * (T::ONE - s))
                        .collect(),
                )
                .expect("shape");
                self.accumulate(a, da);
            }
            Op::SoftmaxRows { a, out } => {
                let (a, out) = (*a, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let pv = self.value(out);
                let (rows, n) = (pv.shape()[0], pv.shape()[1]);
                let mut da = Tensor::zeros(vec![rows, n]);
                for i in 0..rows {
                    let p = &pv.data()[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = p
                        .iter()
                        .zip(gr)
                        .map(|(&pj, &gj)| pj.to_f64() * gj.to_f64())
                        .sum();
                    let dot = T::from_f64(dot);
                    let drow = &mut da.data_mut()[i * n..(i + 1) * n];
                    for j in 0..n {
                        drow[j] = p[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, da);
            }
            Op::LnClamped { a, lo, hi, out } => {
                let (a, lo, hi, out) = (*a, *lo, *hi, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let av = self.value(a);
                let da = Tensor::new(
                    av.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| {
                            let xf = x.to_f64();
                            if xf >= lo && xf <= hi {
                                T::from_f64(gv.to_f64() / xf)
                            } else {
                                T::ZERO
                            }
                        })
                        .collect(),
                )
                .expect("shape");
                self.accumulate(a, da);
            }
            Op::MixRows { a, b, lambda, out } => {
                let (a, b, out) = (*a, *b, *out);
                let lambda = lambda.clone();
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let (rows, n) = (g.shape()[0], g.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut da = Tensor::zeros(vec![rows, n]);
                    for (i, &l) in lambda.iter().enumerate() {
                        for j in 0..n {
                            da.data_mut()[i * n + j] = g.data()[i * n + j] * l;
                        }
                    }
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Tensor::zeros(vec![rows, n]);
                    for (i, &l) in lambda.iter().enumerate() {
                        let inv = T::ONE - l;
                        for j in 0..n {
                            db.data_mut()[i * n + j] = g.data()[i * n + j] * inv;
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::GradReverse { a, coeff, out } => {
                let (a, coeff, out) = (*a, *coeff, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(a, g.map(|x| -(x * coeff)));
            }
            Op::SumAll { a, out } => {
                let (a, out) = (*a, *out);
                let Some(g) = self.take_out_grad(out) else {
                    return;
                };
                let gv = g.data()[0];
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, Tensor::full(shape, gv));
            }
        }
    }
}

// ── Batch losses built from primitives ──────────────────────────────────────

/// Clamp floor for probabilities entering a logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn check_prob_rows<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::Validation(format!(
            "{what}: expected a batch of probability rows, got shape {:?}",
            t.shape()
        )));
    }
    let n = t.shape()[1];
    for i in 0..t.shape()[0] {
        let sum: f64 = t.data()[i * n..(i + 1) * n]
            .iter()
            .map(|v| v.to_f64())
            .sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Validation(format!(
                "{what}: row {i} sums to {sum}, expected 1 within 1e-5"
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy between probability batches, soft targets allowed:
/// `(1/B) Σᵢ −Σ_c target · ln(pred)` with `pred` clamped to `[1e-12, 1]`.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    let (tv, pv) = (tape.value(target), tape.value(pred));
    if tv.shape() != pv.shape() {
        return Err(Error::dims("cross_entropy", tv.shape(), pv.shape()));
    }
    check_prob_rows("cross_entropy target", tv)?;
    check_prob_rows("cross_entropy pred", pv)?;
    let batch = tv.shape()[0];
    let log_p = tape.ln_clamped(pred, LOG_EPS, 1.0);
    let weighted = tape.mul(target, log_p)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, T::from_f64(-1.0 / batch as f64)))
}

/// Mean over the batch of per-sample squared Euclidean distance.
pub fn mse<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.shape() != bv.shape() {
        return Err(Error::dims("mse", av.shape(), bv.shape()));
    }
    let batch = av.batch_len();
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, T::from_f64(1.0 / batch as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut tape = Tape::new();
        let m = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let id = tape.constant(Tensor::identity(2));
        let out = tape.matmul(id, m).unwrap();
        assert_eq!(tape.value(out), &t2(&[&[1.0, 2.0], &[3.0, 4.0]]));

        let z = tape.constant(Tensor::zeros(vec![2, 3]));
        let any = tape.constant(Tensor::full(vec![3, 4], 7.5));
        let zz = tape.matmul(z, any).unwrap();
        assert_eq!(tape.value(zz), &Tensor::zeros(vec![2, 4]));
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t2(&[&[1.0], &[1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &t2(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let mut tape = Tape::new();
        let logits = tape.constant(t2(&[&[0.0, 0.0, 0.0]]));
        let p = tape.softmax_rows(logits).unwrap();
        for &v in tape.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let shifted = tape.constant(t2(&[&[5.0, 5.0, 5.0]]));
        let q = tape.softmax_rows(shifted).unwrap();
        assert_eq!(tape.value(p), tape.value(q));
    }

    #[test]
    fn softmax_direct_value() {
        // softmax(0, ln 3) = (0.25, 0.75)
        let mut tape = Tape::new();
        let logits = tape.constant(t2(&[&[0.0, 3.0f64.ln()]]));
        let p = tape.softmax_rows(logits).unwrap();
        assert!((tape.value(p).data()[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(p).data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let logits = tape.constant(t2(&[&[3.1, -2.0, 0.7, 11.0], &[-40.0, 0.0, 2.0, 2.0]]));
        let p = tape.softmax_rows(logits).unwrap();
        for i in 0..2 {
            let s: f64 = tape.value(p).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut tape = Tape::new();
        let logits = tape.constant(t2(&[&[f64::NAN, 0.0]]));
        assert!(matches!(
            tape.softmax_rows(logits),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();

        // perfect one-hot prediction -> 0
        let t = tape.constant(t2(&[&[0.0, 1.0]]));
        let ce = cross_entropy(&mut tape, t, t).unwrap();
        assert_eq!(tape.scalar_value(ce).unwrap(), 0.0);

        // uniform target and prediction over C classes -> ln C
        let u = tape.constant(t2(&[&[0.25; 4]]));
        let ce = cross_entropy(&mut tape, u, u).unwrap();
        assert!((tape.scalar_value(ce).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        // (0.7, 0.3) against (0.5, 0.5) -> ln 2
        let t = tape.constant(t2(&[&[0.7, 0.3]]));
        let p = tape.constant(t2(&[&[0.5, 0.5]]));
        let ce = cross_entropy(&mut tape, t, p).unwrap();
        assert!((tape.scalar_value(ce).unwrap() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_entropy_oracle() {
        // CE(q, q) == H(q), H computed by direct summation.
        let rows: Vec<Vec<f64>> = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.85, 0.05, 0.05, 0.05],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let q = t2(&refs);
        let entropy: f64 = rows
            .iter()
            .flat_map(|r| r.iter().map(|&p| -p * p.ln()))
            .sum::<f64>()
            / rows.len() as f64;

        let mut tape = Tape::new();
        let qv = tape.constant(q);
        let ce = cross_entropy(&mut tape, qv, qv).unwrap();
        assert!((tape.scalar_value(ce).unwrap() - entropy).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_rows() {
        let mut tape = Tape::new();
        let t = tape.constant(t2(&[&[0.9, 0.3]]));
        let p = tape.constant(t2(&[&[0.5, 0.5]]));
        assert!(matches!(
            cross_entropy(&mut tape, t, p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0]]));
        let zero = mse(&mut tape, a, a).unwrap();
        assert_eq!(tape.scalar_value(zero).unwrap(), 0.0);

        // a = b + 1 elementwise, width d -> d
        let b = tape.constant(t2(&[&[0.0, 1.0], &[5.0, 5.0]]));
        let b1 = tape.constant(t2(&[&[1.0, 2.0], &[6.0, 6.0]]));
        let m = mse(&mut tape, b1, b).unwrap();
        assert_eq!(tape.scalar_value(m).unwrap(), 2.0);

        // (1,2) vs (4,6) -> 9 + 16 = 25
        let x = tape.constant(t2(&[&[1.0, 2.0]]));
        let y = tape.constant(t2(&[&[4.0, 6.0]]));
        let m = mse(&mut tape, x, y).unwrap();
        assert_eq!(tape.scalar_value(m).unwrap(), 25.0);
    }

    #[test]
    fn mse_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![1, 2]));
        let b = tape.constant(Tensor::zeros(vec![1, 3]));
        assert!(matches!(
            mse(&mut tape, a, b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &Tensor::full(vec![2, 2], 1.0));
    }

    #[test]
    fn backward_at_minimum_gives_zeros() {
        let mut tape = Tape::new();
        let c = t2(&[&[2.0, -1.0]]);
        let p = tape.param(c.clone());
        let k = tape.constant(c);
        let loss = mse(&mut tape, p, k).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &Tensor::zeros(vec![1, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0, 2.0]]));
        assert!(matches!(
            tape.backward(p),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reuse_doubles_gradient_for_linear_loss() {
        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0, 2.0]]));
        let once = tape.sum_all(p);
        tape.backward(once).unwrap();
        let g1 = tape.grad(p).unwrap().clone();

        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0, 2.0]]));
        let twice = tape.add(p, p).unwrap();
        let loss = tape.sum_all(twice);
        tape.backward(loss).unwrap();
        let g2 = tape.grad(p).unwrap().clone();

        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn constants_never_accumulate_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t2(&[&[1.0, 2.0]]));
        let p = tape.param(t2(&[&[3.0, 4.0]]));
        let prod = tape.mul(c, p).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(p).is_some());
    }

    #[test]
    fn unreachable_param_gets_zero_grad_of_same_shape() {
        let mut tape = Tape::new();
        let used = tape.param(t2(&[&[1.0]]));
        let unused = tape.param(t2(&[&[9.0, 9.0, 9.0]]));
        let loss = tape.sum_all(used);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &Tensor::zeros(vec![1, 3]));
    }

    #[test]
    fn grad_reverse_flips_and_scales() {
        let build = |coeff: Option<f64>| {
            let mut tape = Tape::new();
            let p = tape.param(t2(&[&[1.0, -2.0]]));
            let h = match coeff {
                Some(c) => tape.grad_reverse(p, c),
                None => p,
            };
            let s = tape.scale(h, 3.0);
            let loss = tape.sum_all(s);
            tape.backward(loss).unwrap();
            tape.grad(p).unwrap().clone()
        };
        let plain = build(None);
        let reversed = build(Some(2.5));
        for (a, b) in plain.data().iter().zip(reversed.data()) {
            assert_eq!(*b, -2.5 * *a);
        }
        // forward is the identity
        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0, -2.0]]));
        let h = tape.grad_reverse(p, 2.5);
        assert_eq!(tape.value(h), tape.value(p));
    }

    #[test]
    fn clear_frees_everything() {
        let mut tape = Tape::new();
        let p = tape.param(t2(&[&[1.0]]));
        let _ = tape.sum_all(p);
        assert!(tape.num_nodes() > 0 && tape.num_ops() > 0);
        tape.clear();
        assert_eq!(tape.num_nodes(), 0);
        assert_eq!(tape.num_ops(), 0);
    }
}
