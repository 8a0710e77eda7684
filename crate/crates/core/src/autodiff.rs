//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied to its variables in
//! evaluation order. [`Tape::backward`] consumes the tape and accumulates
//! adjoints from the loss back to the registered parameters. Unrolled
//! recurrences are recorded step by step on a single tape, so calling
//! `backward` on a sequence loss is backpropagation through time.
//!
//! ```
//! use gcrnn::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let p = tape.param(Tensor::from_vec(&[2], vec![1.0, -3.0]).unwrap());
//! let sq = tape.hadamard(p, p).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(p).unwrap().data(), &[2.0, -6.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, T),
    Hadamard(usize, usize),
    /// Tensor times a one-element variable.
    ScaleBy(usize, usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Sum(usize),
    MeanAbs(usize, usize),
    SoftmaxCrossEntropy { logits: usize, label: usize, probs: Vec<T> },
    Reshape(usize),
    Transpose(usize),
    /// `Σ_k S^k X A_kᵀ`; `powers[k]` caches `S^k X`.
    GraphFilter {
        gso: usize,
        signal: usize,
        taps: usize,
        powers: Vec<Tensor<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; its gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v.index);
        v
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> Vec<Var> {
        self.params.iter().map(|&index| self.var(index)).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.check(v).expect("variable belongs to this tape")].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.record(out, Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x + y)?;
        self.record(out, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x * c);
        self.record(out, Op::Scale(ia, c), &[ia])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x * y)?;
        self.record(out, Op::Hadamard(ia, ib), &[ia, ib])
    }

    /// Multiplies every entry of `a` by the one-element variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.check(a)?, self.check(s)?);
        let sv = &self.nodes[is].value;
        if !sv.is_scalar() {
            return Err(Error::shape("scale_by", format!("factor has shape {:?}", sv.shape())));
        }
        let c = sv.item();
        let out = self.nodes[ia].value.map(|x| x * c);
        self.record(out, Op::ScaleBy(ia, is), &[ia, is])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(T::tanh);
        self.record(out, Op::Tanh(ia), &[ia])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x.max(T::zero()));
        self.record(out, Op::Relu(ia), &[ia])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(sigmoid);
        self.record(out, Op::Sigmoid(ia), &[ia])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        self.record(out, Op::Sum(ia), &[ia])
    }

    /// Mean absolute difference `mean(|a − b|)` over all entries.
    pub fn mean_abs(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mean_abs",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let total: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let out = Tensor::scalar(total / T::from_count(va.len()));
        self.record(out, Op::MeanAbs(ia, ib), &[ia, ib])
    }

    /// `−log softmax(logits)[label]` over the flattened logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let il = self.check(logits)?;
        let z = self.nodes[il].value.data();
        if label >= z.len() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let (loss, probs) = softmax_xent(z, label);
        self.record(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: il,
                label,
                probs,
            },
            &[il],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.clone().reshape(shape)?;
        self.record(out, Op::Reshape(ia), &[ia])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.shape().len() > 2 {
            return Err(Error::shape("transpose", format!("rank-3 input {:?}", v.shape())));
        }
        let out = v.transpose();
        self.record(out, Op::Transpose(ia), &[ia])
    }

    /// Applies a bank of polynomial graph filters.
    ///
    /// `gso` is `N × N`, `signal` is `N × F` and `taps` is `K × G × F`; the
    /// result is the `N × G` matrix `Σ_k S^k X A_kᵀ`. Shifted signals are
    /// produced by repeated multiplication by `S`, so only `K − 1` shifts
    /// happen and powers of `S` are never formed. Gradients do not flow
    /// into `gso`.
    pub fn graph_filter(&mut self, gso: Var, signal: Var, taps: Var) -> Result<Var> {
        let (is, ix, ia) = (self.check(gso)?, self.check(signal)?, self.check(taps)?);
        if self.nodes[is].needs_grad {
            return Err(Error::invalid("graph_filter does not differentiate the shift operator"));
        }
        let (s, x, a) = (&self.nodes[is].value, &self.nodes[ix].value, &self.nodes[ia].value);
        let n = x.rows();
        let f = x.cols();
        if !s.is_matrix() || s.rows() != n || s.cols() != n || a.shape().len() != 3 || a.shape()[2] != f
            || !(x.is_matrix() || x.shape().len() == 1)
        {
            return Err(Error::shape(
                "graph_filter",
                format!("S {:?}, X {:?}, taps {:?}", s.shape(), x.shape(), a.shape()),
            ));
        }
        let (k, g) = (a.shape()[0], a.shape()[1]);
        let mut powers = Vec::with_capacity(k);
        powers.push(x.clone().reshape(&[n, f])?);
        for _ in 1..k {
            let mut next = vec![T::zero(); n * f];
            matmul_into(s.data(), powers.last().expect("nonempty").data(), &mut next, n, n, f);
            powers.push(Tensor::from_vec(&[n, f], next)?);
        }
        let mut out = vec![T::zero(); n * g];
        let tap_len = g * f;
        for (kk, z) in powers.iter().enumerate() {
            let ak = &a.data()[kk * tap_len..(kk + 1) * tap_len];
            matmul_nt_into(z.data(), ak, &mut out, n, f, g);
        }
        let out = Tensor::from_vec(&[n, g], out)?;
        self.record(
            out,
            Op::GraphFilter {
                gso: is,
                signal: ix,
                taps: ia,
                powers,
            },
            &[ix, ia],
        )
    }

    /// Reverse accumulation from a one-element `loss`.
    ///
    /// Consumes the tape. Gradients are reported for every registered
    /// parameter, zero-filled when the loss does not depend on it.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let il = self.check(loss)?;
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::invalid(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[il] = Some(vec![T::one()]);

        for idx in (0..=il).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let out_val = node.value.data();
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    if self.nodes[*a].needs_grad {
                        let acc = slot(&mut adj, *a, m * k);
                        matmul_nt_into(&g, vb.data(), acc, m, n, k);
                    }
                    if self.nodes[*b].needs_grad {
                        let acc = slot(&mut adj, *b, k * n);
                        matmul_tn_into(va.data(), &g, acc, m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    for &p in &[*a, *b] {
                        if self.nodes[p].needs_grad {
                            axpy(slot(&mut adj, p, g.len()), &g, T::one());
                        }
                    }
                }
                Op::Scale(a, c) => {
                    axpy(slot(&mut adj, *a, g.len()), &g, *c);
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let other = self.nodes[b].value.data();
                        let acc = slot(&mut adj, a, g.len());
                        for ((o, &gi), &v) in acc.iter_mut().zip(&g).zip(other) {
                            *o += gi * v;
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let other = self.nodes[a].value.data();
                        let acc = slot(&mut adj, b, g.len());
                        for ((o, &gi), &v) in acc.iter_mut().zip(&g).zip(other) {
                            *o += gi * v;
                        }
                    }
                }
                Op::ScaleBy(a, s) => {
                    let (a, s) = (*a, *s);
                    let c = self.nodes[s].value.item();
                    if self.nodes[a].needs_grad {
                        axpy(slot(&mut adj, a, g.len()), &g, c);
                    }
                    if self.nodes[s].needs_grad {
                        let va = self.nodes[a].value.data();
                        let d: T = g.iter().zip(va).map(|(&gi, &v)| gi * v).sum();
                        slot(&mut adj, s, 1)[0] += d;
                    }
                }
                Op::Tanh(a) => {
                    let acc = slot(&mut adj, *a, g.len());
                    for ((o, &gi), &y) in acc.iter_mut().zip(&g).zip(out_val) {
                        *o += gi * (T::one() - y * y);
                    }
                }
                Op::Relu(a) => {
                    let input = self.nodes[*a].value.data();
                    let acc = slot(&mut adj, *a, g.len());
                    for ((o, &gi), &x) in acc.iter_mut().zip(&g).zip(input) {
                        if x > T::zero() {
                            *o += gi;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let acc = slot(&mut adj, *a, g.len());
                    for ((o, &gi), &y) in acc.iter_mut().zip(&g).zip(out_val) {
                        *o += gi * y * (T::one() - y);
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[*a].value.len();
                    for o in slot(&mut adj, *a, len) {
                        *o += g[0];
                    }
                }
                Op::MeanAbs(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let w = g[0] / T::from_count(va.len());
                    let signs: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| sign(x - y) * w).collect();
                    if self.nodes[a].needs_grad {
                        axpy(slot(&mut adj, a, signs.len()), &signs, T::one());
                    }
                    if self.nodes[b].needs_grad {
                        axpy(slot(&mut adj, b, signs.len()), &signs, -T::one());
                    }
                }
                Op::SoftmaxCrossEntropy { logits, label, probs } => {
                    let acc = slot(&mut adj, *logits, probs.len());
                    for (j, (o, &p)) in acc.iter_mut().zip(probs).enumerate() {
                        let target = if j == *label { T::one() } else { T::zero() };
                        *o += g[0] * (p - target);
                    }
                }
                Op::Reshape(a) | Op::Transpose(a) => {
                    let a = *a;
                    let local = match &node.op {
                        Op::Transpose(_) => {
                            let r = node.value.rows();
                            let c = node.value.cols();
                            let mut t = vec![T::zero(); g.len()];
                            for i in 0..r {
                                for j in 0..c {
                                    t[j * r + i] = g[i * c + j];
                                }
                            }
                            t
                        }
                        _ => g,
                    };
                    axpy(slot(&mut adj, a, local.len()), &local, T::one());
                }
                Op::GraphFilter {
                    gso,
                    signal,
                    taps,
                    powers,
                } => {
                    let (s, a) = (&self.nodes[*gso].value, &self.nodes[*taps].value);
                    let n = s.rows();
                    let (k, gdim, f) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                    let tap_len = gdim * f;
                    if self.nodes[*taps].needs_grad {
                        let acc = slot(&mut adj, *taps, k * tap_len);
                        for (kk, z) in powers.iter().enumerate() {
                            let dst = &mut acc[kk * tap_len..(kk + 1) * tap_len];
                            matmul_tn_into(&g, z.data(), dst, n, gdim, f);
                        }
                    }
                    if self.nodes[*signal].needs_grad {
                        // Horner in Sᵀ: dX = Σ_k (Sᵀ)^k dY A_k
                        let mut acc_x = vec![T::zero(); n * f];
                        for kk in (0..k).rev() {
                            let mut next = vec![T::zero(); n * f];
                            if kk + 1 < k {
                                matmul_tn_into(s.data(), &acc_x, &mut next, n, n, f);
                            }
                            let ak = &a.data()[kk * tap_len..(kk + 1) * tap_len];
                            matmul_into(&g, ak, &mut next, n, gdim, f);
                            acc_x = next;
                        }
                        axpy(slot(&mut adj, *signal, n * f), &acc_x, T::one());
                    }
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                let shape = self.nodes[p].value.shape();
                match adj[p].take() {
                    Some(g) => Tensor::from_vec(shape, g).expect("adjoint matches parameter"),
                    None => Tensor::zeros(shape),
                }
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            params: self.params,
            grads,
        })
    }

    fn var(&self, index: usize) -> Var {
        Var { tape: self.id, index }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::invalid("variable was not recorded on this tape"));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, operands: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numerical(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let needs_grad = operands.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    tape: u64,
    params: Vec<usize>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, param: Var) -> Option<&Tensor<T>> {
        if param.tape != self.tape {
            return None;
        }
        self.params
            .iter()
            .position(|&p| p == param.index)
            .map(|i| &self.grads[i])
    }

    /// Gradients in parameter registration order.
    pub fn as_slice(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Stable `(−log softmax(z)[label], softmax(z))`.
pub(crate) fn softmax_xent<T: Scalar>(z: &[T], label: usize) -> (T, Vec<T>) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let log_total = total.ln();
    let loss = log_total - (z[label] - max);
    let probs = exps.into_iter().map(|e| e / total).collect();
    (loss.max(T::zero()), probs)
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], index: usize, len: usize) -> &mut [T] {
    adj[index].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], c: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::Hadamard(..) => "hadamard",
        Op::ScaleBy(..) => "scale_by",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Sum(_) => "sum",
        Op::MeanAbs(..) => "mean_abs",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::Reshape(_) => "reshape",
        Op::Transpose(_) => "transpose",
        Op::GraphFilter { .. } => "graph_filter",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` with respect to every entry of every input.
    fn numeric_grads(
        inputs: &[Tensor<f64>],
        f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    ) -> Vec<Vec<f64>> {
        let eval = |vals: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
            let out = f(&mut tape, &vars);
            tape.value(out).item()
        };
        let eps = 1e-6;
        inputs
            .iter()
            .enumerate()
            .map(|(which, t)| {
                (0..t.len())
                    .map(|e| {
                        let mut plus = inputs.to_vec();
                        plus[which].data_mut()[e] += eps;
                        let mut minus = inputs.to_vec();
                        minus[which].data_mut()[e] -= eps;
                        (eval(&plus) - eval(&minus)) / (2.0 * eps)
                    })
                    .collect()
            })
            .collect()
    }

    fn check_grads(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let numeric = numeric_grads(inputs, f);
        for (g, n) in grads.as_slice().iter().zip(&numeric) {
            for (&a, &b) in g.data().iter().zip(n) {
                let scale = a.abs() + b.abs();
                let err = if scale < 1e-8 { (a - b).abs() } else { (a - b).abs() / scale };
                assert!(err < 1e-5, "analytic {a} vs numeric {b}");
            }
        }
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(t), &Tensor::zeros(&[2, 3]));
        let s = tape.sigmoid(z).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[5, 4], &mut rng);
        let b = random(&[4, 3], &mut rng);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.at(i, p) * b.at(p, j);
                }
                assert!((tape.value(c).at(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::filled(&[2, 3, 2], 0.7));
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(p).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 4], &mut rng);
        let mut tape = Tape::new();
        let p = tape.param(x.clone());
        let sq = tape.hadamard(p, p).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &x.map(|v| 2.0 * v));
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let s = random(&[1], &mut rng);

        check_grads(&[a.clone(), b.clone()], &|t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let h = t.tanh(m).unwrap();
            t.sum(h).unwrap()
        });
        check_grads(&[a.clone(), c.clone()], &|t, v| {
            let h = t.hadamard(v[0], v[1]).unwrap();
            let r = t.relu(h).unwrap();
            let q = t.add(r, v[1]).unwrap();
            let q = t.scale(q, -1.7).unwrap();
            let sg = t.sigmoid(q).unwrap();
            t.sum(sg).unwrap()
        });
        check_grads(&[a.clone(), s], &|t, v| {
            let y = t.scale_by(v[0], v[1]).unwrap();
            let y = t.transpose(y).unwrap();
            let y = t.reshape(y, &[12]).unwrap();
            let y = t.hadamard(y, y).unwrap();
            t.sum(y).unwrap()
        });
        check_grads(&[a.clone(), c], &|t, v| t.mean_abs(v[0], v[1]).unwrap());
        check_grads(&[random(&[6], &mut rng)], &|t, v| t.softmax_cross_entropy(v[0], 2).unwrap());
    }

    #[test]
    fn graph_filter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = random(&[5, 5], &mut rng);
        let x = random(&[5, 3], &mut rng);
        let taps = random(&[4, 2, 3], &mut rng);
        check_grads(&[x, taps], &|t, v| {
            let sv = t.constant(s.clone());
            let y = t.graph_filter(sv, v[0], v[1]).unwrap();
            let y = t.tanh(y).unwrap();
            t.sum(y).unwrap()
        });
    }

    #[test]
    fn graph_filter_matches_power_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let s = random(&[6, 6], &mut rng);
        let x = random(&[6, 2], &mut rng);
        let taps = random(&[3, 4, 2], &mut rng);
        let mut tape = Tape::new();
        let (sv, xv, av) = (tape.constant(s.clone()), tape.constant(x.clone()), tape.constant(taps.clone()));
        let y = tape.graph_filter(sv, xv, av).unwrap();
        let mut expected = Tensor::zeros(&[6, 4]);
        let mut power = Tensor::eye(6);
        for k in 0..3 {
            let term = power.matmul(&x).unwrap().matmul(&taps.slab(k).transpose()).unwrap();
            expected = expected.zip_map(&term, |p, q| p + q).unwrap();
            power = power.matmul(&s).unwrap();
        }
        assert!(tape.value(y).max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_foreign_and_non_scalar_losses() {
        let mut other = Tape::<f64>::new();
        let foreign = other.param(Tensor::scalar(1.0));
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::zeros(&[2]));
        assert!(tape.sum(foreign).is_err());
        assert!(Tape::<f64>::new().backward(foreign).is_err());
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(a, a), Err(Error::Shape { .. })));
        assert!(tape.softmax_cross_entropy(a, 6).is_err());
        let big = tape.constant(Tensor::scalar(f64::MAX));
        assert!(tape.scale(big, 10.0).unwrap_err().is_numerical());
    }

    #[test]
    fn backward_is_linear_in_loss_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random(&[4, 4], &mut rng);
        let run = |c: f64| {
            let mut tape = Tape::new();
            let p = tape.param(x.clone());
            let y = tape.tanh(p).unwrap();
            let y = tape.sum(y).unwrap();
            let y = tape.scale(y, c).unwrap();
            tape.backward(y).unwrap().into_vec().remove(0)
        };
        let base = run(1.0);
        let scaled = run(3.0);
        for (&a, &b) in base.data().iter().zip(scaled.data()) {
            assert_eq!(3.0 * a, b);
        }
        assert_eq!(run(1.0), base);
    }

    #[test]
    fn cross_entropy_is_stable() {
        let mut logits = vec![0.0; 8];
        let (uniform, _) = softmax_xent(&logits, 3);
        assert!((uniform - 8f64.ln()).abs() < 1e-12);
        logits[3] = 50.0;
        assert!(softmax_xent(&logits, 3).0 < 1e-20);
        let huge = [1e4f64, -1e4, 0.0];
        assert!(softmax_xent(&huge, 0).0.is_finite());
    }
}
