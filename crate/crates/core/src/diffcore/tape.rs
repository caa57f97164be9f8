//! Reverse-mode gradient tape over row-major matrices.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Every
//! operation treats its operands as `[rows, cols]` matrices (see
//! [`Tensor::rows`]); the row axis is the batch axis.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug)]
enum Unary<F> {
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Abs,
    Square,
    Affine { scale: F, shift: F },
    Clamp { lo: F, hi: F },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Min,
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Option<Var> },
    Unary { x: Var, f: Unary<F> },
    Binary { a: Var, b: Var, f: Binary },
    LayerNorm { x: Var, gain: Var, offset: Var, xhat: Vec<F>, rstd: Vec<F> },
    TopK { x: Var, keep: Vec<bool> },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Concat { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumCols { x: Var },
    ResetRows { x: Var, keep: Vec<bool> },
    GaussianLogProb { mean: Var, log_std: Var, action: Vec<F> },
}

enum Value<F> {
    Owned(Tensor<F>),
    Shared(Arc<Tensor<F>>),
}

impl<F> std::ops::Deref for Value<F> {
    type Target = Tensor<F>;
    fn deref(&self) -> &Tensor<F> {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Handles for every tensor of a [`ParamStore`] placed on one tape.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl std::ops::Index<ParamId> for Bindings {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    leaves: HashMap<Var, Tensor<F>>,
    params: HashMap<ParamId, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a leaf created with [`Tape::leaf`]; `None` if the loss
    /// does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn take_param(&mut self, id: ParamId) -> Option<Tensor<F>> {
        self.params.remove(&id)
    }

    pub fn scale_params(&mut self, s: F) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rc(t: &Tensor<impl Real>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the tape can record a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Shared(store.shared(id)), op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Places every parameter of `store` on the tape once.
    pub fn bind(&mut self, store: &ParamStore<F>) -> Bindings {
        Bindings { vars: store.ids().map(|id| self.param(store, id)).collect() }
    }

    // ---- dense / elementwise -------------------------------------------

    /// `x·Wᵀ + b` for `x: [B, n]`, `W: [m, n]`, `b: [m]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bsz, n) = rc(self.value(x));
        let wt = self.value(w);
        if wt.shape().len() != 2 || wt.cols() != n {
            return Err(Error::shape(
                "dense",
                format!("input [{bsz}, {n}] vs weights {:?}", wt.shape()),
            ));
        }
        let m = wt.rows();
        let mut out = vec![F::zero(); bsz * m];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.numel() != m {
                return Err(Error::shape("dense", format!("bias {:?} for {m} outputs", bt.shape())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bt.data());
            }
        }
        let beta = if b.is_some() { F::one() } else { F::zero() };
        F::gemm(
            bsz,
            n,
            m,
            F::one(),
            self.value(x).data(),
            n as isize,
            1,
            wt.data(),
            1,
            n as isize,
            beta,
            &mut out,
            m as isize,
            1,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::matrix(bsz, m, out)?, Op::Dense { x, w, b }, ng))
    }

    fn unary(&mut self, x: Var, f: Unary<F>) -> Var {
        let one = F::one();
        let y = self.value(x).map(|v| match f {
            Unary::Tanh => v.tanh(),
            Unary::Relu => v.max(F::zero()),
            Unary::Sigmoid => one / (one + (-v).exp()),
            Unary::Exp => v.exp(),
            Unary::Abs => v.abs(),
            Unary::Square => v * v,
            Unary::Affine { scale, shift } => v * scale + shift,
            Unary::Clamp { lo, hi } => v.max(lo).min(hi),
        });
        let ng = self.ng(x);
        self.push(y, Op::Unary { x, f }, ng)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Tanh => self.unary(x, Unary::Tanh),
            Activation::Relu => self.unary(x, Unary::Relu),
            Activation::Sigmoid => self.unary(x, Unary::Sigmoid),
        }
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Unary::Affine { scale: F::lit(scale), shift: F::lit(shift) })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::Clamp { lo: F::lit(lo), hi: F::lit(hi) })
    }

    /// Elementwise binary op. `b` may broadcast along rows (`[1, n]`),
    /// columns (`[B, 1]`), or both (scalar).
    fn binary(&mut self, a: Var, b: Var, f: Binary) -> Result<Var> {
        let (ar, ac) = rc(self.value(a));
        let (br, bc) = rc(self.value(b));
        let ok = (br == ar || br == 1) && (bc == ac || bc == 1);
        if !ok || (f == Binary::Min && (br, bc) != (ar, ac)) {
            return Err(Error::shape(
                "elementwise",
                format!("[{ar}, {ac}] vs [{br}, {bc}]"),
            ));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            let rb = if br == 1 { 0 } else { r * bc };
            for (c, &x) in av.row(r).iter().enumerate() {
                let y = bv[rb + if bc == 1 { 0 } else { c }];
                out.push(match f {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Min => x.min(y),
                });
            }
        }
        let shape = av.shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Binary { a, b, f }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// Elementwise minimum of equal-shape operands; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Min)
    }

    // ---- normalization / selection ---------------------------------------

    pub const LN_EPS: f64 = 1e-5;

    /// Per-row `(x - mean) / sqrt(var + 1e-5) * gain + offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let (r, n) = rc(self.value(x));
        if n < 2 {
            return Err(Error::Argument { op: "layer_norm", detail: format!("needs n >= 2, got {n}") });
        }
        if self.value(gain).numel() != n || self.value(offset).numel() != n {
            return Err(Error::shape("layer_norm", format!("gain/offset must have {n} entries")));
        }
        let eps = F::lit(Self::LN_EPS);
        let nf = F::lit(n as f64);
        let xv = self.value(x);
        let g = self.value(gain).data();
        let o = self.value(offset).data();
        let mut xhat = Vec::with_capacity(r * n);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * n);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let s = F::one() / (var + eps).sqrt();
            rstd.push(s);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * s;
                xhat.push(h);
                out.push(h * g[j] + o[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x) || self.ng(gain) || self.ng(offset);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, offset, xhat, rstd }, ng))
    }

    /// Keeps the `k` largest entries of each row and zeros the rest.
    /// Ties are broken toward the lowest index.
    pub fn top_k(&mut self, x: Var, k: usize) -> Result<Var> {
        let (r, n) = rc(self.value(x));
        if k == 0 || k > n {
            return Err(Error::Argument { op: "top_k", detail: format!("k = {k} outside [1, {n}]") });
        }
        let xv = self.value(x);
        let mut keep = vec![false; r * n];
        let mut out = vec![F::zero(); r * n];
        let mut idx: Vec<usize> = Vec::with_capacity(n);
        for i in 0..r {
            let row = xv.row(i);
            idx.clear();
            idx.extend(0..n);
            if k < n {
                // Total order: larger value first, then lower index.
                let cmp = |a: &usize, b: &usize| {
                    row[*b]
                        .partial_cmp(&row[*a])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(b))
                };
                idx.select_nth_unstable_by(k - 1, cmp);
            }
            for &j in &idx[..k] {
                keep[i * n + j] = true;
                out[i * n + j] = row[j];
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::TopK { x, keep }, ng))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, _) = rc(xv);
        let mut out = Vec::with_capacity(xv.numel());
        for i in 0..r {
            let row = xv.row(i);
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            out.extend(row.iter().map(|&v| (v - mx).exp()));
            let z: F = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|v| *v = *v / z);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Softmax { x }, ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, _) = rc(xv);
        let mut out = Vec::with_capacity(xv.numel());
        for i in 0..r {
            let row = xv.row(i);
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::LogSoftmax { x }, ng)
    }

    // ---- structural --------------------------------------------------------

    /// Concatenates along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::Concat { parts: parts.to_vec() }, ng))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, n) = rc(self.value(x));
        if start + len > n || len == 0 {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {n}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<F>() / F::lit(t.numel() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::MeanAll { x }, ng)
    }

    /// Per-row sum, `[B, n] -> [B, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, _) = rc(xv);
        let out = (0..r).map(|i| xv.row(i).iter().copied().sum()).collect();
        let t = Tensor::matrix(r, 1, out).expect("shape");
        let ng = self.ng(x);
        self.push(t, Op::SumCols { x }, ng)
    }

    /// Rows with `keep[r] == false` are replaced by the constant `fill` row.
    pub fn reset_rows(&mut self, x: Var, keep: &[bool], fill: &[F]) -> Result<Var> {
        let (r, n) = rc(self.value(x));
        if keep.len() != r || fill.len() != n {
            return Err(Error::shape("reset_rows", format!("mask {} / fill {} vs [{r}, {n}]", keep.len(), fill.len())));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * n);
        for (i, &k) in keep.iter().enumerate() {
            out.extend_from_slice(if k { xv.row(i) } else { fill });
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::ResetRows { x, keep: keep.to_vec() }, ng))
    }

    /// Per-row log density of `action` under `N(mean, diag(exp(log_std)^2))`.
    /// `log_std` is `[1, d]` (shared) or `[B, d]`. Output `[B, 1]`.
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, action: &[F]) -> Result<Var> {
        let (r, d) = rc(self.value(mean));
        let (lr, lc) = rc(self.value(log_std));
        if lc != d || (lr != 1 && lr != r) || action.len() != r * d {
            return Err(Error::shape("gaussian_log_prob", format!("mean [{r}, {d}], log_std [{lr}, {lc}], action {}", action.len())));
        }
        let half_log_2pi = F::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let two = F::lit(2.0);
        let mu = self.value(mean).data();
        let ls = self.value(log_std).data();
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let mut s = F::zero();
            for j in 0..d {
                let l = ls[if lr == 1 { j } else { i * d + j }];
                let z = (action[i * d + j] - mu[i * d + j]) / l.exp();
                s = s - z * z / two - l - half_log_2pi;
            }
            out.push(s);
        }
        let ng = self.ng(mean) || self.ng(log_std);
        Ok(self.push(
            Tensor::matrix(r, 1, out)?,
            Op::GaussianLogProb { mean, log_std, action: action.to_vec() },
            ng,
        ))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Accumulates `d loss / d leaf` for every differentiable leaf and parameter.
    ///
    /// The loss must be a single-element tensor. A tape can be swept once;
    /// call [`Tape::reset`] before recording the next forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(Error::Usage("backward already ran on this tape; reset it first".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Argument {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Gradients { leaves: HashMap::new(), params: HashMap::new() };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let shape = node.value.shape().to_vec();
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), Tensor::new(shape, g)?);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        out.params.insert(*id, Tensor::new(shape, g)?);
                    }
                },
                op => self.backprop(op, &node.value, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backprop(&self, op: &Op<F>, y: &Tensor<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| -> &Tensor<F> { &nodes[v.0].value };
        let one = F::one();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Dense { x, w, b } => {
                let (bsz, n) = rc(val(*x));
                let m = val(*w).rows();
                if want(*x) {
                    let dx = acc(grads, *x, bsz * n);
                    F::gemm(bsz, m, n, one, g, m as isize, 1, val(*w).data(), n as isize, 1, one, dx, n as isize, 1);
                }
                if want(*w) {
                    let dw = acc(grads, *w, m * n);
                    F::gemm(m, bsz, n, one, g, 1, m as isize, val(*x).data(), n as isize, 1, one, dw, n as isize, 1);
                }
                if let Some(b) = b.filter(|&b| want(b)) {
                    let db = acc(grads, b, m);
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                }
            }
            Op::Unary { x, f } => {
                if !want(*x) {
                    return;
                }
                let xv = val(*x).data();
                let yv = y.data();
                let dx = acc(grads, *x, xv.len());
                for k in 0..xv.len() {
                    let local = match *f {
                        Unary::Tanh => one - yv[k] * yv[k],
                        Unary::Relu => {
                            if xv[k] > F::zero() {
                                one
                            } else {
                                F::zero()
                            }
                        }
                        Unary::Sigmoid => yv[k] * (one - yv[k]),
                        Unary::Exp => yv[k],
                        Unary::Abs => xv[k].signum() * if xv[k] == F::zero() { F::zero() } else { one },
                        Unary::Square => F::lit(2.0) * xv[k],
                        Unary::Affine { scale, .. } => scale,
                        Unary::Clamp { lo, hi } => {
                            if xv[k] >= lo && xv[k] <= hi {
                                one
                            } else {
                                F::zero()
                            }
                        }
                    };
                    dx[k] = dx[k] + g[k] * local;
                }
            }
            Op::Binary { a, b, f } => {
                let (ar, ac) = rc(val(*a));
                let (br, bc) = rc(val(*b));
                let av = val(*a).data();
                let bv = val(*b).data();
                let bidx = |r: usize, c: usize| (if br == 1 { 0 } else { r * bc }) + if bc == 1 { 0 } else { c };
                if want(*a) {
                    let da = acc(grads, *a, ar * ac);
                    for r in 0..ar {
                        for c in 0..ac {
                            let k = r * ac + c;
                            let local = match f {
                                Binary::Add | Binary::Sub => one,
                                Binary::Mul => bv[bidx(r, c)],
                                Binary::Min => {
                                    if av[k] <= bv[k] {
                                        one
                                    } else {
                                        F::zero()
                                    }
                                }
                            };
                            da[k] = da[k] + g[k] * local;
                        }
                    }
                }
                if want(*b) {
                    let db = acc(grads, *b, br * bc);
                    for r in 0..ar {
                        for c in 0..ac {
                            let k = r * ac + c;
                            let local = match f {
                                Binary::Add => one,
                                Binary::Sub => -one,
                                Binary::Mul => av[k],
                                Binary::Min => {
                                    if av[k] <= bv[k] {
                                        F::zero()
                                    } else {
                                        one
                                    }
                                }
                            };
                            let j = bidx(r, c);
                            db[j] = db[j] + g[k] * local;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, offset, xhat, rstd } => {
                let (r, n) = rc(val(*x));
                let gv = val(*gain).data();
                let nf = F::lit(n as f64);
                if want(*gain) {
                    let dg = acc(grads, *gain, n);
                    for i in 0..r * n {
                        dg[i % n] = dg[i % n] + g[i] * xhat[i];
                    }
                }
                if want(*offset) {
                    let dofs = acc(grads, *offset, n);
                    for i in 0..r * n {
                        dofs[i % n] = dofs[i % n] + g[i];
                    }
                }
                if want(*x) {
                    let dx = acc(grads, *x, r * n);
                    for i in 0..r {
                        let gs = &g[i * n..(i + 1) * n];
                        let hs = &xhat[i * n..(i + 1) * n];
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..n {
                            let dh = gs[j] * gv[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * hs[j];
                        }
                        m1 = m1 / nf;
                        m2 = m2 / nf;
                        for j in 0..n {
                            let dh = gs[j] * gv[j];
                            let k = i * n + j;
                            dx[k] = dx[k] + rstd[i] * (dh - m1 - hs[j] * m2);
                        }
                    }
                }
            }
            Op::TopK { x, keep } => {
                if want(*x) {
                    let dx = acc(grads, *x, keep.len());
                    for (k, &kp) in keep.iter().enumerate() {
                        if kp {
                            dx[k] = dx[k] + g[k];
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if want(*x) {
                    let (r, n) = rc(y);
                    let yv = y.data();
                    let dx = acc(grads, *x, r * n);
                    for i in 0..r {
                        let s = (0..n).map(|j| g[i * n + j] * yv[i * n + j]).sum::<F>();
                        for j in 0..n {
                            let k = i * n + j;
                            dx[k] = dx[k] + yv[k] * (g[k] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax { x } => {
                if want(*x) {
                    let (r, n) = rc(y);
                    let yv = y.data();
                    let dx = acc(grads, *x, r * n);
                    for i in 0..r {
                        let s = g[i * n..(i + 1) * n].iter().copied().sum::<F>();
                        for j in 0..n {
                            let k = i * n + j;
                            dx[k] = dx[k] + g[k] - yv[k].exp() * s;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let (r, total) = rc(y);
                let mut off = 0;
                for &p in parts {
                    let n = val(p).cols();
                    if want(p) {
                        let dp = acc(grads, p, r * n);
                        for i in 0..r {
                            for j in 0..n {
                                dp[i * n + j] = dp[i * n + j] + g[i * total + off + j];
                            }
                        }
                    }
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                if want(*x) {
                    let (r, n) = rc(val(*x));
                    let len = y.cols();
                    let dx = acc(grads, *x, r * n);
                    for i in 0..r {
                        for j in 0..len {
                            let k = i * n + start + j;
                            dx[k] = dx[k] + g[i * len + j];
                        }
                    }
                }
            }
            Op::SumAll { x } | Op::MeanAll { x } => {
                if want(*x) {
                    let n = val(*x).numel();
                    let s = if matches!(op, Op::MeanAll { .. }) { g[0] / F::lit(n as f64) } else { g[0] };
                    acc(grads, *x, n).iter_mut().for_each(|d| *d = *d + s);
                }
            }
            Op::SumCols { x } => {
                if want(*x) {
                    let (r, n) = rc(val(*x));
                    let dx = acc(grads, *x, r * n);
                    for k in 0..r * n {
                        dx[k] = dx[k] + g[k / n];
                    }
                }
            }
            Op::ResetRows { x, keep } => {
                if want(*x) {
                    let (r, n) = rc(val(*x));
                    let dx = acc(grads, *x, r * n);
                    for i in (0..r).filter(|&i| keep[i]) {
                        for k in i * n..(i + 1) * n {
                            dx[k] = dx[k] + g[k];
                        }
                    }
                }
            }
            Op::GaussianLogProb { mean, log_std, action } => {
                let (r, d) = rc(val(*mean));
                let lr = val(*log_std).rows();
                let mu = val(*mean).data();
                let ls = val(*log_std).data();
                let mut dmu = vec![F::zero(); r * d];
                let mut dls = vec![F::zero(); lr * d];
                for i in 0..r {
                    for j in 0..d {
                        let li = if lr == 1 { j } else { i * d + j };
                        let k = i * d + j;
                        let inv_var = (-(ls[li] + ls[li])).exp();
                        let diff = action[k] - mu[k];
                        dmu[k] = g[i] * diff * inv_var;
                        dls[li] = dls[li] + g[i] * (diff * diff * inv_var - one);
                    }
                }
                if want(*mean) {
                    let dm = acc(grads, *mean, r * d);
                    dm.iter_mut().zip(&dmu).for_each(|(a, &b)| *a = *a + b);
                }
                if want(*log_std) {
                    let dl = acc(grads, *log_std, lr * d);
                    dl.iter_mut().zip(&dls).for_each(|(a, &b)| *a = *a + b);
                }
            }
        }
    }
}

fn acc<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut Vec<F> {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}
