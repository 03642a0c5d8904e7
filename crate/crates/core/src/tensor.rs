//! A small reverse-mode automatic-differentiation engine.
//!
//! Every forward pass records onto a [`Tape`]: values live in the tape's nodes and
//! [`Var`] handles index them. Parents are always recorded before their dependents, so
//! a single reverse sweep over the node list is a valid backward order. Tensors are
//! rank 0, 1 or 2; the only broadcast is adding a `[d]` bias to every row of `[n, d]`.
//!
//! Trainable values live in a [`ParamStore`] and are copied onto a fresh tape for each
//! forward pass; after [`Tape::backward`] the gradients are pulled back into the store.

use std::collections::HashMap;
use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::Rng as _;

use crate::seed;
use crate::storage::ArchiveEntry;

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + Sum + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    DoubleBackward,
    #[error("{value} values cannot fill shape {shape:?}")]
    BadLeaf { shape: Vec<usize>, value: usize },
    #[error("learning rate {0} must be finite and non-negative")]
    BadLearningRate(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Relu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    grad: Option<Vec<F>>,
    needs_grad: bool,
    op: Op<F>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `(rows, last-axis length)` of a tensor viewed as a matrix.
fn as_rows(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        _ => {
            let last = *shape.last().unwrap();
            (numel(shape) / last.max(1), last)
        }
    }
}

fn matmul_into<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aip * *bv;
            }
        }
    }
    c
}

fn transpose_vals<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut t = vec![F::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// A per-forward-pass record of operations.
#[derive(Debug)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; handles past it become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Vec<F>, shape: &[usize]) -> Result<Var> {
        self.leaf(value, shape, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Vec<F>, shape: &[usize]) -> Result<Var> {
        self.leaf(value, shape, false)
    }

    fn leaf(&mut self, value: Vec<F>, shape: &[usize], needs_grad: bool) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(TensorError::BadLeaf {
                shape: shape.to_vec(),
                value: value.len(),
            });
        }
        Ok(self.push(shape.to_vec(), value, Op::Leaf, needs_grad))
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Gradient of the last backward pass, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.node(v).grad.as_deref()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.node(v).value[0]
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_into(self.value(a), self.value(b), m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(self.mismatch("transpose", a, a));
        }
        let (r, c) = (s[0], s[1]);
        let value = transpose_vals(self.value(a), r, c);
        let needs = self.needs(&[a]);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), needs))
    }

    /// Elementwise sum, or a `[d]` bias added to every row of `[n, d]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let needs = self.needs(&[a, b]);
        if sa == sb {
            let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
            return Ok(self.push(sa, value, Op::Add(a, b), needs));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let d = sb[0];
            let bias = self.value(b);
            let value = self
                .value(a)
                .iter()
                .enumerate()
                .map(|(i, x)| *x + bias[i % d])
                .collect();
            return Ok(self.push(sa, value, Op::AddBias(a, b), needs));
        }
        Err(self.mismatch("add", a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        let value = self.value(a).iter().map(|x| *x * s).collect();
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Scale(a, s), needs))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, d) = as_rows(self.shape(a));
        let x = self.value(a);
        let mut value = vec![F::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let out = &mut value[r * d..(r + 1) * d];
            let mut sum = F::zero();
            for (o, v) in out.iter_mut().zip(row) {
                *o = (*v - max).exp();
                sum = sum + *o;
            }
            for o in out.iter_mut() {
                *o = *o / sum;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Softmax(a), needs))
    }

    /// Normalizes each row of `x` to zero mean and unit variance, then applies
    /// `gain` and `bias` (both `[d]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = as_rows(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let eps = F::from_f64(LAYER_NORM_EPS);
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut value = vec![F::zero(); xv.len()];
        let dn = F::from_f64(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / dn;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                value[r * d + c] = h * g[c] + b[c];
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            self.shape(x).to_vec(),
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x.max(F::zero())).collect();
        let needs = self.needs(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Relu(a), needs))
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(self.mismatch("embedding", table, table));
        }
        let (v, d) = (s[0], s[1]);
        let t = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    len: v,
                });
            }
            value.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let needs = self.needs(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Joins 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::BadLeaf {
            shape: vec![],
            value: 0,
        })?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 || axis > 1 {
            return Err(self.mismatch("concat", first, first));
        }
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1 - axis] != s0[1 - axis] {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let total: usize = parts.iter().map(|p| self.shape(*p)[axis]).sum();
        let (rows, cols) = if axis == 0 { (total, s0[1]) } else { (s0[0], total) };
        let mut value = vec![F::zero(); rows * cols];
        let mut offset = 0;
        for &p in parts {
            let s = self.shape(p).to_vec();
            let v = self.value(p);
            for r in 0..s[0] {
                for c in 0..s[1] {
                    let (rr, cc) = if axis == 0 { (r + offset, c) } else { (r, c + offset) };
                    value[rr * cols + cc] = v[r * s[1] + c];
                }
            }
            offset += s[axis];
        }
        let needs = self.needs(parts);
        Ok(self.push(
            vec![rows, cols],
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// `x[start..end]` along `axis` of a 2-D tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || axis > 1 {
            return Err(self.mismatch("slice", x, x));
        }
        if start > end || end > s[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: end,
                len: s[axis],
            });
        }
        let (rows, cols) = if axis == 0 { (end - start, s[1]) } else { (s[0], end - start) };
        let v = self.value(x);
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (sr, sc) = if axis == 0 { (r + start, c) } else { (r, c + start) };
                value.push(v[sr * s[1] + sc]);
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(vec![rows, cols], value, Op::Slice { x, axis, start }, needs))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = F::from_f64(v.len().max(1) as f64);
        let value = vec![v.iter().copied().sum::<F>() / n];
        let needs = self.needs(&[a]);
        Ok(self.push(vec![], value, Op::Mean(a), needs))
    }

    /// Mean squared difference, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(self.mismatch("mse", pred, target));
        }
        let (p, t) = (self.value(pred), self.value(target));
        let n = F::from_f64(p.len().max(1) as f64);
        let value = vec![p.iter().zip(t).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<F>() / n];
        let needs = self.needs(&[pred, target]);
        Ok(self.push(vec![], value, Op::Mse(pred, target), needs))
    }

    /// Mean over rows of `−log softmax(logits)[target]`, as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: s,
                right: vec![targets.len()],
            });
        }
        let (rows, v) = (s[0], s[1]);
        let x = self.value(logits);
        let mut probs = vec![F::zero(); x.len()];
        let mut loss = F::zero();
        for r in 0..rows {
            let t = targets[r];
            if t >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: v,
                });
            }
            let row = &x[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|z| (*z - max).exp()).sum();
            let lse = max + sum.ln();
            loss = loss + lse - row[t];
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        let value = vec![loss / F::from_f64(rows.max(1) as f64)];
        let needs = self.needs(&[logits]);
        Ok(self.push(
            vec![],
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<F>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a = *a + b;
                }
            }
            None => node.grad = Some(contribution),
        }
    }

    /// Populates the gradient of `loss` with respect to every ancestor that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, op: &Op<F>, g: &[F]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.node(*a).needs_grad {
                    let bt = transpose_vals(self.value(*b), k, n);
                    let da = matmul_into(g, &bt, m, n, k);
                    self.accumulate(*a, da);
                }
                if self.node(*b).needs_grad {
                    let at = transpose_vals(self.value(*a), m, k);
                    let db = matmul_into(&at, g, k, m, n);
                    self.accumulate(*b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let da = transpose_vals(g, c, r);
                self.accumulate(*a, da);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.to_vec());
            }
            Op::AddBias(a, b) => {
                self.accumulate(*a, g.to_vec());
                let d = self.shape(*b)[0];
                let mut db = vec![F::zero(); d];
                for (k, gv) in g.iter().enumerate() {
                    db[k % d] = db[k % d] + *gv;
                }
                self.accumulate(*b, db);
            }
            Op::Mul(a, b) => {
                if self.node(*a).needs_grad {
                    let da = g.iter().zip(self.value(*b)).map(|(x, y)| *x * *y).collect();
                    self.accumulate(*a, da);
                }
                if self.node(*b).needs_grad {
                    let db = g.iter().zip(self.value(*a)).map(|(x, y)| *x * *y).collect();
                    self.accumulate(*b, db);
                }
            }
            Op::Scale(a, s) => {
                let da = g.iter().map(|x| *x * *s).collect();
                self.accumulate(*a, da);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let (rows, d) = as_rows(&self.nodes[i].shape);
                let mut da = vec![F::zero(); y.len()];
                for r in 0..rows {
                    let ys = &y[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let dot: F = ys.iter().zip(gs).map(|(p, q)| *p * *q).sum();
                    for c in 0..d {
                        da[r * d + c] = ys[c] * (gs[c] - dot);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, d) = as_rows(self.shape(*x));
                let gv = self.value(*gain).to_vec();
                let mut dgain = vec![F::zero(); d];
                let mut dbias = vec![F::zero(); d];
                let mut dx = vec![F::zero(); rows * d];
                let dn = F::from_f64(d as f64);
                for r in 0..rows {
                    let gs = &g[r * d..(r + 1) * d];
                    let hs = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = F::zero();
                    let mut sum_dh_h = F::zero();
                    for c in 0..d {
                        dgain[c] = dgain[c] + gs[c] * hs[c];
                        dbias[c] = dbias[c] + gs[c];
                        let dh = gs[c] * gv[c];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hs[c];
                    }
                    for c in 0..d {
                        let dh = gs[c] * gv[c];
                        dx[r * d + c] = inv_std[r] * (dh - sum_dh / dn - hs[c] * sum_dh_h / dn);
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*gain, dgain);
                self.accumulate(*bias, dbias);
            }
            Op::Relu(a) => {
                let da = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(gv, x)| if *x > F::zero() { *gv } else { F::zero() })
                    .collect();
                self.accumulate(*a, da);
            }
            Op::Embedding { table, ids } => {
                if self.node(*table).needs_grad {
                    let d = self.shape(*table)[1];
                    let mut dt = vec![F::zero(); numel(self.shape(*table))];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] = dt[id * d + c] + g[r * d + c];
                        }
                    }
                    self.accumulate(*table, dt);
                }
            }
            Op::Concat { parts, axis } => {
                let cols = self.nodes[i].shape[1];
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p).to_vec();
                    let mut dp = vec![F::zero(); s[0] * s[1]];
                    for r in 0..s[0] {
                        for c in 0..s[1] {
                            let (rr, cc) = if *axis == 0 { (r + offset, c) } else { (r, c + offset) };
                            dp[r * s[1] + c] = g[rr * cols + cc];
                        }
                    }
                    offset += s[*axis];
                    self.accumulate(p, dp);
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let out = self.nodes[i].shape.clone();
                let mut dx = vec![F::zero(); s[0] * s[1]];
                for r in 0..out[0] {
                    for c in 0..out[1] {
                        let (sr, sc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                        dx[sr * s[1] + sc] = g[r * out[1] + c];
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Mean(a) => {
                let n = numel(self.shape(*a));
                let v = g[0] / F::from_f64(n.max(1) as f64);
                self.accumulate(*a, vec![v; n]);
            }
            Op::Mse(p, t) => {
                let n = F::from_f64(numel(self.shape(*p)).max(1) as f64);
                let two = F::from_f64(2.0);
                let diff: Vec<F> = self
                    .value(*p)
                    .iter()
                    .zip(self.value(*t))
                    .map(|(a, b)| two * (*a - *b) * g[0] / n)
                    .collect();
                if self.node(*t).needs_grad {
                    self.accumulate(*t, diff.iter().map(|v| -*v).collect());
                }
                self.accumulate(*p, diff);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.shape(*logits)[1];
                let rows = targets.len();
                let scale = g[0] / F::from_f64(rows.max(1) as f64);
                let mut dl: Vec<F> = probs.iter().map(|p| *p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * v + t] = dl[r * v + t] - scale;
                }
                self.accumulate(*logits, dl);
            }
        }
    }
}

/// One named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

/// Named parameters in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
}

/// Index of a parameter inside its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Tape handles of every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<F>) -> ParamId {
        assert_eq!(numel(shape), value.len(), "parameter `{name}`");
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let id = ParamId(self.params.len());
        self.index.insert(name.to_string(), id.0);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![F::zero(); value.len()],
            value,
        });
        id
    }

    /// Adds a parameter drawn from uniform(−s, s), `s = sqrt(6 / (fan_in + fan_out))`,
    /// with a generator keyed by the parameter name.
    pub fn add_xavier(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> ParamId {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = seed::rng_for(seed, name);
        let value = (0..numel(shape))
            .map(|_| F::from_f64(rng.random_range(-s..s)))
            .collect();
        self.add(name, shape, value)
    }

    pub fn add_filled(&mut self, name: &str, shape: &[usize], fill: f64) -> ParamId {
        self.add(name, shape, vec![F::from_f64(fill); numel(shape)])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter onto `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| tape.variable(p.value.clone(), &p.shape).expect("parameter shape"))
                .collect(),
        )
    }

    /// Copies every parameter onto `tape` as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| tape.constant(p.value.clone(), &p.shape).expect("parameter shape"))
                .collect(),
        )
    }

    /// Adds the tape's gradients for `bound` into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<F>, bound: &Bound) {
        for (p, v) in self.params.iter_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(*v) {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a = *a + *b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Order-sensitive FNV-1a digest of every parameter's bytes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in &self.params {
            p.name.bytes().for_each(&mut eat);
            for v in &p.value {
                v.as_f64().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    /// One archive entry per parameter; 1-D and scalar shapes are stored as one row.
    pub fn to_archive_entries(&self) -> Vec<ArchiveEntry> {
        self.params
            .iter()
            .map(|p| {
                let width = *p.shape.last().unwrap_or(&1);
                let values: Vec<f32> = p.value.iter().map(|v| v.as_f64() as f32).collect();
                ArchiveEntry {
                    key: p.name.clone(),
                    width,
                    rows: values.chunks(width.max(1)).map(<[f32]>::to_vec).collect(),
                }
            })
            .collect()
    }

    /// Overwrites values from archive entries; every parameter must be present with its shape.
    pub fn load_archive_entries(&mut self, entries: &[ArchiveEntry]) -> Result<()> {
        let by_key: HashMap<&str, &ArchiveEntry> = entries.iter().map(|e| (e.key.as_str(), e)).collect();
        for p in &mut self.params {
            let e = by_key
                .get(p.name.as_str())
                .ok_or_else(|| TensorError::UnknownParam(p.name.clone()))?;
            let values: Vec<f32> = e.rows.iter().flatten().copied().collect();
            if values.len() != p.value.len() || e.width != *p.shape.last().unwrap_or(&1) {
                return Err(TensorError::ShapeMismatch {
                    op: "load",
                    left: p.shape.clone(),
                    right: vec![e.rows.len(), e.width],
                });
            }
            p.value = values.into_iter().map(|v| F::from_f64(f64::from(v))).collect();
        }
        Ok(())
    }
}

/// `p ← p − lr · grad` for every parameter, then clears the gradients.
pub fn sgd_step<F: Scalar>(store: &mut ParamStore<F>, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(TensorError::BadLearningRate(lr));
    }
    let lr = F::from_f64(lr);
    for p in &mut store.params {
        for (v, g) in p.value.iter_mut().zip(&p.grad) {
            *v = *v - lr * *g;
        }
    }
    store.zero_grad();
    Ok(())
}

/// Adam moment estimates for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Scalar>(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = store.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update, then clears the gradients.
    pub fn step<F: Scalar>(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(TensorError::BadLearningRate(lr));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in store.params.iter_mut().enumerate() {
            for (i, (v, g)) in p.value.iter_mut().zip(&p.grad).enumerate() {
                let g = g.as_f64();
                let m = &mut self.m[k][i];
                let s = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *s = self.beta2 * *s + (1.0 - self.beta2) * g * g;
                let update = lr * (*m / c1) / ((*s / c2).sqrt() + self.eps);
                *v = F::from_f64(v.as_f64() - update);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
