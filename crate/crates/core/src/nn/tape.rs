//! Reverse-mode differentiation over matrix primitives.
//!
//! Forward calls evaluate eagerly and append a node; [`GradientTape::backward`]
//! walks the nodes once, in reverse, accumulating gradients into slots aligned
//! with the model's [`ParamSet`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::ops::{self, softmax_in_place};
use crate::nn::params::{Gradients, ParamId, ParamSet};
use crate::sparse::CsrMatrix;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Matrix, Scalar};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Constant,
    Param(ParamId),
    MatMulNT(Var, Var),
    MatMulNN(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Mask(Var, Matrix<T>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Reshape(Var),
    MeanPool {
        x: Var,
        group: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
    },
    SpMM {
        adj: Arc<CsrMatrix<T>>,
        x: Var,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Matrix<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix<T>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
    /// Depends on at least one parameter; untracked nodes receive no gradient.
    tracked: bool,
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMulNT(a, b) | Op::MatMulNN(a, b) | Op::AddRow(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Relu(x) | Op::Mask(x, _) | Op::Reshape(x) => vec![*x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::MeanPool { x, .. } | Op::SpMM { x, .. } | Op::SelectRows { x, .. } => vec![*x],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Mse { pred, .. } => vec![*pred],
            Op::SoftmaxCrossEntropy { logits, .. } | Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }
}

pub struct GradientTape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradientTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradientTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Matrix<T> {
        std::mem::take(&mut self.nodes[v.0].value)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        let tracked = matches!(op, Op::Param(_)) || op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    /// `a · bᵀ`; with `b` a weight stored `out×in` this is a dense layer.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNT(a, b)))
    }

    pub fn matmul_nn(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_nn(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNN(a, b)))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape("row broadcast", (1, xv.cols()), rv.shape()));
        }
        let mut out = xv.clone();
        let r = rv.as_slice();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("elementwise add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = ops::relu(self.value(x));
        self.push(v, Op::Relu(x))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mask(&mut self, x: Var, mask: Matrix<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(Error::shape("mask", xv.shape(), mask.shape()));
        }
        let mut out = xv.clone();
        for (o, &m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *o *= m;
        }
        Ok(self.push(out, Op::Mask(x, mask)))
    }

    /// Batch normalization. With `running = None` the batch statistics are
    /// used (and returned so the caller can update running averages);
    /// otherwise the given `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, c) || b.shape() != (1, c) {
            return Err(Error::shape("batch-norm scale", (1, c), g.shape()));
        }
        let (mean, var, batch_stats) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::width("batch-norm running stats", c, m.len()));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                if n < 2 {
                    return Err(Error::Input(format!(
                        "batch normalization in train mode needs at least 2 rows, got {n}"
                    )));
                }
                let mean = xv.column_means();
                let mut var = vec![T::zero(); c];
                for row in xv.iter_rows() {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let nn = T::from_usize(n);
                var.iter_mut().for_each(|s| *s = *s / nn);
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for i in 0..n {
            for (j, h) in xhat.row_mut(i).iter_mut().enumerate() {
                *h = (*h - mean[j]) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        let (gs, bs) = (g.as_slice(), b.as_slice());
        for i in 0..n {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = gs[j] * *o + bs[j];
            }
        }
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        Ok((v, mean, var))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x).clone().reshape(rows, cols)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Averages consecutive groups of `group` rows: `(n·group)×c → n×c`.
    pub fn mean_pool(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        if group == 0 || !xv.rows().is_multiple_of(group) {
            return Err(Error::Input(format!(
                "cannot pool {} rows in groups of {group}",
                xv.rows()
            )));
        }
        let n = xv.rows() / group;
        let mut out = Matrix::zeros(n, xv.cols());
        let inv = T::one() / T::from_usize(group);
        for s in 0..n {
            let orow = out.row_mut(s);
            for t in 0..group {
                for (o, &v) in orow.iter_mut().zip(xv.row(s * group + t)) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(out, Op::MeanPool { x, group }))
    }

    /// Multi-head scaled dot-product attention over `(n·seq_len)×D` inputs.
    /// Each consecutive block of `seq_len` rows is one sample; heads split the
    /// columns into `heads` slices of width `D/heads` and outputs are concatenated.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize) -> Result<Var> {
        let out = {
            let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
            check_attention_shapes(qv, kv, vv, heads, seq_len)?;
            let mut out = Matrix::zeros(qv.rows(), qv.cols());
            for_each_head(qv.rows() / seq_len, heads, |s, h| {
                let (qh, kh, vh) = (
                    head_slice(qv, s, h, seq_len, heads),
                    head_slice(kv, s, h, seq_len, heads),
                    head_slice(vv, s, h, seq_len, heads),
                );
                let (oh, _) = ops::attention_head(&qh, &kh, &vh, head_scale::<T>(qv.cols(), heads))?;
                scatter_head(&mut out, &oh, s, h, seq_len, heads, false);
                Ok(())
            })?;
            out
        };
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
            },
        ))
    }

    pub fn spmm(&mut self, adj: Arc<CsrMatrix<T>>, x: Var) -> Result<Var> {
        let v = adj.spmm(self.value(x))?;
        Ok(self.push(v, Op::SpMM { adj, x }))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::Input(format!("row {r} outside {} rows", xv.rows())));
        }
        let v = xv.select_rows(&rows);
        Ok(self.push(v, Op::SelectRows { x, rows }))
    }

    pub fn mse(&mut self, pred: Var, target: Matrix<T>) -> Result<Var> {
        let l = ops::mse(self.value(pred), &target)?;
        Ok(self.push(Matrix::filled(1, 1, l), Op::Mse { pred, target }))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let (l, probs) = ops::cross_entropy(self.value(logits), &labels)?;
        Ok(self.push(
            Matrix::filled(1, 1, l),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
        ))
    }

    pub fn bce_with_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let targets = ops::binary_targets(labels)?;
        let l = ops::bce_with_logits(self.value(logits), &targets)?;
        Ok(self.push(Matrix::filled(1, 1, l), Op::BceWithLogits { logits, targets }))
    }

    /// Reverse pass from a scalar node. Each recorded node is visited exactly
    /// once, newest first.
    pub fn backward(&self, loss: Var, params: &ParamSet<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called without a forward pass recorded on this tape".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward seed", (1, 1), self.value(loss).shape()));
        }
        let mut grads = Gradients::zeros_like(params);
        let mut adj: Vec<Option<Matrix<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if id.0 >= grads.len() || grads.get(*id).shape() != dy.shape() {
                        return Err(Error::Usage(format!(
                            "tape parameter {} does not belong to the given parameter set",
                            id.0
                        )));
                    }
                    grads.get_mut(*id).add_assign(&dy);
                }
                Op::MatMulNT(a, b) => {
                    if self.tracked(*a) {
                        self.accumulate(&mut adj, *a, matmul_nn(&dy, self.value(*b))?);
                    }
                    if self.tracked(*b) {
                        self.accumulate(&mut adj, *b, matmul_tn(&dy, self.value(*a))?);
                    }
                }
                Op::MatMulNN(a, b) => {
                    if self.tracked(*a) {
                        self.accumulate(&mut adj, *a, matmul_nt(&dy, self.value(*b))?);
                    }
                    if self.tracked(*b) {
                        self.accumulate(&mut adj, *b, matmul_tn(self.value(*a), &dy)?);
                    }
                }
                Op::AddRow(x, row) => {
                    let sums = Matrix::row_vector(&column_sums(&dy));
                    self.accumulate(&mut adj, *row, sums);
                    self.accumulate(&mut adj, *x, dy);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, *a, dy.clone());
                    self.accumulate(&mut adj, *b, dy);
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    for (d, &y) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        if y <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::Mask(x, mask) => {
                    let mut dx = dy;
                    for (d, &m) in dx.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *d *= m;
                    }
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c) = dy.shape();
                    let g = self.value(*gamma).as_slice();
                    let dbeta = column_sums(&dy);
                    let mut dgamma = vec![T::zero(); c];
                    for i in 0..n {
                        for ((dg, &d), &h) in dgamma.iter_mut().zip(dy.row(i)).zip(xhat.row(i)) {
                            *dg += d * h;
                        }
                    }
                    let mut dx = Matrix::zeros(n, c);
                    if *batch_stats {
                        // dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let nn = T::from_usize(n);
                        for i in 0..n {
                            for j in 0..c {
                                let dxhat = dy[(i, j)] * g[j];
                                let sum_dxhat = dbeta[j] * g[j];
                                let sum_dxhat_xhat = dgamma[j] * g[j];
                                dx[(i, j)] = inv_std[j] / nn
                                    * (nn * dxhat - sum_dxhat - xhat[(i, j)] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..c {
                                dx[(i, j)] = dy[(i, j)] * g[j] * inv_std[j];
                            }
                        }
                    }
                    self.accumulate(&mut adj, *gamma, Matrix::row_vector(&dgamma));
                    self.accumulate(&mut adj, *beta, Matrix::row_vector(&dbeta));
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    self.accumulate(&mut adj, *x, dy.reshape(r, c)?);
                }
                Op::MeanPool { x, group } => {
                    let (r, c) = self.value(*x).shape();
                    let mut dx = Matrix::zeros(r, c);
                    let inv = T::one() / T::from_usize(*group);
                    for i in 0..r {
                        let src = dy.row(i / group);
                        for (d, &s) in dx.row_mut(i).iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seq_len,
                } => {
                    let (dq, dk, dv) = self.attention_backward(&dy, *q, *k, *v, *heads, *seq_len)?;
                    self.accumulate(&mut adj, *q, dq);
                    self.accumulate(&mut adj, *k, dk);
                    self.accumulate(&mut adj, *v, dv);
                }
                Op::SpMM { adj: a, x } => {
                    if !self.tracked(*x) {
                        continue;
                    }
                    let dx = a.spmm_transpose(&dy)?;
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::SelectRows { x, rows } => {
                    let (r, c) = self.value(*x).shape();
                    let mut dx = Matrix::zeros(r, c);
                    for (k, &row) in rows.iter().enumerate() {
                        for (d, &s) in dx.row_mut(row).iter_mut().zip(dy.row(k)) {
                            *d += s;
                        }
                    }
                    self.accumulate(&mut adj, *x, dx);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let scale = T::from_f64(2.0) * dy[(0, 0)] / T::from_usize(p.len());
                    let mut dp = p.clone();
                    for (d, &t) in dp.as_mut_slice().iter_mut().zip(target.as_slice()) {
                        *d = (*d - t) * scale;
                    }
                    self.accumulate(&mut adj, *pred, dp);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = dy[(0, 0)] / T::from_usize(labels.len());
                    let mut dl = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        dl[(i, y)] -= T::one();
                    }
                    dl.as_mut_slice().iter_mut().for_each(|d| *d *= scale);
                    self.accumulate(&mut adj, *logits, dl);
                }
                Op::BceWithLogits { logits, targets } => {
                    let scale = dy[(0, 0)] / T::from_usize(targets.len());
                    let mut dl = self.value(*logits).clone();
                    for (d, &t) in dl.as_mut_slice().iter_mut().zip(targets) {
                        *d = (ops::sigmoid(*d) - t) * scale;
                    }
                    self.accumulate(&mut adj, *logits, dl);
                }
            }
        }
        Ok(grads)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn accumulate(&self, adj: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.tracked(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn attention_backward(
        &self,
        dy: &Matrix<T>,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
    ) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qv.shape();
        let scale = head_scale::<T>(width, heads);
        let mut dq = Matrix::zeros(rows, width);
        let mut dk = Matrix::zeros(rows, width);
        let mut dv = Matrix::zeros(rows, width);
        for_each_head(rows / seq_len, heads, |s, h| {
            let qh = head_slice(qv, s, h, seq_len, heads);
            let kh = head_slice(kv, s, h, seq_len, heads);
            let vh = head_slice(vv, s, h, seq_len, heads);
            let doh = head_slice(dy, s, h, seq_len, heads);
            // Recompute the weights rather than storing n·h·L² floats.
            let mut p = matmul_nt(&qh, &kh)?;
            for i in 0..p.rows() {
                let row = p.row_mut(i);
                row.iter_mut().for_each(|x| *x *= scale);
                softmax_in_place(row);
            }
            let dvh = matmul_tn(&p, &doh)?;
            let mut ds = matmul_nt(&doh, &vh)?;
            for i in 0..ds.rows() {
                let prow = p.row(i);
                let dot: T = ds.row(i).iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (d, &pij) in ds.row_mut(i).iter_mut().zip(prow) {
                    *d = pij * (*d - dot) * scale;
                }
            }
            let dqh = matmul_nn(&ds, &kh)?;
            let dkh = matmul_tn(&ds, &qh)?;
            scatter_head(&mut dq, &dqh, s, h, seq_len, heads, true);
            scatter_head(&mut dk, &dkh, s, h, seq_len, heads, true);
            scatter_head(&mut dv, &dvh, s, h, seq_len, heads, true);
            Ok(())
        })?;
        Ok((dq, dk, dv))
    }
}


fn column_sums<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut s = vec![T::zero(); m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

pub(crate) fn head_scale<T: Scalar>(width: usize, heads: usize) -> T {
    T::one() / T::from_usize(width / heads).sqrt()
}

fn check_attention_shapes<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    heads: usize,
    seq_len: usize,
) -> Result<()> {
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::shape("attention inputs", q.shape(), k.shape()));
    }
    if heads == 0 || !q.cols().is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "hidden width {} is not divisible by {heads} heads",
            q.cols()
        )));
    }
    if seq_len == 0 || !q.rows().is_multiple_of(seq_len) {
        return Err(Error::Input(format!(
            "{} token rows do not split into sequences of length {seq_len}",
            q.rows()
        )));
    }
    Ok(())
}

fn for_each_head(
    samples: usize,
    heads: usize,
    mut f: impl FnMut(usize, usize) -> Result<()>,
) -> Result<()> {
    for s in 0..samples {
        for h in 0..heads {
            f(s, h)?;
        }
    }
    Ok(())
}

pub(crate) fn head_slice<T: Scalar>(
    m: &Matrix<T>,
    sample: usize,
    head: usize,
    seq_len: usize,
    heads: usize,
) -> Matrix<T> {
    let width = m.cols() / heads;
    let mut data = Vec::with_capacity(seq_len * width);
    for t in 0..seq_len {
        let row = m.row(sample * seq_len + t);
        data.extend_from_slice(&row[head * width..(head + 1) * width]);
    }
    Matrix::from_vec(seq_len, width, data).expect("head slice shape")
}

fn scatter_head<T: Scalar>(
    dst: &mut Matrix<T>,
    src: &Matrix<T>,
    sample: usize,
    head: usize,
    seq_len: usize,
    heads: usize,
    add: bool,
) {
    let width = dst.cols() / heads;
    for t in 0..seq_len {
        let drow = &mut dst.row_mut(sample * seq_len + t)[head * width..(head + 1) * width];
        if add {
            for (d, &s) in drow.iter_mut().zip(src.row(t)) {
                *d += s;
            }
        } else {
            drow.copy_from_slice(src.row(t));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_is_usage_error() {
        let tape = GradientTape::<f64>::new();
        let params = ParamSet::new();
        assert!(matches!(tape.backward(Var(0), &params), Err(Error::Usage(_))));
    }

    #[test]
    fn linear_mse_gradient_matches_closed_form() {
        // One sample: loss = mean_j (Wx+b−y)_j², dL/dW = 2(Wx+b−y)xᵀ/m.
        let mut params = ParamSet::<f64>::new();
        let w = params.add("w", Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap());
        let b = params.add("b", Matrix::row_vector(&[0.1, -0.3]));
        let x = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();

        let mut tape = GradientTape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(&params, w);
        let bv = tape.param(&params, b);
        let h = tape.matmul_nt(xv, wv).unwrap();
        let out = tape.add_row(h, bv).unwrap();
        let l = tape.mse(out, y.clone()).unwrap();
        let grads = tape.backward(l, &params).unwrap();

        let pred = [0.5 * 1.5 + 2.0 + 0.1, 2.0 * 1.5 - 0.5 - 0.3];
        let resid = [pred[0] - y[(0, 0)], pred[1] - y[(0, 1)]];
        for o in 0..2 {
            for i in 0..2 {
                let want = 2.0 * resid[o] * x[(0, i)] / 2.0;
                assert!((grads.get(w)[(o, i)] - want).abs() < 1e-12);
            }
            assert!((grads.get(b)[(0, o)] - resid[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut params = ParamSet::<f64>::new();
        let used = params.add("used", Matrix::filled(1, 2, 1.0));
        let unused = params.add("unused", Matrix::filled(3, 3, 7.0));
        let mut tape = GradientTape::new();
        let u = tape.param(&params, used);
        let _ = tape.param(&params, unused);
        let l = tape.mse(u, Matrix::zeros(1, 2)).unwrap();
        let grads = tape.backward(l, &params).unwrap();
        assert!(grads.get(unused).as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.get(used).as_slice().iter().all(|&g| g != 0.0));
    }

    #[test]
    fn batch_norm_train_rejects_single_row() {
        let mut tape = GradientTape::<f64>::new();
        let x = tape.constant(Matrix::filled(1, 2, 1.0));
        let g = tape.constant(Matrix::filled(1, 2, 1.0));
        let b = tape.constant(Matrix::zeros(1, 2));
        assert!(matches!(tape.batch_norm(x, g, b, 1e-5, None), Err(Error::Input(_))));
    }
}
