use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::attention_head;
use crate::nn::{DropoutLayer, ForwardCtx, GradientTape, Init, LinearLayer, ParamSet, Var};
use crate::tensor::{matmul_nt, Matrix, Scalar};

use super::output_units;

/// Each embedding coordinate is a token of width 1, projected to width
/// `model_width`, passed through one multi-head self-attention block with a
/// residual connection, mean-pooled over tokens and classified by a small
/// ReLU stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSpec {
    /// Sequence length; equals the embedding width.
    pub token_count: usize,
    pub model_width: usize,
    pub heads: usize,
    pub ff_widths: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self {
            token_count: 256,
            model_width: 256,
            heads: 4,
            ff_widths: vec![128],
            dropout: 0.0,
            num_classes: 7,
        }
    }
}

impl AttentionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.token_count == 0 || self.model_width == 0 || self.ff_widths.contains(&0) {
            return Err(Error::Config("attention widths must be positive".into()));
        }
        check_heads(self.model_width, self.heads)?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.model_width / self.heads
    }
}

fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {width} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

fn columns<T: Scalar>(m: &Matrix<T>, start: usize, width: usize) -> Matrix<T> {
    let data = m
        .iter_rows()
        .flat_map(|r| r[start..start + width].iter().copied())
        .collect();
    Matrix::from_vec(m.rows(), width, data).expect("column slice")
}

/// `[head₁ ∥ … ∥ head_h] W_Oᵀ` for one sequence `x` (`L×D`), with weights
/// stored `out×in`. Returns the output and each head's attention weights.
pub fn multi_head_attention<T: Scalar>(
    x: &Matrix<T>,
    wq: &Matrix<T>,
    wk: &Matrix<T>,
    wv: &Matrix<T>,
    wo: &Matrix<T>,
    heads: usize,
) -> Result<(Matrix<T>, Vec<Matrix<T>>)> {
    let d = x.cols();
    check_heads(d, heads)?;
    for (name, w) in [("W_Q", wq), ("W_K", wk), ("W_V", wv), ("W_O", wo)] {
        if w.shape() != (d, d) {
            return Err(Error::shape(name, (d, d), w.shape()));
        }
    }
    let (q, k, v) = (matmul_nt(x, wq)?, matmul_nt(x, wk)?, matmul_nt(x, wv)?);
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut concat = Matrix::zeros(x.rows(), d);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (o, w) = attention_head(&columns(&q, h * dh, dh), &columns(&k, h * dh, dh), &columns(&v, h * dh, dh), scale)?;
        for i in 0..x.rows() {
            concat.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(o.row(i));
        }
        weights.push(w);
    }
    Ok((matmul_nt(&concat, wo)?, weights))
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct AttentionNet {
    tokens: usize,
    heads: usize,
    token: LinearLayer,
    wq: LinearLayer,
    wk: LinearLayer,
    wv: LinearLayer,
    wo: LinearLayer,
    ff: Vec<LinearLayer>,
    dropout: DropoutLayer,
    out: LinearLayer,
}

/// Intermediate values of the attention block for a batch.
pub(super) struct BlockValues<T> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub block: Matrix<T>,
}

impl AttentionNet {
    pub(super) fn new(spec: &AttentionSpec, params: &mut ParamSet<f32>, seed: u64) -> Result<Self> {
        let d = spec.model_width;
        let token = LinearLayer::new(params, "attn.token", 1, d, Init::Xavier, true, seed)?;
        let mut proj = |name: &str| LinearLayer::new(params, name, d, d, Init::Xavier, false, seed);
        let (wq, wk, wv, wo) = (proj("attn.q")?, proj("attn.k")?, proj("attn.v")?, proj("attn.o")?);
        let mut ff = Vec::new();
        let mut width = d;
        for (i, &w) in spec.ff_widths.iter().enumerate() {
            ff.push(LinearLayer::new(params, &format!("attn.ff.{i}"), width, w, Init::He, true, seed)?);
            width = w;
        }
        let out = LinearLayer::new(params, "attn.out", width, output_units(spec.num_classes), Init::Xavier, true, seed)?;
        Ok(Self {
            tokens: spec.token_count,
            heads: spec.heads,
            token,
            wq,
            wk,
            wv,
            wo,
            ff,
            dropout: DropoutLayer::new(spec.dropout)?,
            out,
        })
    }

    /// Records token projection and the residual attention block; returns
    /// `(tokens, q, k, block)` each `(n·L)×D`.
    fn block<T: Scalar>(&self, tape: &mut GradientTape<T>, params: &ParamSet<T>, x: Var) -> Result<(Var, Var, Var, Var)> {
        let (n, l) = tape.value(x).shape();
        if l != self.tokens {
            return Err(Error::width("attention classifier input", self.tokens, l));
        }
        let t = tape.reshape(x, n * l, 1)?;
        let h0 = self.token.forward(tape, params, t)?;
        let q = self.wq.forward(tape, params, h0)?;
        let k = self.wk.forward(tape, params, h0)?;
        let v = self.wv.forward(tape, params, h0)?;
        let a = tape.attention(q, k, v, self.heads, l)?;
        let o = self.wo.forward(tape, params, a)?;
        Ok((h0, q, k, tape.add(h0, o)?))
    }

    pub(super) fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let (_, _, _, block) = self.block(tape, params, x)?;
        let mut h = tape.mean_pool(block, self.tokens)?;
        for layer in &self.ff {
            h = layer.forward(tape, params, h)?;
            h = tape.relu(h);
            h = self.dropout.forward(tape, h, ctx)?;
        }
        self.out.forward(tape, params, h)
    }

    pub(super) fn block_values(&self, params: &ParamSet<f32>, z: &Matrix<f32>) -> Result<BlockValues<f32>> {
        let mut tape = GradientTape::new();
        let x = tape.constant(z.clone());
        let (_, q, k, block) = self.block(&mut tape, params, x)?;
        Ok(BlockValues {
            q: tape.take_value(q),
            k: tape.take_value(k),
            block: tape.take_value(block),
        })
    }

    /// Per-sample, per-head `L×L` attention weights.
    pub(super) fn weights(&self, params: &ParamSet<f32>, z: &Matrix<f32>) -> Result<Vec<Vec<Matrix<f32>>>> {
        let vals = self.block_values(params, z)?;
        let l = self.tokens;
        let d = vals.q.cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut out = Vec::with_capacity(z.rows());
        for s in 0..z.rows() {
            let q = vals.q.row_range(s * l, (s + 1) * l);
            let k = vals.k.row_range(s * l, (s + 1) * l);
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (qh, kh) = (columns(&q, h * dh, dh), columns(&k, h * dh, dh));
                let (_, w) = attention_head(&qh, &kh, &kh, scale)?;
                per_head.push(w);
            }
            out.push(per_head);
        }
        Ok(out)
    }

    pub(super) fn eval_chunk(&self) -> usize {
        let width = self.wq.out_width.max(1);
        (1 << 18) / (self.tokens * width).max(1) + 1
    }
}
