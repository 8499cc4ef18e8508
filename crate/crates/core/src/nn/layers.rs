use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{BnStats, ParamId, ParamSet};
use crate::nn::tape::{GradientTape, Var};
use crate::rng::{self, Stream};
use crate::tensor::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed during a train-mode forward pass, applied to
/// the running averages once the step is committed.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub slot: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batch: usize,
}

/// Per-forward-pass state: mode, the dropout stream, and pending batch-norm updates.
pub struct ForwardCtx {
    pub mode: Mode,
    dropout: Option<Stream>,
    bn_updates: Vec<BnUpdate>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout: None,
            bn_updates: Vec::new(),
        }
    }

    /// Train mode with dropout masks drawn from the named stream `(seed, stream)`.
    pub fn train(seed: u64, stream: &str) -> Self {
        Self {
            mode: Mode::Train,
            dropout: Some(rng::stream(seed, stream)),
            bn_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in ±√(6/fan_in); for layers feeding a ReLU.
    He,
    /// Uniform in ±√(6/(fan_in+fan_out)).
    Xavier,
}

fn init_weights<T: Scalar>(rows: usize, cols: usize, init: Init, stream: &mut Stream) -> Matrix<T> {
    let limit = match init {
        Init::He => (6.0 / cols as f64).sqrt(),
        Init::Xavier => (6.0 / (cols + rows) as f64).sqrt(),
    };
    let data = (0..rows * cols)
        .map(|_| T::from_f64(stream.random_range(-limit..limit)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("init shape")
}

/// Dense affine layer `y = W x + b` with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub in_width: usize,
    pub out_width: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearLayer {
    /// Registers weights in `params`, initialised from the stream `init/<name>`.
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_width: usize,
        out_width: usize,
        init: Init,
        with_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if in_width == 0 || out_width == 0 {
            return Err(Error::Config(format!(
                "layer {name} needs positive widths, got {in_width}->{out_width}"
            )));
        }
        let mut s = rng::stream(seed, &format!("init/{name}"));
        let weight = params.add(format!("{name}.weight"), init_weights(out_width, in_width, init, &mut s));
        let bias = with_bias.then(|| params.add(format!("{name}.bias"), Matrix::zeros(1, out_width)));
        Ok(Self {
            in_width,
            out_width,
            weight,
            bias,
        })
    }

    /// Looks the layer up by name in a loaded parameter set.
    pub fn bind<T: Scalar>(params: &ParamSet<T>, name: &str) -> Result<Self> {
        let weight = params
            .find(&format!("{name}.weight"))
            .ok_or_else(|| Error::Input(format!("missing tensor {name}.weight")))?;
        let bias = params.find(&format!("{name}.bias"));
        let (out_width, in_width) = params.get(weight).shape();
        if let Some(b) = bias {
            if params.get(b).shape() != (1, out_width) {
                return Err(Error::shape(format!("{name}.bias"), (1, out_width), params.get(b).shape()));
            }
        }
        Ok(Self {
            in_width,
            out_width,
            weight,
            bias,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradientTape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.in_width {
            return Err(Error::width("linear layer input", self.in_width, cols));
        }
        let w = tape.param(params, self.weight);
        let h = tape.matmul_nt(x, w)?;
        match self.bias {
            Some(b) => {
                let bv = tape.param(params, b);
                tape.add_row(h, bv)
            }
            None => Ok(h),
        }
    }
}

/// `result[i] = W·X[i] + b`.
pub fn linear_forward<T: Scalar>(x: &Matrix<T>, weight: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    if x.cols() != weight.cols() {
        return Err(Error::shape(
            "linear input",
            (x.rows(), weight.cols()),
            x.shape(),
        ));
    }
    if bias.len() != weight.rows() {
        return Err(Error::width("linear bias", weight.rows(), bias.len()));
    }
    let mut out = crate::tensor::matmul_nt(x, weight)?;
    for i in 0..out.rows() {
        for (o, &b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub width: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index of this layer's running statistics in the owning model.
    pub slot: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormLayer {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, width: usize, slot: usize, eps: f64, momentum: f64) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Matrix::filled(1, width, T::one()));
        let beta = params.add(format!("{name}.beta"), Matrix::zeros(1, width));
        Self {
            width,
            gamma,
            beta,
            slot,
            eps,
            momentum,
        }
    }

    pub fn bind<T: Scalar>(params: &ParamSet<T>, name: &str, slot: usize, eps: f64, momentum: f64) -> Result<Self> {
        let find = |suffix: &str| {
            params
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Input(format!("missing tensor {name}.{suffix}")))
        };
        let gamma = find("gamma")?;
        let beta = find("beta")?;
        Ok(Self {
            width: params.get(gamma).cols(),
            gamma,
            beta,
            slot,
            eps,
            momentum,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.width {
            return Err(Error::width("batch-norm input", self.width, cols));
        }
        let g = tape.param(params, self.gamma);
        let b = tape.param(params, self.beta);
        let eps = T::from_f64(self.eps);
        if ctx.is_train() {
            let batch = tape.value(x).rows();
            let (y, mean, var) = tape.batch_norm(x, g, b, eps, None)?;
            ctx.bn_updates.push(BnUpdate {
                slot: self.slot,
                mean: mean.iter().map(|v| v.as_f64()).collect(),
                var: var.iter().map(|v| v.as_f64()).collect(),
                batch,
            });
            Ok(y)
        } else {
            let s = &stats[self.slot];
            let (y, _, _) = tape.batch_norm(x, g, b, eps, Some((&s.running_mean, &s.running_var)))?;
            Ok(y)
        }
    }
}

/// Folds a batch's statistics into running averages. The running variance
/// uses the unbiased batch estimate.
pub fn apply_bn_update<T: Scalar>(stats: &mut BnStats<T>, update: &BnUpdate, momentum: f64) {
    let n = update.batch as f64;
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    for (r, &m) in stats.running_mean.iter_mut().zip(&update.mean) {
        *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * m);
    }
    for (r, &v) in stats.running_var.iter_mut().zip(&update.var) {
        *r = T::from_f64(((1.0 - momentum) * r.as_f64() + momentum * v * unbias).max(0.0));
    }
}

/// Standalone batch normalization. Train mode normalizes with batch
/// statistics and updates `stats`; eval mode uses `stats`.
pub fn batchnorm_forward<T: Scalar>(
    x: &Matrix<T>,
    gamma: &[T],
    beta: &[T],
    stats: &mut BnStats<T>,
    eps: f64,
    momentum: f64,
    mode: Mode,
) -> Result<Matrix<T>> {
    let mut params = ParamSet::new();
    let layer = BatchNormLayer {
        width: gamma.len(),
        gamma: params.add("gamma", Matrix::row_vector(gamma)),
        beta: params.add("beta", Matrix::row_vector(beta)),
        slot: 0,
        eps,
        momentum,
    };
    if beta.len() != gamma.len() {
        return Err(Error::width("batch-norm beta", gamma.len(), beta.len()));
    }
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let mut ctx = match mode {
        Mode::Train => ForwardCtx {
            mode,
            dropout: None,
            bn_updates: Vec::new(),
        },
        Mode::Eval => ForwardCtx::eval(),
    };
    let y = layer.forward(&mut tape, &params, std::slice::from_ref(stats), xv, &mut ctx)?;
    for u in ctx.take_bn_updates() {
        apply_bn_update(stats, &u, momentum);
    }
    Ok(tape.take_value(y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutLayer {
    pub rate: f64,
}

impl DropoutLayer {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradientTape<T>, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        if !ctx.is_train() || self.rate == 0.0 {
            return Ok(x);
        }
        let stream = ctx
            .dropout
            .as_mut()
            .ok_or_else(|| Error::Usage("train-mode dropout without a seeded stream".into()))?;
        let (r, c) = tape.value(x).shape();
        let mask = dropout_mask(r, c, self.rate, stream);
        tape.mask(x, mask)
    }
}

fn dropout_mask<T: Scalar>(rows: usize, cols: usize, rate: f64, stream: &mut Stream) -> Matrix<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let data = (0..rows * cols)
        .map(|_| if stream.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("mask shape")
}

/// Inverted dropout: in train mode zero each entry with probability `rate`
/// and scale survivors by `1/(1−rate)`; in eval mode return `x` unchanged.
pub fn dropout_forward<T: Scalar>(x: &Matrix<T>, rate: f64, mode: Mode, stream: &mut Stream) -> Result<Matrix<T>> {
    DropoutLayer::new(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask: Matrix<T> = dropout_mask(x.rows(), x.cols(), rate, stream);
    let mut out = x.clone();
    for (o, &m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *o *= m;
    }
    Ok(out)
}

/// `linear → batch-norm → ReLU → dropout`, the hidden block shared by the
/// autoencoder and the feed-forward heads.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub linear: LinearLayer,
    pub bn: BatchNormLayer,
    pub dropout: DropoutLayer,
}

impl DenseBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_width: usize,
        out_width: usize,
        slot: usize,
        dropout: f64,
        bn: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            linear: LinearLayer::new(params, name, in_width, out_width, Init::He, true, seed)?,
            bn: BatchNormLayer::new(params, &format!("{name}.bn"), out_width, slot, bn.0, bn.1),
            dropout: DropoutLayer::new(dropout)?,
        })
    }

    pub fn bind<T: Scalar>(params: &ParamSet<T>, name: &str, slot: usize, dropout: f64, bn: (f64, f64)) -> Result<Self> {
        Ok(Self {
            linear: LinearLayer::bind(params, name)?,
            bn: BatchNormLayer::bind(params, &format!("{name}.bn"), slot, bn.0, bn.1)?,
            dropout: DropoutLayer::new(dropout)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let h = self.linear.forward(tape, params, x)?;
        let h = self.bn.forward(tape, params, stats, h, ctx)?;
        let h = tape.relu(h);
        self.dropout.forward(tape, h, ctx)
    }
}
