//! Dense autoencoder mapping expression vectors to a latent space and back.
//!
//! Hidden blocks are `linear → batch-norm → ReLU`; the latent layer and the
//! final decoder layer are plain linear maps. The decoder mirrors the encoder
//! widths in reverse.

use serde::{Deserialize, Serialize};

use crate::data::{CellType, Preprocessor};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::nn::{
    adam_step, AdamState, BatchNormLayer, BnStats, DenseBlock, ForwardCtx, GradientTape, Init, LinearLayer, ParamSet,
    Var,
};
use crate::tensor::{Matrix, Scalar};
use crate::rng;
use crate::train::{commit_bn_updates, map_row_chunks, shuffled_batches, TrainConfig};

/// Rows per eval-mode chunk; eval outputs do not depend on it.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub input_width: usize,
    pub latent_width: usize,
    pub encoder_widths: Vec<usize>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            input_width: 2000,
            latent_width: 256,
            encoder_widths: vec![128, 64],
            bn_eps: BatchNormLayer::DEFAULT_EPS,
            bn_momentum: BatchNormLayer::DEFAULT_MOMENTUM,
        }
    }
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.latent_width == 0 || self.encoder_widths.contains(&0) {
            return Err(Error::Config("autoencoder widths must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "batch-norm eps must be positive and momentum in [0, 1], got {} / {}",
                self.bn_eps, self.bn_momentum
            )));
        }
        Ok(())
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.encoder_widths.iter().rev().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    encoder: Vec<DenseBlock>,
    latent: LinearLayer,
    decoder: Vec<DenseBlock>,
    output: LinearLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub params: ParamSet<f32>,
    pub bn_stats: Vec<BnStats<f32>>,
    /// Applied by [`Autoencoder::embed_raw`] before encoding; `None` means
    /// inputs are already preprocessed.
    pub preprocessor: Option<Preprocessor>,
    layers: Layers,
}

fn encoder_name(i: usize) -> String {
    format!("enc.{i}")
}

fn decoder_name(i: usize) -> String {
    format!("dec.{i}")
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let bn = (spec.bn_eps, spec.bn_momentum);
        let mut params = ParamSet::new();
        let mut width = spec.input_width;
        let mut slot = 0;
        let mut encoder = Vec::new();
        for (i, &w) in spec.encoder_widths.iter().enumerate() {
            encoder.push(DenseBlock::new(&mut params, &encoder_name(i), width, w, slot, 0.0, bn, seed)?);
            slot += 1;
            width = w;
        }
        let latent = LinearLayer::new(&mut params, "enc.latent", width, spec.latent_width, Init::Xavier, true, seed)?;
        width = spec.latent_width;
        let mut decoder = Vec::new();
        for (i, w) in spec.decoder_widths().into_iter().enumerate() {
            decoder.push(DenseBlock::new(&mut params, &decoder_name(i), width, w, slot, 0.0, bn, seed)?);
            slot += 1;
            width = w;
        }
        let output = LinearLayer::new(&mut params, "dec.out", width, spec.input_width, Init::Xavier, true, seed)?;
        let bn_stats = encoder
            .iter()
            .chain(&decoder)
            .map(|b| BnStats::new(b.bn.width))
            .collect();
        Ok(Self {
            spec,
            params,
            bn_stats,
            preprocessor: None,
            layers: Layers {
                encoder,
                latent,
                decoder,
                output,
            },
        })
    }

    /// Rebuilds a model from stored tensors, checking every shape against `spec`.
    pub fn from_parts(
        spec: AutoencoderSpec,
        params: ParamSet<f32>,
        bn_stats: Vec<BnStats<f32>>,
        preprocessor: Option<Preprocessor>,
    ) -> Result<Self> {
        let reference = Self::new(spec.clone(), 0)?;
        reference.params.check_layout(&params)?;
        if bn_stats.len() != reference.bn_stats.len()
            || bn_stats
                .iter()
                .zip(&reference.bn_stats)
                .any(|(a, b)| a.running_mean.len() != b.running_mean.len() || a.running_var.len() != b.running_var.len())
        {
            return Err(Error::Input("batch-norm statistics do not match the autoencoder spec".into()));
        }
        if let Some(p) = &preprocessor {
            if p.width() != spec.input_width {
                return Err(Error::width("preprocessing parameters", spec.input_width, p.width()));
            }
        }
        Ok(Self {
            params,
            bn_stats,
            preprocessor,
            ..reference
        })
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn latent_width(&self) -> usize {
        self.spec.latent_width
    }

    /// Records `x → (z, x̂)` on `tape`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, Var)> {
        let z = self.encode_var(tape, params, stats, x, ctx)?;
        let xhat = self.decode_var(tape, params, stats, z, ctx)?;
        Ok((z, xhat))
    }

    fn encode_var<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.spec.input_width {
            return Err(Error::width("autoencoder input", self.spec.input_width, cols));
        }
        let mut h = x;
        for block in &self.layers.encoder {
            h = block.forward(tape, params, stats, h, ctx)?;
        }
        self.layers.latent.forward(tape, params, h)
    }

    fn decode_var<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        z: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cols = tape.value(z).cols();
        if cols != self.spec.latent_width {
            return Err(Error::width("autoencoder latent input", self.spec.latent_width, cols));
        }
        let mut h = z;
        for block in &self.layers.decoder {
            h = block.forward(tape, params, stats, h, ctx)?;
        }
        self.layers.output.forward(tape, params, h)
    }

    fn eval_chunks(
        &self,
        x: &Matrix<f32>,
        out_width: usize,
        f: impl Fn(&mut GradientTape<f32>, Var, &mut ForwardCtx) -> Result<Var>,
    ) -> Result<Matrix<f32>> {
        map_row_chunks(x, EVAL_CHUNK, out_width, |chunk| {
            let mut tape = GradientTape::new();
            let v = tape.constant(chunk);
            let out = f(&mut tape, v, &mut ForwardCtx::eval())?;
            Ok(tape.take_value(out))
        })
    }

    /// Latent codes of preprocessed inputs, in eval mode.
    pub fn encode(&self, x: &Matrix<f32>) -> Result<Matrix<f32>> {
        if x.cols() != self.spec.input_width {
            return Err(Error::width("autoencoder input", self.spec.input_width, x.cols()));
        }
        self.eval_chunks(x, self.spec.latent_width, |tape, v, ctx| {
            self.encode_var(tape, &self.params, &self.bn_stats, v, ctx)
        })
    }

    pub fn decode(&self, z: &Matrix<f32>) -> Result<Matrix<f32>> {
        if z.cols() != self.spec.latent_width {
            return Err(Error::width("autoencoder latent input", self.spec.latent_width, z.cols()));
        }
        self.eval_chunks(z, self.spec.input_width, |tape, v, ctx| {
            self.decode_var(tape, &self.params, &self.bn_stats, v, ctx)
        })
    }

    /// Mean over all entries of `(x − decode(encode(x)))²`.
    pub fn reconstruction_mse(&self, x: &Matrix<f32>) -> Result<f64> {
        let xhat = self.decode(&self.encode(x)?)?;
        let sum: f64 = x
            .as_slice()
            .iter()
            .zip(xhat.as_slice())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(sum / x.len().max(1) as f64)
    }

    /// Preprocesses raw expression values (when a preprocessor is attached)
    /// and encodes them.
    pub fn embed_raw(&self, raw: &Matrix<f32>) -> Result<Matrix<f32>> {
        if raw.cols() != self.spec.input_width {
            return Err(Error::width("autoencoder input", self.spec.input_width, raw.cols()));
        }
        match &self.preprocessor {
            Some(p) => self.encode(&p.apply(raw)?),
            None => self.encode(raw),
        }
    }

    pub fn embed(&self, raw: &Matrix<f32>, cell_type: CellType) -> Result<LatentEmbedding> {
        Ok(LatentEmbedding {
            z: self.embed_raw(raw)?,
            cell_type,
            autoencoder_fingerprint: self.fingerprint(),
        })
    }

    /// Scalar parameters in the encoder (hidden blocks plus latent layer).
    pub fn encoder_param_count(&self) -> usize {
        self.count_prefix("enc.")
    }

    pub fn decoder_param_count(&self) -> usize {
        self.count_prefix("dec.")
    }

    fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Hash of spec, tensors, running statistics and preprocessing parameters.
    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("autoencoder");
        f.str(&serde_json::to_string(&self.spec).expect("spec serializes"));
        self.params.fingerprint_into(&mut f);
        for s in &self.bn_stats {
            f.f32s(&s.running_mean).f32s(&s.running_var);
        }
        match &self.preprocessor {
            Some(p) => f.str(&p.fingerprint()),
            None => f.str("none"),
        };
        f.finish()
    }
}

/// `Z = f_enc(X)` plus the identity of the model that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEmbedding {
    pub z: Matrix<f32>,
    pub cell_type: CellType,
    pub autoencoder_fingerprint: String,
}

/// Trains on preprocessed rows by minibatch MSE with Adam. Returns the model
/// after the last epoch and the mean training loss of every epoch.
pub fn train_autoencoder(data: &Matrix<f32>, spec: AutoencoderSpec, config: &TrainConfig) -> Result<(Autoencoder, Vec<f64>)> {
    config.validate()?;
    if data.cols() != spec.input_width {
        return Err(Error::width("autoencoder training data", spec.input_width, data.cols()));
    }
    if data.rows() < 2 * config.batch_size {
        return Err(Error::Config(format!(
            "autoencoder training needs at least 2 x batch_size = {} rows, got {}",
            2 * config.batch_size,
            data.rows()
        )));
    }
    data.check_finite()?;
    let mut model = Autoencoder::new(spec, config.seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut shuffle = rng::stream(config.seed, "autoencoder/shuffle");
    let rows: Vec<usize> = (0..data.rows()).collect();
    let momentum = model.spec.bn_momentum;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, idx) in shuffled_batches(&rows, config.batch_size, &mut shuffle).into_iter().enumerate() {
            let xb = data.select_rows(&idx);
            let mut tape = GradientTape::new();
            let x = tape.constant(xb.clone());
            let mut ctx = ForwardCtx::train(config.seed, &format!("autoencoder/dropout/{epoch}/{b}"));
            let (_, xhat) = model.forward(&mut tape, &model.params, &model.bn_stats, x, &mut ctx)?;
            let loss = tape.mse(xhat, xb)?;
            let l = tape.value(loss)[(0, 0)] as f64;
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite reconstruction loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            let grads = tape.backward(loss, &model.params)?;
            adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
            commit_bn_updates(&mut model.bn_stats, ctx.take_bn_updates(), momentum);
            total += l * idx.len() as f64;
            seen += idx.len();
        }
        history.push(total / seen as f64);
    }
    Ok((model, history))
}
