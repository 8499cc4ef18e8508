use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNormLayer, BnStats, DenseBlock, ForwardCtx, GradientTape, Init, LinearLayer, ParamSet, Var};
use crate::tensor::Scalar;

use super::output_units;

/// Two hidden `linear → batch-norm → ReLU → dropout` blocks and a linear
/// output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnSpec {
    pub input_width: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for FfnSpec {
    fn default() -> Self {
        Self {
            input_width: 256,
            hidden1: 128,
            hidden2: 64,
            dropout: 0.0,
            num_classes: 7,
            bn_eps: BatchNormLayer::DEFAULT_EPS,
            bn_momentum: BatchNormLayer::DEFAULT_MOMENTUM,
        }
    }
}

impl FfnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Config("ffn widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct FfnNet {
    blocks: [DenseBlock; 2],
    out: LinearLayer,
}

impl FfnNet {
    pub(super) fn new(spec: &FfnSpec, params: &mut ParamSet<f32>, seed: u64) -> Result<(Self, Vec<BnStats<f32>>)> {
        let bn = (spec.bn_eps, spec.bn_momentum);
        let b0 = DenseBlock::new(params, "ffn.0", spec.input_width, spec.hidden1, 0, spec.dropout, bn, seed)?;
        let b1 = DenseBlock::new(params, "ffn.1", spec.hidden1, spec.hidden2, 1, spec.dropout, bn, seed)?;
        let out = LinearLayer::new(
            params,
            "ffn.out",
            spec.hidden2,
            output_units(spec.num_classes),
            Init::Xavier,
            true,
            seed,
        )?;
        let stats = vec![BnStats::new(spec.hidden1), BnStats::new(spec.hidden2)];
        Ok((Self { blocks: [b0, b1], out }, stats))
    }

    pub(super) fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, params, stats, h, ctx)?;
        }
        self.out.forward(tape, params, h)
    }
}
