//! Dense-network primitives: layers, losses, the gradient tape, Adam and the
//! finite-difference harness.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_check, FdOptions, FdReport};
pub use layers::{
    apply_bn_update, batchnorm_forward, dropout_forward, linear_forward, BatchNormLayer, BnUpdate, DenseBlock, DropoutLayer,
    ForwardCtx, Init, LinearLayer, Mode,
};
pub use ops::{loss, relu, scaled_dot_attention, sigmoid, softmax_rows, LossKind, Target};
pub use params::{BnStats, Gradients, Param, ParamId, ParamSet};
pub use tape::{GradientTape, Var};
