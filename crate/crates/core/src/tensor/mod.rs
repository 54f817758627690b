//! Dense `f64` tensors with a reverse-mode gradient tape.

mod attention;
pub mod gradcheck;
mod kernels;
mod loss;
mod nn;
mod ops;
mod optim;
mod params;
mod sample;
mod tape;
mod value;

pub use attention::{multi_head_attention, MhaWeights};
pub use loss::Focal;
pub use nn::{
    sine_frequencies, BatchStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LAYER_NORM_EPS,
    SINE_TEMPERATURE,
};
pub use ops::{inverse_sigmoid_scalar, sigmoid_scalar, GATHER_ZERO};
pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, AdamWState};
pub use params::{xavier, Mode, ParamStore, Session};
pub use sample::MapShape;
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
pub use value::Tensor;

/// Clamp used by every inverse-sigmoid in the model.
pub const INVERSE_SIGMOID_EPS: f64 = 1e-6;
