//! Dense `f64` tensors, a tape-style computation graph with reverse-mode
//! differentiation, the Adam optimizer, finite-difference gradient checks and
//! a binary parameter checkpoint format.

mod cases;
mod error;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use cases::{op_case, Builder, OpCase, DIFFERENTIABLE_KINDS};
pub use error::{Result, TensorError};
pub use gradcheck::{
    gradient_check, gradient_check_with, relative_error, GradCheckOptions, GradCheckReport,
    ParamCheck,
};
pub use graph::{Graph, OpKind, Var, DEBUG_NUMERICS_ENV};
pub use optim::{clip_grad_norm, Adam};
pub use params::{ParamId, ParamSet, CHECKPOINT_MAGIC};
pub use tensor::Tensor;

pub use rand_chacha::ChaCha8Rng;
