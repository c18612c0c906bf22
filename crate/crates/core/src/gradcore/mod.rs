//! Dense `f64` tensors, a reverse-mode tape, SGD with momentum, and the
//! warmup + cosine learning-rate schedule.

mod optim;
mod schedule;
mod tape;
mod tensor;

pub use optim::{sgd_step, Param, ParamSet};
pub use schedule::cosine_lr;
pub use tape::{Gradients, Mode, OpKind, Tape, Var, BN_EPS, L2_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("batchnorm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
}
