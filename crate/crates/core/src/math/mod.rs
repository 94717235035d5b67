//! Dense `f64` tensors, a reverse-mode tape, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use gradcheck::{grad_check, grad_check_against, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{ParamGrads, ParamId, ParamSet};
pub use tape::{Elementwise, Gradients, NodeId, Tape};
pub use tensor::{argmax, log_softmax_slice, softmax_slice, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}
