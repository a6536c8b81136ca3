//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by tensor math, diffusion ops, and the optimization engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("unknown condition id '{0}'")]
    UnknownCondition(String),

    #[error("denoiser does not support key-feature gradients")]
    NotDifferentiable,

    #[error("training diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { step: usize, loss: f32, initial: f32 },
}

impl CoreError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument { op, msg: msg.into() }
    }

    pub fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        CoreError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
