//! Minimal reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: dense 1-/2-D `f64` tensors, a Wengert
//! tape of primitive ops, and first-order optimizers. Everything downstream
//! (the learned mechanisms and their trainers) builds on this module, so its
//! gradients are cross-checked against central finite differences in the
//! test suite rather than trusted by construction.

mod exact;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumGradError {
    #[error("bad tensor shape: {0}")]
    BadShape(String),
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: String, shapes: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}
