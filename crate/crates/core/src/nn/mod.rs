//! Small differentiable-computation substrate: parameter storage, a
//! reverse-mode tape, finite-difference checking and the closed-form
//! mixture-of-experts gradients.

pub mod gradcheck;
pub mod moe_grads;
pub mod params;
pub mod tape;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use moe_grads::{closed_form_moe_grads, MoeClosedForm};
pub use params::{ParamId, ParamRegistry, ParamTensor};
pub use tape::{softmax, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("probabilities sum to {0}")]
    NotNormalized(f64),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
}
