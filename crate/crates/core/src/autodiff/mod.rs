//! Dense reverse-mode differentiation: tensors, an operation tape, the
//! recurrent and dense parameter blocks built on it, Adam, gradient
//! checking and checkpoint files.

mod adam;
mod cells;
pub mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cells::{
    dense, gru_step, init_weight, rnn_step, Activation, DenseParams, DenseVars, GruCellParams, GruVars, ParamMut,
    ParamRef, RnnCellParams, RnnVars,
};
pub use gradcheck::{gradient_check, sample_coords, GradCheckReport};
pub use tape::{selu, sigmoid, Gradients, Tape, Var, SELU_ALPHA, SELU_SCALE};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("finite-difference step must be positive and finite, got {0}")]
    DegenerateEpsilon(f64),
    #[error("{0}")]
    InvalidArgument(String),
}
