//! Dense `f64` tensors, a define-by-run tape for reverse-mode gradients, and
//! the Adam optimizer.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, check_finite, Adam, AdamConfig, AdamState};
pub use error::{DiffError, Result};
pub use tape::{activation, softmax_in_place, CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
