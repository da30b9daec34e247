//! Dense `f32`/`f64` tensors and a reverse-mode differentiation tape.

mod tape;
mod tensor;

pub use tape::{Tape, Var, MASK_VALUE};
pub use tensor::{Scalar, Tensor};
