//! Binary-operation datasets, a 2-layer decoder-only transformer trained from
//! scratch, and the experiment harness used to study delayed generalization
//! on them.
pub mod algebra;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
