//! Dense matrices and a tape-based reverse-mode differentiation engine.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Axis, Tape, Var};
