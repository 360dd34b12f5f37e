//! Spatiotemporal kriging: infer readings at unsampled locations from a
//! sparse sensor network using short-term graph attention and a long-term
//! adaptive graph GRU.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asggru;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod jstgat;
pub mod model;
pub mod pseudo;
pub mod train;

pub use error::{Error, Result};
