// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod grid;
pub mod powerflow;
pub mod linearization;
pub mod agent;
pub mod consensus;
pub mod sim;
pub mod checks;

pub use error::{Error, Result};
pub use nalgebra;
