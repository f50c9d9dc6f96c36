// Comparisons like `!(x <= tol)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod constellation;
pub mod data;
mod error;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod package;
pub mod snapshot;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
