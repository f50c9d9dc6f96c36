//! Dense real-matrix substrate: row-major storage, products, elementwise
//! operations and the two factorizations the cascade needs (Cholesky for
//! the training solve, pivoted LU for general kernel inverses).

mod cholesky;
mod lu;
mod matrix;
mod real;

pub use cholesky::{spd_solve, spd_solve_owned, Cholesky};
pub use lu::{invert, Lu};
pub use matrix::{GramFactor, Matrix};
pub use real::{Precision, Real};
