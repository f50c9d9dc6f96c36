//! Shared input builders for the criterion benchmarks.

use polycascade::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `rows x cols` matrix with entries uniform in `[-1, 1)`.
pub fn uniform(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `rows` targets alternating between `-1` and `+1`.
pub fn signs(rows: usize) -> Matrix {
    Matrix::from_fn(rows, 1, |i, _| if i % 2 == 0 { -1.0 } else { 1.0 })
}
