use super::{Matrix, Real};
use crate::error::{Error, Result};

const BLOCK: usize = 64;
/// Rows of the trailing matrix updated per product.
const UPDATE_ROWS: usize = 256;

/// Lower-triangular Cholesky factor `S = L L^T` of a symmetric
/// positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Real = f64> {
    /// Lower triangle holds `L`; the strict upper triangle is zeroed.
    factor: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors `s`, reading only its lower triangle.
    pub fn factor(s: &Matrix<T>) -> Result<Self> {
        Self::factor_owned(s.clone())
    }

    /// Like [`Cholesky::factor`], reusing the storage of `a`.
    ///
    /// Right-looking blocked algorithm: each diagonal block and the panel
    /// below it are factored in place, then the trailing lower triangle is
    /// updated with one matrix product per block row.
    pub fn factor_owned(mut a: Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        for j0 in (0..n).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(n);
            factor_diagonal_block(&mut a, j0, j1)?;
            solve_panel(&mut a, j0, j1);
            update_trailing(&mut a, j0, j1);
        }
        for i in 0..n {
            a.row_mut(i)[i + 1..].fill(T::zero());
        }
        Ok(Cholesky { factor: a })
    }

    pub fn l(&self) -> &Matrix<T> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    /// Solves `S X = rhs` by forward then backward substitution.
    pub fn solve(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.dim();
        if rhs.rows() != n {
            return Err(Error::mismatch("cholesky solve", (n, n), rhs.shape()));
        }
        let l = &self.factor;
        let m = rhs.cols();
        let mut x = rhs.clone();
        let mut col = vec![T::zero(); n];
        for c in 0..m {
            for (i, v) in col.iter_mut().enumerate() {
                *v = x[(i, c)];
            }
            // L y = b, row by row
            for i in 0..n {
                let li = l.row(i);
                let dot: T = li[..i].iter().zip(&col[..i]).map(|(&a, &b)| a * b).sum();
                col[i] = (col[i] - dot) / li[i];
            }
            // L^T x = y, eliminating with rows of L from the bottom
            for i in (0..n).rev() {
                let li = l.row(i);
                let xi = col[i] / li[i];
                col[i] = xi;
                for (v, &lik) in col[..i].iter_mut().zip(&li[..i]) {
                    *v -= lik * xi;
                }
            }
            for (i, v) in col.iter().enumerate() {
                x[(i, c)] = *v;
            }
        }
        x.ensure_finite("cholesky solve")
    }
}

fn factor_diagonal_block<T: Real>(a: &mut Matrix<T>, j0: usize, j1: usize) -> Result<()> {
    for j in j0..j1 {
        let rj = a.row(j);
        let d = rj[j] - rj[j0..j].iter().map(|&v| v * v).sum::<T>();
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: d.as_f64(),
            });
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..j1 {
            let v = {
                let (ri, rj) = (a.row(i), a.row(j));
                ri[j]
                    - ri[j0..j]
                        .iter()
                        .zip(&rj[j0..j])
                        .map(|(&x, &y)| x * y)
                        .sum::<T>()
            };
            a[(i, j)] = v / d;
        }
    }
    Ok(())
}

/// `A[j1.., j0..j1] <- A[j1.., j0..j1] * L_jj^{-T}`.
fn solve_panel<T: Real>(a: &mut Matrix<T>, j0: usize, j1: usize) {
    let n = a.rows();
    let w = j1 - j0;
    let diag = Matrix::from_fn(w, w, |i, j| a[(j0 + i, j0 + j)]);
    for i in j1..n {
        let row = &mut a.row_mut(i)[j0..j1];
        for j in 0..w {
            let dj = diag.row(j);
            let dot: T = row[..j].iter().zip(&dj[..j]).map(|(&x, &y)| x * y).sum();
            row[j] = (row[j] - dot) / dj[j];
        }
    }
}

/// `A[j1.., j1..] -= P P^T` on the lower block triangle, `P = A[j1.., j0..j1]`.
fn update_trailing<T: Real>(a: &mut Matrix<T>, j0: usize, j1: usize) {
    let n = a.rows();
    if j1 >= n {
        return;
    }
    let w = j1 - j0;
    // the panel is copied out so the product never aliases its own output
    let panel = Matrix::from_fn(n - j1, w, |i, j| a[(j1 + i, j0 + j)]);
    let p = panel.as_slice().as_ptr();
    let base = a.as_mut_slice().as_mut_ptr();
    for i0 in (j1..n).step_by(UPDATE_ROWS) {
        let i1 = (i0 + UPDATE_ROWS).min(n);
        // SAFETY: operands index inside `panel`; the output block
        // `A[i0..i1, j1..i1]` lies inside `a` and is disjoint from `panel`.
        unsafe {
            T::gemm(
                i1 - i0,
                w,
                i1 - j1,
                -T::one(),
                p.add((i0 - j1) * w),
                w as isize,
                1,
                p,
                1,
                w as isize,
                T::one(),
                base.add(i0 * n + j1),
                n as isize,
                1,
            );
        }
    }
}

/// Solves `s x = rhs` for symmetric positive-definite `s` via Cholesky.
///
/// The symmetry of `s` is checked up to a relative gap of `1e-10`;
/// a non-positive pivot is reported as [`Error::NotPositiveDefinite`],
/// distinct from shape errors.
pub fn spd_solve<T: Real>(s: &Matrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    if rhs.rows() != n {
        return Err(Error::mismatch("spd_solve", s.shape(), rhs.shape()));
    }
    let tol = T::cast(1e-10) * s.max_abs().max(T::min_positive_value());
    for i in 0..n {
        for j in 0..i {
            let gap = (s[(i, j)] - s[(j, i)]).abs();
            if gap > tol {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    gap: gap.as_f64(),
                });
            }
        }
    }
    Cholesky::factor(s)?.solve(rhs)
}

/// Solves `s x = rhs` for a matrix whose lower triangle is symmetric
/// positive definite by construction, consuming `s`. No symmetry check.
pub fn spd_solve_owned<T: Real>(s: Matrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    if rhs.rows() != s.rows() {
        return Err(Error::mismatch("spd_solve", s.shape(), rhs.shape()));
    }
    Cholesky::factor_owned(s)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut s = a.matmul_tn(&a).unwrap();
        s.add_diagonal(1.0);
        s
    }

    #[test]
    fn identity_system() {
        let v = Matrix::from_rows(&[[1.5], [-2.0], [0.25]]).unwrap();
        assert_eq!(spd_solve(&Matrix::identity(3), &v).unwrap(), v);
    }

    #[test]
    fn diagonal_system() {
        let s = Matrix::from_rows(&[[2.0, 0.0], [0.0, 8.0]]).unwrap();
        let rhs = Matrix::from_rows(&[[2.0], [16.0]]).unwrap();
        let x: Matrix = spd_solve(&s, &rhs).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[1, 7, 63, 64, 65, 130, 200] {
            let s = random_spd(n, &mut rng);
            let r = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            let x = spd_solve(&s, &r).unwrap();
            let resid = s.matmul(&x).unwrap().sub(&r).unwrap().max_abs();
            let rel = resid / (s.max_abs() * x.max_abs() + r.max_abs());
            assert!(resid <= 1e-10 && rel <= 1e-10, "n={n} resid={resid:e}");
        }
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_spd(150, &mut rng);
        let l = Cholesky::factor(&s).unwrap();
        let back = l.l().gram().unwrap();
        assert!(back.sub(&s).unwrap().max_abs() < 1e-10 * s.max_abs());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let err = spd_solve(&s, &Matrix::ones(2, 1)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
        assert!(err.is_spd_failure());
    }

    #[test]
    fn shape_errors_are_distinct() {
        let s = Matrix::<f64>::identity(3);
        assert!(matches!(
            spd_solve(&s, &Matrix::ones(2, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            spd_solve(&Matrix::<f64>::zeros(2, 3), &Matrix::ones(2, 1)),
            Err(Error::NotSquare { .. })
        ));
        let asym = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]).unwrap();
        assert!(matches!(
            spd_solve(&asym, &Matrix::ones(2, 1)),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
