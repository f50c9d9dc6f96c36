use super::{Matrix, Real};
use crate::error::{Error, Result};

/// LU factorization with partial pivoting, `P A = L U`.
///
/// Used where a general (not necessarily definite) square system has to be
/// inverted, such as the kernel matrix of an arbitrary constellation.
#[derive(Debug, Clone)]
pub struct Lu<T: Real = f64> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tiny = T::epsilon() * a.max_abs() * T::cast(n as f64);
        for col in 0..n {
            let (pivot_row, pivot_abs) =
                (col..n)
                    .map(|i| (i, lu[(i, col)].abs()))
                    .fold(
                        (col, T::zero()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if !(pivot_abs > tiny) {
                return Err(Error::Singular { column: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    let tmp = lu[(col, j)];
                    lu[(col, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                perm.swap(col, pivot_row);
            }
            let p = lu[(col, col)];
            let (head, tail) = lu.as_mut_slice().split_at_mut((col + 1) * n);
            let pivot_row = &head[col * n..];
            for row in tail.chunks_exact_mut(n) {
                let f = row[col] / p;
                row[col] = f;
                if f != T::zero() {
                    for (dst, &src) in row[col + 1..].iter_mut().zip(&pivot_row[col + 1..]) {
                        *dst -= f * src;
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.lu.rows();
        if rhs.rows() != n {
            return Err(Error::mismatch("lu solve", self.lu.shape(), rhs.shape()));
        }
        let m = rhs.cols();
        let mut x = rhs.select_rows(&self.perm);
        // forward substitution with unit lower triangle, all columns at once
        for i in 0..n {
            let (done, rest) = x.as_mut_slice().split_at_mut(i * m);
            let xi = &mut rest[..m];
            for k in 0..i {
                let l = self.lu[(i, k)];
                if l != T::zero() {
                    for (d, &s) in xi.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                        *d -= l * s;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = x.as_mut_slice().split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            for k in (i + 1)..n {
                let u = self.lu[(i, k)];
                if u != T::zero() {
                    let xk = &tail[(k - i - 1) * m..(k - i) * m];
                    for (d, &s) in xi.iter_mut().zip(xk) {
                        *d -= u * s;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for v in xi.iter_mut() {
                *v /= d;
            }
        }
        x.ensure_finite("lu solve")
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        self.solve(&Matrix::identity(self.lu.rows()))
    }
}

/// Inverse of a general square matrix.
pub fn invert<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(a)?.inverse()
}
