use std::fmt;
use std::ops::{Index, IndexMut, Range};

use super::Real;
use crate::error::{Error, Result};

/// Row-block height used when tiling symmetric products.
const GRAM_BLOCK: usize = 256;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::one())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::BadShape {
                op: "from_vec",
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::BadShape {
                    op: "from_rows",
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact panics on zero; an empty-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.push(self.data[i * self.cols + j]);
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: t,
        }
    }

    /// Copies rows `idx[0], idx[1], ...` into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies the column block `range` into a new matrix.
    pub fn column_block(&self, range: Range<usize>) -> Self {
        assert!(range.end <= self.cols, "column block out of range");
        let w = range.len();
        let mut data = Vec::with_capacity(self.rows * w);
        for r in self.row_iter() {
            data.extend_from_slice(&r[range.clone()]);
        }
        Matrix {
            rows: self.rows,
            cols: w,
            data,
        }
    }

    /// Copies the row block `range` into a new matrix.
    pub fn row_block(&self, range: Range<usize>) -> Self {
        assert!(range.end <= self.rows, "row block out of range");
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        )
    }

    /// Sum of each row, as an `r x 1` column.
    pub fn row_sums(&self) -> Self {
        let data = self.row_iter().map(|r| r.iter().copied().sum()).collect();
        Matrix {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Sum of each column, as a `1 x c` row.
    pub fn col_sums(&self) -> Self {
        let mut acc = vec![T::zero(); self.cols];
        for r in self.row_iter() {
            for (a, &v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: acc,
        }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::mismatch(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .ensure_finite(op)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self += s * other`.
    pub fn add_scaled_assign(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        if !self.is_finite() {
            return Err(Error::NonFinite { op: "add_scaled" });
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Adds `s` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&mut self, s: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    /// Scales row `i` by `s[i]` (i.e. `diag(s) * self`).
    pub fn scale_rows(&self, s: &[T]) -> Result<Self> {
        if s.len() != self.rows {
            return Err(Error::mismatch("scale_rows", self.shape(), (s.len(), 1)));
        }
        let mut out = self.clone();
        for (i, &si) in s.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= si;
            }
        }
        out.ensure_finite("scale_rows")
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::mismatch("matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        // SAFETY: shapes checked above; `out` is a fresh allocation.
        unsafe {
            gemm_into(
                self.rows,
                self.cols,
                other.cols,
                (self.data.as_ptr(), self.cols as isize, 1),
                (other.data.as_ptr(), other.cols as isize, 1),
                (out.data.as_mut_ptr(), out.cols as isize, 1),
                T::zero(),
            );
        }
        out.ensure_finite("matmul")
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::mismatch("matmul_nt", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        // SAFETY: other^T is read through swapped strides.
        unsafe {
            gemm_into(
                self.rows,
                self.cols,
                other.rows,
                (self.data.as_ptr(), self.cols as isize, 1),
                (other.data.as_ptr(), 1, other.cols as isize),
                (out.data.as_mut_ptr(), out.cols as isize, 1),
                T::zero(),
            );
        }
        out.ensure_finite("matmul_nt")
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::mismatch("matmul_tn", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        // SAFETY: self^T is read through swapped strides.
        unsafe {
            gemm_into(
                self.cols,
                self.rows,
                other.cols,
                (self.data.as_ptr(), 1, self.cols as isize),
                (other.data.as_ptr(), other.cols as isize, 1),
                (out.data.as_mut_ptr(), out.cols as isize, 1),
                T::zero(),
            );
        }
        out.ensure_finite("matmul_tn")
    }

    /// Symmetric product `self * self^T`.
    ///
    /// Only the lower block triangle is computed; the upper triangle is a
    /// mirror copy, so the result is exactly symmetric.
    pub fn gram(&self) -> Result<Self> {
        let r = self.rows;
        let k = self.cols;
        let mut out = Self::zeros(r, r);
        let a = self.data.as_ptr();
        let c = out.data.as_mut_ptr();
        for i0 in (0..r).step_by(GRAM_BLOCK) {
            let i1 = (i0 + GRAM_BLOCK).min(r);
            // SAFETY: every block lies inside `self` / `out`; blocks written
            // here are disjoint from the rows of `self` being read.
            unsafe {
                gemm_into(
                    i1 - i0,
                    k,
                    i1,
                    (a.add(i0 * k), k as isize, 1),
                    (a, 1, k as isize),
                    (c.add(i0 * r), r as isize, 1),
                    T::zero(),
                );
            }
        }
        out.mirror_lower();
        out.ensure_finite("gram")
    }

    /// Copies the strict lower triangle onto the upper one (square only).
    pub fn mirror_lower(&mut self) {
        let n = self.rows;
        debug_assert_eq!(n, self.cols);
        const TILE: usize = 32;
        for i0 in (0..n).step_by(TILE) {
            for j0 in (0..=i0).step_by(TILE) {
                for i in i0..(i0 + TILE).min(n) {
                    for j in j0..(j0 + TILE).min(i) {
                        self.data[j * n + i] = self.data[i * n + j];
                    }
                }
            }
        }
    }

    /// `self += (A A^T) o (B B^T)` on the lower triangle (diagonal
    /// included) of the square `self`, where `A A^T` is either computed
    /// from `a` or supplied. Works tile by tile, so no `r x r` temporaries
    /// are formed.
    pub fn add_hadamard_grams_lower(&mut self, a: GramFactor<'_, T>, b: &Self) -> Result<()> {
        let r = self.rows;
        if self.cols != r || b.rows != r {
            return Err(Error::mismatch("hadamard gram", self.shape(), b.shape()));
        }
        match a {
            GramFactor::Rows(m) if m.rows != r => {
                return Err(Error::mismatch("hadamard gram", self.shape(), m.shape()))
            }
            GramFactor::Gram(g) if g.shape() != (r, r) => {
                return Err(Error::mismatch("hadamard gram", self.shape(), g.shape()))
            }
            _ => {}
        }
        let mut ta = vec![T::zero(); GRAM_BLOCK * GRAM_BLOCK];
        let mut tb = vec![T::zero(); GRAM_BLOCK * GRAM_BLOCK];
        for i0 in (0..r).step_by(GRAM_BLOCK) {
            let i1 = (i0 + GRAM_BLOCK).min(r);
            for j0 in (0..i1).step_by(GRAM_BLOCK) {
                let j1 = (j0 + GRAM_BLOCK).min(i1);
                let (h, w) = (i1 - i0, j1 - j0);
                tile_product(b, i0, j0, h, w, &mut tb);
                let ga: &[T] = match a {
                    GramFactor::Rows(m) => {
                        tile_product(m, i0, j0, h, w, &mut ta);
                        &ta
                    }
                    GramFactor::Gram(_) => &[],
                };
                for i in i0..i1 {
                    let jmax = j1.min(i + 1);
                    if jmax <= j0 {
                        continue;
                    }
                    let ti = (i - i0) * w;
                    let row = &mut self.data[i * r + j0..i * r + jmax];
                    let bt = &tb[ti..ti + (jmax - j0)];
                    match a {
                        GramFactor::Rows(_) => {
                            let at = &ga[ti..ti + (jmax - j0)];
                            for ((dst, &x), &y) in row.iter_mut().zip(at).zip(bt) {
                                *dst += x * y;
                            }
                        }
                        GramFactor::Gram(g) => {
                            let gr = &g.data[i * r + j0..i * r + jmax];
                            for ((dst, &x), &y) in row.iter_mut().zip(gr).zip(bt) {
                                *dst += x * y;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// The first factor of [`Matrix::add_hadamard_grams_lower`].
#[derive(Debug, Clone, Copy)]
pub enum GramFactor<'a, T: Real> {
    /// Rows whose Gram matrix is needed.
    Rows(&'a Matrix<T>),
    /// An already computed Gram matrix (only its lower triangle is read).
    Gram(&'a Matrix<T>),
}

/// `out[..h*w] = m[i0..i0+h] * m[j0..j0+w]^T`, row-major `h x w`.
fn tile_product<T: Real>(m: &Matrix<T>, i0: usize, j0: usize, h: usize, w: usize, out: &mut [T]) {
    let k = m.cols;
    if k == 0 {
        out[..h * w].fill(T::zero());
        return;
    }
    let p = m.data.as_ptr();
    // SAFETY: row ranges lie inside `m`; `out` holds at least `h * w`.
    unsafe {
        gemm_into(
            h,
            k,
            w,
            (p.add(i0 * k), k as isize, 1),
            (p.add(j0 * k), 1, k as isize),
            (out.as_mut_ptr(), w as isize, 1),
            T::zero(),
        );
    }
}

/// `C <- A * B + beta * C` with `(ptr, row stride, col stride)` operands.
///
/// # Safety
/// See [`Real::gemm`].
pub(crate) unsafe fn gemm_into<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: (*const T, isize, isize),
    b: (*const T, isize, isize),
    c: (*mut T, isize, isize),
    beta: T,
) {
    if m == 0 || n == 0 {
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.0,
        a.1,
        a.2,
        b.0,
        b.1,
        b.2,
        beta,
        c.0,
        c.1,
        c.2,
    );
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for (i, r) in self.row_iter().enumerate() {
            if i == 8 && self.rows > 10 {
                writeln!(f, "  ... {} more rows", self.rows - 8)?;
                break;
            }
            let shown: Vec<String> = r.iter().take(8).map(|v| format!("{v:.6}")).collect();
            let tail = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), tail)?;
        }
        write!(f, "]")
    }
}
