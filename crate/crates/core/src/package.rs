//! One cascade layer: a family of polyharmonic splines sharing a
//! constellation.
//!
//! Every heavy step exists twice: a general route that works for any
//! constellation through the dense point matrix `C` and inverse kernel
//! matrix `U`, and a fast route that exploits the octahedral layout. The
//! free functions in this module expose both routes directly; [`Package`]
//! dispatches between them through [`PathChoice`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::constellation::{explicit_u, Constellation, OctaCoefficients};
use crate::error::{Error, Result};
use crate::kernel::{phi_matrix, theta_matrix, KernelParams};
use crate::linalg::{Matrix, Real};

/// Which formulation an operation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// General constellation: dense `C` and `U`.
    Naive,
    /// Octahedral closed forms.
    Fast,
}

/// Path selection policy for a [`Package`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathChoice {
    /// Fast for octahedral constellations, naive otherwise.
    #[default]
    Auto,
    Force(Path),
}

static NEXT_PACKAGE_ID: AtomicU64 = AtomicU64::new(1);

fn check_width<T: Real>(x: &Matrix<T>, n: usize, op: &'static str) -> Result<()> {
    if x.cols() != n {
        return Err(Error::mismatch(op, x.shape(), (x.rows(), n)));
    }
    Ok(())
}

/// Squared distances from each row of `x` to each row of `c`, expanded as
/// `|x|^2 + |c|^2 - 2 x c^T`.
pub fn distances_naive<T: Real>(x: &Matrix<T>, c: &Matrix<T>) -> Result<Matrix<T>> {
    check_width(x, c.cols(), "squared distances")?;
    let mut m = x.matmul_nt(c)?;
    let cn: Vec<T> = c
        .row_iter()
        .map(|r| r.iter().map(|&v| v * v).sum())
        .collect();
    let two = T::cast(2.0);
    for (i, xr) in x.row_iter().enumerate() {
        let xn: T = xr.iter().map(|&v| v * v).sum();
        for (mv, &cv) in m.row_mut(i).iter_mut().zip(&cn) {
            // cancellation can leave tiny negatives where x sits on a point
            *mv = (xn + cv - two * *mv).max(T::zero());
        }
    }
    Ok(m)
}

/// Squared distances to the octahedral constellation of dimension
/// `x.cols()`: `[|x|^2, |x|^2 + 1 + 2x, |x|^2 + 1 - 2x]`.
pub fn distances_fast<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let n = x.cols();
    let k = 2 * n + 1;
    let mut m = Matrix::zeros(x.rows(), k);
    let two = T::cast(2.0);
    for (i, xr) in x.row_iter().enumerate() {
        let xn: T = xr.iter().map(|&v| v * v).sum();
        let base = xn + T::one();
        let out = m.row_mut(i);
        out[0] = xn;
        let (neg, pos) = out[1..].split_at_mut(n);
        for ((a, b), &v) in neg.iter_mut().zip(pos.iter_mut()).zip(xr) {
            *a = (base + two * v).max(T::zero());
            *b = (base - two * v).max(T::zero());
        }
    }
    m
}

/// `Lambda = U Y`.
pub fn lambda_naive<T: Real>(u: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    u.matmul(y)
}

/// `Lambda = U Y` from the octahedral coefficients, without forming `U`.
///
/// With `Y = [y1; Y1; Y2]` and `ys` the column sums of `[Y1; Y2]`:
/// the first row is `u1 y1 + u2 ys`, and the rest is
/// `b1 [Y1; Y2] + b2 [Y2; Y1] + (u2 y1 + b3 ys)` broadcast over rows.
pub fn lambda_fast<T: Real>(co: &OctaCoefficients, y: &Matrix<T>) -> Result<Matrix<T>> {
    let k = y.rows();
    if k < 3 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "octahedral value matrix needs 2n+1 rows, got {k}"
        )));
    }
    let n = (k - 1) / 2;
    let w = y.cols();
    let (u1, u2) = (T::cast(co.u1), T::cast(co.u2));
    let (b1, b2, b3) = (T::cast(co.b1), T::cast(co.b2), T::cast(co.b3));
    let y1 = y.row(0);
    let mut ys = vec![T::zero(); w];
    for i in 1..k {
        for (s, &v) in ys.iter_mut().zip(y.row(i)) {
            *s += v;
        }
    }
    let shift: Vec<T> = y1.iter().zip(&ys).map(|(&a, &s)| u2 * a + b3 * s).collect();
    let mut out = Matrix::zeros(k, w);
    for (o, (&a, &s)) in out.row_mut(0).iter_mut().zip(y1.iter().zip(&ys)) {
        *o = u1 * a + u2 * s;
    }
    for p in 0..2 * n {
        let partner = (p + n) % (2 * n);
        let own = y.row(1 + p);
        let other = y.row(1 + partner);
        let dst = out.row_mut(1 + p);
        for j in 0..w {
            dst[j] = b1 * own[j] + b2 * other[j] + shift[j];
        }
    }
    out.ensure_finite("lambda")
}

/// `H = K U`.
pub fn h_naive<T: Real>(k: &Matrix<T>, u: &Matrix<T>) -> Result<Matrix<T>> {
    k.matmul(u)
}

/// `H = K U` from the octahedral coefficients. With `K = [k1 K1 K2]` and
/// `ks` the row sums of `[K1 K2]`: first column `u1 k1 + u2 ks`, remaining
/// columns `b1 [K1 K2] + b2 [K2 K1] + (u2 k1 + b3 ks)`.
pub fn h_fast<T: Real>(co: &OctaCoefficients, k: &Matrix<T>) -> Result<Matrix<T>> {
    let kk = k.cols();
    if kk < 3 || kk % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "octahedral kernel matrix needs 2n+1 columns, got {kk}"
        )));
    }
    let n = (kk - 1) / 2;
    let (u1, u2) = (T::cast(co.u1), T::cast(co.u2));
    let (b1, b2, b3) = (T::cast(co.b1), T::cast(co.b2), T::cast(co.b3));
    let mut out = Matrix::zeros(k.rows(), kk);
    for (i, kr) in k.row_iter().enumerate() {
        let k1 = kr[0];
        let (left, right) = kr[1..].split_at(n);
        let ks: T = kr[1..].iter().copied().sum();
        let shift = u2 * k1 + b3 * ks;
        let dst = out.row_mut(i);
        dst[0] = u1 * k1 + u2 * ks;
        let (dl, dr) = dst[1..].split_at_mut(n);
        for j in 0..n {
            dl[j] = b1 * left[j] + b2 * right[j] + shift;
            dr[j] = b1 * right[j] + b2 * left[j] + shift;
        }
    }
    out.ensure_finite("h")
}

/// `Psi = Theta o (G Lambda^T)`.
pub fn psi<T: Real>(
    m: &Matrix<T>,
    g_next: &Matrix<T>,
    lambda: &Matrix<T>,
    p: &KernelParams,
) -> Result<Matrix<T>> {
    let theta = theta_matrix(m, p)?;
    theta.hadamard(&g_next.matmul_nt(lambda)?)
}

/// `G_prev = X o ((Psi 1) 1^T) - Psi C`.
pub fn grad_naive<T: Real>(x: &Matrix<T>, psi: &Matrix<T>, c: &Matrix<T>) -> Result<Matrix<T>> {
    if psi.cols() != c.rows() || psi.rows() != x.rows() {
        return Err(Error::mismatch("backward", psi.shape(), c.shape()));
    }
    let mut g = psi.matmul(c)?;
    let sums = psi.row_sums();
    for (i, xr) in x.row_iter().enumerate() {
        let s = sums.as_slice()[i];
        for (gv, &xv) in g.row_mut(i).iter_mut().zip(xr) {
            *gv = xv * s - *gv;
        }
    }
    g.ensure_finite("backward")
}

/// `G_prev = X o ((Psi 1) 1^T) + [Psi1 - Psi2]` for the octahedral layout.
pub fn grad_fast<T: Real>(x: &Matrix<T>, psi: &Matrix<T>) -> Result<Matrix<T>> {
    let n = x.cols();
    if psi.cols() != 2 * n + 1 || psi.rows() != x.rows() {
        return Err(Error::mismatch("backward", psi.shape(), x.shape()));
    }
    let mut g = Matrix::zeros(x.rows(), n);
    for (i, (xr, pr)) in x.row_iter().zip(psi.row_iter()).enumerate() {
        let s: T = pr.iter().copied().sum();
        let (p1, p2) = pr[1..].split_at(n);
        for (j, gv) in g.row_mut(i).iter_mut().enumerate() {
            *gv = xr[j] * s + p1[j] - p2[j];
        }
    }
    g.ensure_finite("backward")
}

/// Per-batch intermediates kept between the forward pass and training.
#[derive(Debug, Clone)]
pub struct PackageBatchState<T: Real = f64> {
    owner: (u64, u64),
    /// Batch input (`r x n_in`); absent when layer input was bypassed.
    pub x_in: Option<Matrix<T>>,
    /// Squared distances (`r x k`).
    pub m: Option<Matrix<T>>,
    /// Kernel values (`r x k`).
    pub k: Option<Matrix<T>>,
    /// `K U` (`r x k`), filled on demand or supplied precomputed.
    pub h: Option<Matrix<T>>,
}

impl<T: Real> PackageBatchState<T> {
    pub fn rows(&self) -> usize {
        [&self.m, &self.k, &self.h, &self.x_in]
            .iter()
            .find_map(|m| m.as_ref().map(|m| m.rows()))
            .unwrap_or(0)
    }
}

/// A package of polyharmonic splines: `n_out` functions of `n_in` inputs,
/// specified by their values `Y` at the constellation points.
#[derive(Debug)]
pub struct Package<T: Real = f64> {
    id: u64,
    version: u64,
    constellation: Constellation<T>,
    params: KernelParams,
    n_out: usize,
    coeffs: Option<OctaCoefficients>,
    u_dense: OnceLock<Matrix<T>>,
    y: Matrix<T>,
    lambda: Matrix<T>,
    path: PathChoice,
}

impl<T: Real> Clone for Package<T> {
    fn clone(&self) -> Self {
        let u_dense = OnceLock::new();
        if let Some(u) = self.u_dense.get() {
            let _ = u_dense.set(u.clone());
        }
        Package {
            id: NEXT_PACKAGE_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            constellation: self.constellation.clone(),
            params: self.params,
            n_out: self.n_out,
            coeffs: self.coeffs,
            u_dense,
            y: self.y.clone(),
            lambda: self.lambda.clone(),
            path: self.path,
        }
    }
}

impl<T: Real> Package<T> {
    /// Builds a package from its constellation and value matrix
    /// (`k x n_out`); `Lambda` is derived immediately.
    pub fn new(
        constellation: Constellation<T>,
        y: Matrix<T>,
        params: KernelParams,
    ) -> Result<Self> {
        Self::with_path(constellation, y, params, PathChoice::Auto)
    }

    pub fn with_path(
        constellation: Constellation<T>,
        y: Matrix<T>,
        params: KernelParams,
        path: PathChoice,
    ) -> Result<Self> {
        if y.rows() != constellation.len() {
            return Err(Error::mismatch(
                "package values",
                y.shape(),
                (constellation.len(), y.cols()),
            ));
        }
        if y.cols() == 0 {
            return Err(Error::ZeroDimension(0));
        }
        let coeffs = if constellation.is_octahedral() {
            Some(OctaCoefficients::derive(
                constellation.dim(),
                &params,
                constellation.sigma2(),
            )?)
        } else {
            None
        };
        if path == PathChoice::Force(Path::Fast) && coeffs.is_none() {
            return Err(Error::NotOctahedral);
        }
        let mut pkg = Package {
            id: NEXT_PACKAGE_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            n_out: y.cols(),
            constellation,
            params,
            coeffs,
            u_dense: OnceLock::new(),
            lambda: Matrix::zeros(0, 0),
            y,
            path,
        };
        if !pkg.constellation.is_octahedral() {
            pkg.u_matrix()?;
        }
        pkg.lambda = pkg.lambda_from_y(pkg.default_path())?;
        Ok(pkg)
    }

    pub fn n_in(&self) -> usize {
        self.constellation.dim()
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Number of constellation points.
    pub fn k(&self) -> usize {
        self.constellation.len()
    }

    pub fn constellation(&self) -> &Constellation<T> {
        &self.constellation
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn coefficients(&self) -> Option<&OctaCoefficients> {
        self.coeffs.as_ref()
    }

    pub fn y(&self) -> &Matrix<T> {
        &self.y
    }

    pub fn lambda(&self) -> &Matrix<T> {
        &self.lambda
    }

    pub fn path_choice(&self) -> PathChoice {
        self.path
    }

    pub fn set_path_choice(&mut self, path: PathChoice) -> Result<()> {
        if path == PathChoice::Force(Path::Fast) && self.coeffs.is_none() {
            return Err(Error::NotOctahedral);
        }
        self.path = path;
        Ok(())
    }

    /// Path used when the caller does not ask for one.
    pub fn default_path(&self) -> Path {
        match self.path {
            PathChoice::Force(p) => p,
            PathChoice::Auto if self.coeffs.is_some() => Path::Fast,
            PathChoice::Auto => Path::Naive,
        }
    }

    fn fast_coeffs(&self) -> Result<&OctaCoefficients> {
        self.coeffs.as_ref().ok_or(Error::NotOctahedral)
    }

    /// Dense `U`, computed on first use by inverting the kernel matrix of
    /// the constellation.
    pub fn u_matrix(&self) -> Result<&Matrix<T>> {
        if let Some(u) = self.u_dense.get() {
            return Ok(u);
        }
        let u = explicit_u(&self.constellation, &self.params)?;
        Ok(self.u_dense.get_or_init(|| u))
    }

    fn owner(&self) -> (u64, u64) {
        (self.id, self.version)
    }

    fn check_state(&self, state: &PackageBatchState<T>) -> Result<()> {
        if state.owner != self.owner() {
            return Err(Error::StaleState);
        }
        Ok(())
    }

    pub fn squared_distances(&self, x: &Matrix<T>, path: Path) -> Result<Matrix<T>> {
        check_width(x, self.n_in(), "squared distances")?;
        match path {
            Path::Naive => distances_naive(x, &self.constellation.points()),
            Path::Fast => {
                self.fast_coeffs()?;
                Ok(distances_fast(x))
            }
        }
    }

    /// Package outputs `K Lambda` for the batch `x`, plus the state needed
    /// for backward propagation and training.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, PackageBatchState<T>)> {
        self.forward_with(x, self.default_path())
    }

    pub fn forward_with(
        &self,
        x: &Matrix<T>,
        path: Path,
    ) -> Result<(Matrix<T>, PackageBatchState<T>)> {
        let m = self.squared_distances(x, path)?;
        let k = phi_matrix(&m, &self.params)?;
        let out = k.matmul(&self.lambda)?;
        Ok((
            out,
            PackageBatchState {
                owner: self.owner(),
                x_in: Some(x.clone()),
                m: Some(m),
                k: Some(k),
                h: None,
            },
        ))
    }

    /// Outputs without retaining any state.
    pub fn evaluate(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let m = self.squared_distances(x, self.default_path())?;
        phi_matrix(&m, &self.params)?.matmul(&self.lambda)
    }

    /// Outputs `H Y` for a batch whose `H = K U` rows were computed ahead of
    /// time; the state carries only `H`.
    pub fn forward_from_h(&self, h: Matrix<T>) -> Result<(Matrix<T>, PackageBatchState<T>)> {
        if h.cols() != self.k() {
            return Err(Error::mismatch(
                "forward from H",
                h.shape(),
                (h.rows(), self.k()),
            ));
        }
        let out = h.matmul(&self.y)?;
        Ok((
            out,
            PackageBatchState {
                owner: self.owner(),
                x_in: None,
                m: None,
                k: None,
                h: Some(h),
            },
        ))
    }

    /// `U Y` for the current values.
    pub fn lambda_from_y(&self, path: Path) -> Result<Matrix<T>> {
        match path {
            Path::Naive => lambda_naive(self.u_matrix()?, &self.y),
            Path::Fast => lambda_fast(self.fast_coeffs()?, &self.y),
        }
    }

    /// `K U` for a kernel matrix.
    pub fn h_from_k(&self, k: &Matrix<T>, path: Path) -> Result<Matrix<T>> {
        if k.cols() != self.k() {
            return Err(Error::mismatch("H from K", k.shape(), (k.rows(), self.k())));
        }
        match path {
            Path::Naive => h_naive(k, self.u_matrix()?),
            Path::Fast => h_fast(self.fast_coeffs()?, k),
        }
    }

    /// Fills `state.h` from `state.k` if needed and returns it. `K` is
    /// dropped afterwards; training does not need it again.
    pub fn ensure_h<'s>(
        &self,
        state: &'s mut PackageBatchState<T>,
        path: Path,
    ) -> Result<&'s Matrix<T>> {
        self.check_state(state)?;
        if state.h.is_none() {
            let k = state
                .k
                .take()
                .ok_or(Error::MissingState("kernel matrix K"))?;
            state.h = Some(self.h_from_k(&k, path)?);
        }
        Ok(state.h.as_ref().expect("filled above"))
    }

    /// Derivative of the scalar objective with respect to this package's
    /// input, given its derivative `g_next` (`r x n_out`) with respect to
    /// the package output.
    pub fn backward(
        &self,
        g_next: &Matrix<T>,
        state: &PackageBatchState<T>,
        path: Path,
    ) -> Result<Matrix<T>> {
        self.backward_with_psi(g_next, state, path).map(|(g, _)| g)
    }

    /// Like [`Package::backward`], also returning `Psi` for diagnostics.
    pub fn backward_with_psi(
        &self,
        g_next: &Matrix<T>,
        state: &PackageBatchState<T>,
        path: Path,
    ) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check_state(state)?;
        let m = state
            .m
            .as_ref()
            .ok_or(Error::MissingState("squared distances M"))?;
        let x = state.x_in.as_ref().ok_or(Error::MissingState("input X"))?;
        if g_next.rows() != m.rows() || g_next.cols() != self.n_out {
            return Err(Error::mismatch(
                "backward",
                g_next.shape(),
                (m.rows(), self.n_out),
            ));
        }
        let psi = psi(m, g_next, &self.lambda, &self.params)?;
        let g = match path {
            Path::Naive => grad_naive(x, &psi, &self.constellation.points())?,
            Path::Fast => {
                self.fast_coeffs()?;
                grad_fast(x, &psi)?
            }
        };
        Ok((g, psi))
    }

    /// Replaces the values and rederives `Lambda`. Outstanding batch states
    /// become stale.
    pub fn set_y(&mut self, y: Matrix<T>) -> Result<()> {
        if y.shape() != self.y.shape() {
            return Err(Error::mismatch("set values", y.shape(), self.y.shape()));
        }
        let old = std::mem::replace(&mut self.y, y);
        match self.lambda_from_y(self.default_path()) {
            Ok(l) => {
                self.lambda = l;
                self.version += 1;
                Ok(())
            }
            Err(e) => {
                self.y = old;
                Err(e)
            }
        }
    }

    /// `Y += delta`, then rederives `Lambda`.
    pub fn apply_delta(&mut self, delta: &Matrix<T>) -> Result<()> {
        self.set_y(self.y.add(delta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: KernelParams = KernelParams { b: 5.0, c: 400.0 };

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn package(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Package {
        let c = Constellation::octahedral(n_in).unwrap();
        let y = random(c.len(), n_out, rng);
        Package::new(c, y, P).unwrap()
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn distances_from_origin_and_hand_case() {
        let x = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(distances_fast(&x).as_slice(), &[0.0, 1.0, 1.0]);
        let x = Matrix::from_rows(&[[0.5, 0.0]]).unwrap();
        assert_eq!(
            distances_fast(&x).as_slice(),
            &[0.25, 2.25, 1.25, 0.25, 1.25]
        );
        let c = Constellation::<f64>::octahedral(2).unwrap().points();
        let naive = distances_naive(&x, &c).unwrap();
        assert!(naive.sub(&distances_fast(&x)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_and_fast_on_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pkg = package(3, 2, &mut rng);
        assert!(matches!(
            pkg.forward(&Matrix::zeros(4, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
        let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let ex = Package::new(
            Constellation::explicit(pts, 0.0).unwrap(),
            Matrix::ones(4, 1),
            P,
        )
        .unwrap();
        assert!(matches!(
            ex.squared_distances(&Matrix::zeros(1, 2), Path::Fast),
            Err(Error::NotOctahedral)
        ));
        assert_eq!(ex.default_path(), Path::Naive);
    }

    #[test]
    fn interpolates_at_constellation_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &n in &[1, 2, 5, 20] {
            let pkg = package(n, 3, &mut rng);
            let (out, _) = pkg.forward(&pkg.constellation().points()).unwrap();
            assert!(out.sub(pkg.y()).unwrap().max_abs() <= 1e-8, "n={n}");
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let c = Constellation::octahedral(4).unwrap();
        let pkg = Package::new(c, Matrix::zeros(9, 2), P).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = pkg.evaluate(&random(6, 4, &mut rng)).unwrap();
        assert_eq!(out, Matrix::zeros(6, 2));
    }

    #[test]
    fn identity_values_pass_inputs_through() {
        let c = Constellation::octahedral(1).unwrap();
        let y = c.points();
        let pkg = Package::new(c, y, P).unwrap();
        let x = 0.3;
        let out: Matrix = pkg.evaluate(&Matrix::from_rows(&[[x]]).unwrap()).unwrap();
        // Y = C is odd under x -> -x, so the centre coefficient vanishes and
        // the outer pair carries +-l with l (phi(0) - phi(4)) = 1.
        let f = |m: f64| 0.5 * m * (m.ln() - 10.0) + 400.0;
        let l = 1.0 / (400.0 - f(4.0));
        let oracle = l * (f((x - 1.0) * (x - 1.0)) - f((x + 1.0) * (x + 1.0)));
        assert!(
            (out[(0, 0)] - oracle).abs() < 1e-12,
            "{} vs {oracle}",
            out[(0, 0)]
        );
        // near-identity, not exact: the drift at 0.3 is about 1.2e-2
        assert!((out[(0, 0)] - x).abs() < 2e-2);
    }

    #[test]
    fn fast_and_naive_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &n in &[1, 3, 50] {
            for &r in &[1, 5, 64] {
                let pkg = package(n, 4, &mut rng);
                let x = random(r, n, &mut rng);
                let mf = pkg.squared_distances(&x, Path::Fast).unwrap();
                let mn = pkg.squared_distances(&x, Path::Naive).unwrap();
                assert!(mf.sub(&mn).unwrap().max_abs() <= 1e-10);
                let lf = pkg.lambda_from_y(Path::Fast).unwrap();
                let ln = pkg.lambda_from_y(Path::Naive).unwrap();
                assert!(rel(&lf, &ln) <= 1e-8);
                let k = phi_matrix(&mf, &P).unwrap();
                assert!(
                    rel(
                        &pkg.h_from_k(&k, Path::Fast).unwrap(),
                        &pkg.h_from_k(&k, Path::Naive).unwrap()
                    ) <= 1e-8
                );
                let (_, st) = pkg.forward(&x).unwrap();
                let g = random(r, 4, &mut rng);
                let gf = pkg.backward(&g, &st, Path::Fast).unwrap();
                let gn = pkg.backward(&g, &st, Path::Naive).unwrap();
                assert!(rel(&gf, &gn) <= 1e-8, "n={n} r={r}");
            }
        }
    }

    #[test]
    fn lambda_fast_first_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pkg = package(3, 2, &mut rng);
        let co = pkg.coefficients().unwrap();
        let ys = pkg.y().row_block(1..7).col_sums();
        let l = lambda_fast(co, pkg.y()).unwrap();
        for j in 0..2 {
            let expect = co.u1 * pkg.y()[(0, j)] + co.u2 * ys[(0, j)];
            assert!((l[(0, j)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn h_at_constellation_points_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pkg = package(4, 1, &mut rng);
        let (_, mut st) = pkg.forward(&pkg.constellation().points()).unwrap();
        let h = pkg.ensure_h(&mut st, Path::Fast).unwrap();
        assert!(h.sub(&Matrix::identity(9)).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pkg = package(3, 2, &mut rng);
        let x = random(5, 3, &mut rng);
        let (_, st) = pkg.forward(&x).unwrap();
        let g = pkg.backward(&Matrix::zeros(5, 2), &st, Path::Fast).unwrap();
        assert_eq!(g, Matrix::zeros(5, 3));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pkg = package(3, 1, &mut rng);
        let x = random(4, 3, &mut rng);
        let (_, st) = pkg.forward(&x).unwrap();
        let g = pkg.backward(&Matrix::ones(4, 1), &st, Path::Fast).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (pkg.evaluate(&xp).unwrap()[(i, 0)] - pkg.evaluate(&xm).unwrap()[(i, 0)])
                    / (2.0 * h);
                let err = (fd - g[(i, j)]).abs() / fd.abs().max(1e-3);
                assert!(err <= 1e-4, "({i},{j}) fd={fd} an={}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn stale_state_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pkg = package(2, 1, &mut rng);
        let x = random(3, 2, &mut rng);
        let (_, st) = pkg.forward(&x).unwrap();
        pkg.apply_delta(&Matrix::filled(5, 1, 0.1)).unwrap();
        assert!(matches!(
            pkg.backward(&Matrix::ones(3, 1), &st, Path::Fast),
            Err(Error::StaleState)
        ));
        let other = package(2, 1, &mut rng);
        let (_, st2) = other.forward(&x).unwrap();
        assert!(matches!(
            pkg.backward(&Matrix::ones(3, 1), &st2, Path::Fast),
            Err(Error::StaleState)
        ));
    }

    #[test]
    fn lambda_tracks_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut pkg = package(5, 3, &mut rng);
        let delta = random(11, 3, &mut rng);
        pkg.apply_delta(&delta).unwrap();
        let u = explicit_u(pkg.constellation(), &P).unwrap();
        let expect = u.matmul(pkg.y()).unwrap();
        assert!(rel(pkg.lambda(), &expect) <= 1e-8);
    }

    #[test]
    fn precomputed_h_forward_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pkg = package(6, 2, &mut rng);
        let x = random(7, 6, &mut rng);
        let (out, mut st) = pkg.forward(&x).unwrap();
        let h = pkg.ensure_h(&mut st, Path::Fast).unwrap().clone();
        let (out_h, st_h) = pkg.forward_from_h(h).unwrap();
        assert!(out.sub(&out_h).unwrap().max_abs() <= 1e-8 * out.max_abs());
        assert!(matches!(
            pkg.backward(&Matrix::ones(7, 2), &st_h, Path::Fast),
            Err(Error::MissingState(_))
        ));
    }
}
