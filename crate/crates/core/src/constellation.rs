//! Constellations (the key points a package is specified on) and the
//! closed-form inverse kernel matrix of the hyperoctahedral constellation.
//!
//! The octahedral constellation in `n` dimensions is the origin followed by
//! `-e_1..-e_n` and then `+e_1..+e_n`, so `k = 2n + 1`. Its pairwise squared
//! distances only take the values 0, 1, 2 and 4, which lets the inverse
//! `U = (K_C + sigma2 I)^-1` be written as
//!
//! ```text
//!     [ u1        u2 1^T              ]
//! U = [ u2 1      b1 I + b2 P + b3 J  ]
//! ```
//!
//! where `P` swaps the `-e` and `+e` halves and `J` is all ones. Only the ten
//! scalars in [`OctaCoefficients`] are needed, independent of `n`.

use crate::error::{Error, Result};
use crate::kernel::{phi, phi_matrix, KernelParams};
use crate::linalg::{invert, Matrix, Real};

/// Squared distance at or below which two constellation points are
/// considered coincident (singular kernel matrix when `sigma2 == 0`).
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ConstellationKind<T: Real> {
    /// Hyperoctahedron plus center; points are implied, never stored.
    Octahedral,
    /// Arbitrary `k x n` point matrix.
    Explicit(Matrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T: Real = f64> {
    n: usize,
    kind: ConstellationKind<T>,
    sigma2: f64,
}

impl<T: Real> Constellation<T> {
    pub fn octahedral(n: usize) -> Result<Self> {
        Self::octahedral_with_variance(n, 0.0)
    }

    pub fn octahedral_with_variance(n: usize, sigma2: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroDimension(n));
        }
        check_sigma2(sigma2)?;
        Ok(Constellation {
            n,
            kind: ConstellationKind::Octahedral,
            sigma2,
        })
    }

    /// Wraps explicit points. With `sigma2 == 0` the points must be pairwise
    /// distinct (squared distance above [`COINCIDENCE_TOL`]).
    pub fn explicit(points: Matrix<T>, sigma2: f64) -> Result<Self> {
        let n = points.cols();
        if n == 0 || points.rows() == 0 {
            return Err(Error::ZeroDimension(n.min(points.rows())));
        }
        check_sigma2(sigma2)?;
        if sigma2 == 0.0 {
            for i in 0..points.rows() {
                for j in 0..i {
                    let d2: f64 = points
                        .row(i)
                        .iter()
                        .zip(points.row(j))
                        .map(|(&a, &b)| (a - b).as_f64().powi(2))
                        .sum();
                    if d2 <= COINCIDENCE_TOL {
                        return Err(Error::CoincidentPoints {
                            first: j,
                            second: i,
                            dist2: d2,
                        });
                    }
                }
            }
        }
        Ok(Constellation {
            n,
            kind: ConstellationKind::Explicit(points),
            sigma2,
        })
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        match &self.kind {
            ConstellationKind::Octahedral => 2 * self.n + 1,
            ConstellationKind::Explicit(c) => c.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn kind(&self) -> &ConstellationKind<T> {
        &self.kind
    }

    pub fn is_octahedral(&self) -> bool {
        matches!(self.kind, ConstellationKind::Octahedral)
    }

    /// The point matrix `C` (`k x n`).
    pub fn points(&self) -> Matrix<T> {
        match &self.kind {
            ConstellationKind::Explicit(c) => c.clone(),
            ConstellationKind::Octahedral => {
                let n = self.n;
                let mut c = Matrix::zeros(2 * n + 1, n);
                for i in 0..n {
                    c[(1 + i, i)] = -T::one();
                    c[(1 + n + i, i)] = T::one();
                }
                c
            }
        }
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be finite and non-negative, got {sigma2}"
        )));
    }
    Ok(())
}

/// Scalars that determine `U` for an octahedral constellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctaCoefficients {
    /// Kernel at squared distances 0, 1, 2 and 4.
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k4: f64,
    /// Schur complement `S = a1 I + a2 P + a3 J`.
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// `S^-1 = b1 I + b2 P + b3 J`.
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// Corner and border of `U`.
    pub u1: f64,
    pub u2: f64,
}

impl OctaCoefficients {
    pub fn derive(n: usize, p: &KernelParams, sigma2: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroDimension(n));
        }
        check_sigma2(sigma2)?;
        let k0 = phi(0.0, p)?;
        let k1 = phi(1.0, p)?;
        let k2 = phi(2.0, p)?;
        let k4 = phi(4.0, p)?;
        let d = k0 + sigma2;
        if d == 0.0 {
            return Err(Error::DegenerateKernel("k0 + sigma2 = 0"));
        }
        let a1 = k0 - k2 + sigma2;
        let a2 = k4 - k2;
        let a3 = k2 - k1 * k1 / d;
        let two_n = 2.0 * n as f64;
        let det = a1 * a1 - a2 * a2;
        if det == 0.0 {
            return Err(Error::DegenerateKernel("a1^2 = a2^2"));
        }
        if a1 + a2 == 0.0 {
            return Err(Error::DegenerateKernel("a1 + a2 = 0"));
        }
        if a1 + a2 + two_n * a3 == 0.0 {
            return Err(Error::DegenerateKernel("a1 + a2 + 2n a3 = 0"));
        }
        let b1 = a1 / det;
        let b2 = -a2 / det;
        let b3 = -a3 / ((a1 + a2 + two_n * a3) * (a1 + a2));
        let row_sum = b1 + b2 + two_n * b3;
        let u1 = 1.0 / d + k1 * k1 / (d * d) * two_n * row_sum;
        let u2 = -k1 / d * row_sum;
        let out = OctaCoefficients {
            k0,
            k1,
            k2,
            k4,
            a1,
            a2,
            a3,
            b1,
            b2,
            b3,
            u1,
            u2,
        };
        if [b1, b2, b3, u1, u2].iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateKernel("non-finite inverse coefficients"));
        }
        Ok(out)
    }

    /// Residuals of the three equations `S * S^-1 = I` imposes on the
    /// coefficients (all zero for an exact solution).
    pub fn inverse_residuals(&self, n: usize) -> [f64; 3] {
        let two_n = 2.0 * n as f64;
        let (a1, a2, a3, b1, b2, b3) = (self.a1, self.a2, self.a3, self.b1, self.b2, self.b3);
        [
            a1 * b1 + a2 * b2 - 1.0,
            a1 * b2 + a2 * b1,
            a1 * b3 + a2 * b3 + a3 * b1 + a3 * b2 + two_n * a3 * b3,
        ]
    }

    /// Sum of any row (or column) of `S^-1`.
    pub fn schur_inverse_row_sum(&self, n: usize) -> f64 {
        self.b1 + self.b2 + 2.0 * n as f64 * self.b3
    }
}

/// Assembles the dense `(2n+1) x (2n+1)` matrix `U` from its coefficients.
pub fn synthesize_u<T: Real>(co: &OctaCoefficients, n: usize) -> Matrix<T> {
    let k = 2 * n + 1;
    let (u1, u2) = (T::cast(co.u1), T::cast(co.u2));
    let (b1, b2, b3) = (T::cast(co.b1), T::cast(co.b2), T::cast(co.b3));
    Matrix::from_fn(k, k, |i, j| match (i, j) {
        (0, 0) => u1,
        (0, _) | (_, 0) => u2,
        _ => {
            let (p, q) = (i - 1, j - 1);
            let mut v = b3;
            if p == q {
                v += b1;
            }
            if p == (q + n) % (2 * n) {
                v += b2;
            }
            v
        }
    })
}

/// Pairwise squared distances between the rows of `c`.
pub fn constellation_distances<T: Real>(c: &Matrix<T>) -> Result<Matrix<T>> {
    let norms: Vec<T> = c
        .row_iter()
        .map(|r| r.iter().map(|&v| v * v).sum())
        .collect();
    let cross = c.gram()?;
    let k = c.rows();
    Ok(Matrix::from_fn(k, k, |i, j| {
        let m = norms[i] + norms[j] - (cross[(i, j)] + cross[(i, j)]);
        if i == j || m < T::zero() {
            T::zero()
        } else {
            m
        }
    }))
}

/// `U = (K_C + sigma2 I)^-1` by forming the kernel matrix of the points and
/// inverting it. Works for any constellation.
pub fn explicit_u<T: Real>(c: &Constellation<T>, p: &KernelParams) -> Result<Matrix<T>> {
    let m = constellation_distances(&c.points())?;
    let mut k = phi_matrix(&m, p)?;
    k.add_diagonal(T::cast(c.sigma2()));
    invert(&k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: KernelParams = KernelParams { b: 5.0, c: 400.0 };

    #[test]
    fn octahedral_points() {
        let c1 = Constellation::<f64>::octahedral(1).unwrap();
        assert_eq!(c1.points().as_slice(), &[0.0, -1.0, 1.0]);
        let c2 = Constellation::<f64>::octahedral(2).unwrap();
        let expect = [0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(c2.points().as_slice(), &expect);
        assert_eq!(Constellation::<f64>::octahedral(784).unwrap().len(), 1569);
        assert!(matches!(
            Constellation::<f64>::octahedral(0),
            Err(Error::ZeroDimension(0))
        ));
    }

    #[test]
    fn coefficient_reference_values() {
        let co = OctaCoefficients::derive(1, &P, 0.0).unwrap();
        assert!((co.a1 - 9.306853).abs() < 1e-5);
        assert!((co.a2 + 7.920559).abs() < 1e-5);
        assert!((co.a3 - 0.630647).abs() < 1e-5);
        assert!((co.b1 - 0.389698).abs() < 1e-5);
        assert!((co.b2 - 0.331651).abs() < 1e-5);
        assert!((co.b3 + 0.171823).abs() < 1e-5);
    }

    #[test]
    fn inverse_system_residuals_vanish() {
        for &n in &[1, 2, 3, 7, 50, 200, 10_000] {
            let co = OctaCoefficients::derive(n, &P, 0.0).unwrap();
            let r = co.inverse_residuals(n);
            assert!(r[0].abs() <= 1e-12 && r[1].abs() <= 1e-12, "n={n} {r:?}");
            assert!(r[2].abs() <= 1e-10, "n={n} {r:?}");
        }
    }

    #[test]
    fn degenerate_kernel_is_reported() {
        // b = 0, c = 0 gives k0 = 0, so k0 + sigma2 vanishes
        let p = KernelParams { b: 0.0, c: 0.0 };
        assert!(matches!(
            OctaCoefficients::derive(3, &p, 0.0),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn synthesized_u_structure() {
        let n = 3;
        let co = OctaCoefficients::derive(n, &P, 0.0).unwrap();
        let u = synthesize_u::<f64>(&co, n);
        assert_eq!(u, u.transpose());
        assert_eq!(u[(0, 0)], co.u1);
        assert_eq!(u[(0, 4)], co.u2);
        assert_eq!(u[(2, 2)], co.b1 + co.b3);
        // -e_1 (row 1) pairs with +e_1 (row 1 + n)
        assert_eq!(u[(1, 1 + n)], co.b2 + co.b3);
        assert_eq!(u[(1, 2)], co.b3);
    }

    #[test]
    fn constellation_distance_values() {
        let c = Constellation::<f64>::octahedral(2).unwrap();
        let m = constellation_distances(&c.points()).unwrap();
        for v in m.as_slice() {
            assert!([0.0, 1.0, 2.0, 4.0].contains(v), "{v}");
        }
        assert_eq!(m[(1, 3)], 4.0);
        assert_eq!(m[(0, 4)], 1.0);
        assert_eq!(m[(1, 2)], 2.0);
    }

    #[test]
    fn synthesized_matches_explicit_small() {
        for &n in &[1, 2, 3, 7] {
            let c = Constellation::<f64>::octahedral(n).unwrap();
            let ex = explicit_u(&c, &P).unwrap();
            let co = OctaCoefficients::derive(n, &P, 0.0).unwrap();
            let sy = synthesize_u::<f64>(&co, n);
            let rel = ex.sub(&sy).unwrap().max_abs() / ex.max_abs();
            assert!(rel <= 1e-8, "n={n} rel={rel:e}");
        }
    }

    #[test]
    fn explicit_constellation_checks() {
        let dup = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            Constellation::explicit(dup.clone(), 0.0),
            Err(Error::CoincidentPoints {
                first: 0,
                second: 2,
                ..
            })
        ));
        // a variance term makes the duplicate acceptable
        let c = Constellation::explicit(dup, 0.5).unwrap();
        assert!(explicit_u(&c, &P).is_ok());
    }

    #[test]
    fn variance_shifts_coefficients_consistently() {
        let n = 4;
        let c = Constellation::<f64>::octahedral_with_variance(n, 0.3).unwrap();
        let ex = explicit_u(&c, &P).unwrap();
        let co = OctaCoefficients::derive(n, &P, 0.3).unwrap();
        let sy = synthesize_u::<f64>(&co, n);
        assert!(ex.sub(&sy).unwrap().max_abs() / ex.max_abs() <= 1e-8);
    }
}
