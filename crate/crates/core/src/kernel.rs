//! Polyharmonic kernel on squared distances.
//!
//! `phi(m) = m/2 * (ln m - 2b) + c` maps a squared distance to a kernel
//! value; `theta(m) = ln m - 2b + 1` is twice its derivative and drives
//! backward propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};

/// Squared distances below this are clamped before taking the logarithm
/// in [`theta`]. The induced gradient error is `O(sqrt(eps) * ln eps)`.
pub const THETA_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub b: f64,
    pub c: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { b: 5.0, c: 400.0 }
    }
}

impl KernelParams {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !b.is_finite() || !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel coefficients must be finite (b={b}, c={c})"
            )));
        }
        Ok(KernelParams { b, c })
    }
}

#[inline]
fn phi_unchecked<T: Real>(m: T, b: T, c: T) -> T {
    if m == T::zero() {
        c
    } else {
        T::cast(0.5) * m * (m.ln() - (b + b)) + c
    }
}

#[inline]
fn theta_unchecked<T: Real>(m: T, b: T, eps: T) -> T {
    let m = if m < eps { eps } else { m };
    m.ln() - (b + b) + T::one()
}

fn check_distance<T: Real>(m: T) -> Result<()> {
    if m < T::zero() || m.is_nan() {
        return Err(Error::NegativeDistance { value: m.as_f64() });
    }
    Ok(())
}

/// Kernel value for one squared distance; `phi(0) = c` (the limit).
pub fn phi<T: Real>(m: T, p: &KernelParams) -> Result<T> {
    check_distance(m)?;
    Ok(phi_unchecked(m, T::cast(p.b), T::cast(p.c)))
}

/// `ln m - 2b + 1`, with `m` clamped to [`THETA_CLAMP`] first.
pub fn theta<T: Real>(m: T, p: &KernelParams) -> Result<T> {
    check_distance(m)?;
    Ok(theta_unchecked(m, T::cast(p.b), T::cast(THETA_CLAMP)))
}

pub fn phi_matrix<T: Real>(m: &Matrix<T>, p: &KernelParams) -> Result<Matrix<T>> {
    if let Some(&bad) = m.as_slice().iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::NegativeDistance {
            value: bad.as_f64(),
        });
    }
    let (b, c) = (T::cast(p.b), T::cast(p.c));
    m.map(|v| phi_unchecked(v, b, c)).ensure_finite("phi")
}

pub fn theta_matrix<T: Real>(m: &Matrix<T>, p: &KernelParams) -> Result<Matrix<T>> {
    if let Some(&bad) = m.as_slice().iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::NegativeDistance {
            value: bad.as_f64(),
        });
    }
    let b = T::cast(p.b);
    let eps = T::cast(THETA_CLAMP);
    m.map(|v| theta_unchecked(v, b, eps)).ensure_finite("theta")
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: KernelParams = KernelParams { b: 5.0, c: 400.0 };

    #[test]
    fn phi_reference_values() {
        assert_eq!(phi(0.0, &P).unwrap(), 400.0);
        assert_eq!(phi(1.0, &P).unwrap(), 395.0);
        // ln2 - 2b + c and 2(ln4 - 2b) + c
        assert!((phi(2.0f64, &P).unwrap() - 390.693_147_180_559_9).abs() < 1e-9);
        assert!((phi(4.0f64, &P).unwrap() - 382.772_588_722_239_8).abs() < 1e-9);
    }

    #[test]
    fn phi_rejects_negative() {
        assert!(matches!(
            phi(-1e-3, &P),
            Err(Error::NegativeDistance { .. })
        ));
        assert!(theta(-1.0, &P).is_err());
    }

    #[test]
    fn phi_matrix_values_and_shape() {
        let z = phi_matrix(&Matrix::<f64>::zeros(2, 3), &P).unwrap();
        assert_eq!(z, Matrix::filled(2, 3, 400.0));
        let m: Matrix = Matrix::from_rows(&[[0.0, 1.0], [1.0, 4.0]]).unwrap();
        let k = phi_matrix(&m, &P).unwrap();
        assert_eq!(k[(0, 0)], 400.0);
        assert_eq!(k[(0, 1)], 395.0);
        assert!((k[(1, 1)] - 382.772_588_722_239_8).abs() < 1e-9);
        let bad = Matrix::from_rows(&[[0.0, -2.0]]).unwrap();
        assert!(phi_matrix(&bad, &P).is_err());
    }

    #[test]
    fn phi_matrix_matches_scalar() {
        let m = Matrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64 * 0.37);
        let k = phi_matrix(&m, &P).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(k[(i, j)], phi(m[(i, j)], &P).unwrap());
            }
        }
    }

    #[test]
    fn theta_reference_values() {
        assert!(theta(9f64.exp(), &P).unwrap().abs() < 1e-12);
        assert_eq!(theta(1.0, &P).unwrap(), -9.0);
        // clamped at zero instead of diverging
        let t0 = theta(0.0, &P).unwrap();
        assert_eq!(t0, THETA_CLAMP.ln() - 9.0);
    }

    #[test]
    fn phi_continuous_at_zero() {
        assert!((phi(1e-300f64, &P).unwrap() - 400.0).abs() < 1e-6);
    }

    #[test]
    fn derivative_is_half_theta() {
        // central differences at log-spaced points in [1e-6, 1e4]; the
        // offset c does not affect the derivative and only costs precision
        let p = KernelParams { b: 5.0, c: 0.0 };
        let n = 120;
        for i in 0..n {
            let m = 10f64.powf(-6.0 + 10.0 * i as f64 / (n - 1) as f64);
            let h = 1e-6 * m;
            let fd = (phi(m + h, &p).unwrap() - phi(m - h, &p).unwrap()) / (2.0 * h);
            let an = 0.5 * theta(m, &p).unwrap();
            let rel = (fd - an).abs() / an.abs().max(1e-300);
            assert!(rel <= 1e-5, "m={m:e} fd={fd} an={an} rel={rel:e}");
        }
    }
}
