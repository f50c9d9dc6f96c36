//! Self-check battery: named numerical invariants with pass/fail detail.
//!
//! Each invariant compares two independent routes to the same quantity
//! (closed form against dense inversion, fast path against general path,
//! analytic against finite-difference derivatives, ...). The battery is
//! cheap enough to run as a release gate; [`Fault`] injects a known defect
//! to confirm that the checks bite.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::{Cascade, CascadeConfig};
use crate::constellation::{explicit_u, synthesize_u, Constellation, OctaCoefficients};
use crate::error::Result;
use crate::kernel::{phi_matrix, KernelParams};
use crate::linalg::{Cholesky, Matrix};
use crate::package::{
    distances_fast, distances_naive, grad_fast, grad_naive, h_fast, h_naive, lambda_fast,
    lambda_naive, psi, Package,
};

/// Tolerance for route-equivalence checks (relative max-norm).
pub const EQUIVALENCE_TOL: f64 = 1e-8;
/// Tolerance for analytic against central-difference derivatives.
pub const GRADIENT_TOL: f64 = 1e-4;
/// Shift used to test positive semi-definiteness by factorization.
pub const PSD_TOL: f64 = 1e-8;

/// Widths at which the closed-form `U` is checked.
pub const U_WIDTHS: [usize; 6] = [1, 2, 3, 7, 50, 200];
/// Widths and batch sizes of the fast-path grid.
pub const GRID_WIDTHS: [usize; 5] = [1, 2, 3, 7, 50];
pub const GRID_ROWS: [usize; 3] = [1, 5, 64];

/// Defects that can be injected to exercise the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs the `b3` coefficient of the closed-form inverse by 1%.
    CorruptB3,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random trials per (width, rows) cell of the fast-path grid.
    pub trials_per_cell: usize,
    /// Finite-difference probes in the gradient check.
    pub gradient_probes: usize,
    /// Random systems in the regularized-SPD check.
    pub spd_trials: usize,
    pub kernel: KernelParams,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            trials_per_cell: 20,
            gradient_probes: 100,
            spd_trials: 100,
            kernel: KernelParams::default(),
            fault: None,
        }
    }
}

/// Outcome of one invariant.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured value and, on failure, where it occurred.
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
}

impl Report {
    pub fn run_count(&self) -> usize {
        self.outcomes.len()
    }

    pub fn pass_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.pass_count() == self.run_count()
    }

    pub fn failed(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            writeln!(
                f,
                "{} {:<28} {} ({:.2}s)",
                if o.passed { "PASS" } else { "FAIL" },
                o.name,
                o.detail,
                o.seconds
            )?;
        }
        write!(
            f,
            "{} invariants run, {} passed",
            self.run_count(),
            self.pass_count()
        )
    }
}

/// What a single check returns: pass/fail and a description.
type Check = std::result::Result<String, String>;

/// Runs every invariant.
pub fn run(opts: &VerifyOptions) -> Report {
    type CheckFn = fn(&VerifyOptions) -> Result<Check>;
    let checks: [(&'static str, CheckFn); 11] = [
        ("closed-form-u", check_closed_form_u),
        ("fast-distances", check_fast_distances),
        ("fast-lambda", check_fast_lambda),
        ("fast-h", check_fast_h),
        ("fast-backward", check_fast_backward),
        ("gradient", check_gradient),
        ("interpolation", check_interpolation),
        ("single-package-fit", check_single_package_fit),
        ("omega-psd", check_omega_psd),
        ("regularized-spd", check_regularized_spd),
        ("identity-fragments", check_identity_fragments),
    ];
    let outcomes = checks
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check(opts) {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(e) => (false, format!("error: {e}")),
            };
            Outcome {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Report { outcomes }
}

/// `max|a - b| / max|b|` (absolute when `b` is zero).
pub fn relative_max_diff(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.max_abs();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

fn coefficients(n: usize, opts: &VerifyOptions) -> Result<OctaCoefficients> {
    let mut co = OctaCoefficients::derive(n, &opts.kernel, 0.0)?;
    if opts.fault == Some(Fault::CorruptB3) {
        co.b3 *= 1.01;
    }
    Ok(co)
}

/// Tracks the worst value of a metric over trials.
struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: 0.0,
            at: String::new(),
        }
    }

    fn record(&mut self, value: f64, at: impl FnOnce() -> String) {
        // NaN counts as worst
        if value > self.value || value.is_nan() {
            self.value = value;
            self.at = at();
        }
    }

    fn verdict(self, tol: f64, what: &str) -> Check {
        if self.value <= tol {
            Ok(format!("worst {what} {:.2e} <= {tol:.0e}", self.value))
        } else {
            Err(format!(
                "{what} {:.2e} > {tol:.0e} at {}",
                self.value, self.at
            ))
        }
    }
}

fn check_closed_form_u(opts: &VerifyOptions) -> Result<Check> {
    let mut worst = Worst::new();
    for n in U_WIDTHS {
        let fast: Matrix = synthesize_u(&coefficients(n, opts)?, n);
        let dense = explicit_u(&Constellation::octahedral(n)?, &opts.kernel)?;
        worst.record(relative_max_diff(&fast, &dense), || format!("n={n}"));
    }
    Ok(worst.verdict(EQUIVALENCE_TOL, "relative deviation"))
}

/// Runs `f(n, r, rng)` over the fast-path grid and reports the worst value.
fn over_grid(
    opts: &VerifyOptions,
    salt: u64,
    mut f: impl FnMut(usize, usize, &mut ChaCha8Rng) -> Result<f64>,
) -> Result<Check> {
    let mut worst = Worst::new();
    for n in GRID_WIDTHS {
        for r in GRID_ROWS {
            for trial in 0..opts.trials_per_cell {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    opts.seed ^ salt ^ ((n as u64) << 32) ^ ((r as u64) << 16) ^ trial as u64,
                );
                let v = f(n, r, &mut rng)?;
                worst.record(v, || format!("n={n} r={r} trial={trial}"));
            }
        }
    }
    Ok(worst.verdict(EQUIVALENCE_TOL, "relative deviation"))
}

fn check_fast_distances(opts: &VerifyOptions) -> Result<Check> {
    over_grid(opts, 0xd157, |n, r, rng| {
        let x = uniform(r, n, -1.5, 1.5, rng);
        let c = Constellation::<f64>::octahedral(n)?.points();
        Ok(relative_max_diff(
            &distances_fast(&x),
            &distances_naive(&x, &c)?,
        ))
    })
}

fn check_fast_lambda(opts: &VerifyOptions) -> Result<Check> {
    let dense: Vec<Matrix> = GRID_WIDTHS
        .iter()
        .map(|&n| explicit_u(&Constellation::octahedral(n)?, &opts.kernel))
        .collect::<Result<_>>()?;
    over_grid(opts, 0x1a3b, |n, r, rng| {
        let u = &dense[GRID_WIDTHS
            .iter()
            .position(|&w| w == n)
            .expect("grid width")];
        // r plays the role of the output width here
        let y = uniform(2 * n + 1, r, -1.0, 1.0, rng);
        Ok(relative_max_diff(
            &lambda_fast(&coefficients(n, opts)?, &y)?,
            &lambda_naive(u, &y)?,
        ))
    })
}

fn check_fast_h(opts: &VerifyOptions) -> Result<Check> {
    let dense: Vec<Matrix> = GRID_WIDTHS
        .iter()
        .map(|&n| explicit_u(&Constellation::octahedral(n)?, &opts.kernel))
        .collect::<Result<_>>()?;
    over_grid(opts, 0x4e11, |n, r, rng| {
        let u = &dense[GRID_WIDTHS
            .iter()
            .position(|&w| w == n)
            .expect("grid width")];
        let x = uniform(r, n, -1.0, 1.0, rng);
        let k = phi_matrix(&distances_fast(&x), &opts.kernel)?;
        Ok(relative_max_diff(
            &h_fast(&coefficients(n, opts)?, &k)?,
            &h_naive(&k, u)?,
        ))
    })
}

fn check_fast_backward(opts: &VerifyOptions) -> Result<Check> {
    over_grid(opts, 0xbac4, |n, r, rng| {
        let c = Constellation::<f64>::octahedral(n)?.points();
        let x = uniform(r, n, -1.0, 1.0, rng);
        let n_out = 3;
        let lambda = uniform(2 * n + 1, n_out, -1.0, 1.0, rng);
        let g_next = uniform(r, n_out, -1.0, 1.0, rng);
        let m = distances_fast(&x);
        let p = psi(&m, &g_next, &lambda, &opts.kernel)?;
        Ok(relative_max_diff(
            &grad_fast(&x, &p)?,
            &grad_naive(&x, &p, &c)?,
        ))
    })
}

/// Analytic derivatives of each output row with respect to the cascade
/// input (`G_0`) and the first package output (`G_1`) against central
/// differences, on a 5-4-3-1 cascade.
fn check_gradient(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x96ad);
    let config = CascadeConfig {
        kernel: opts.kernel,
        ..CascadeConfig::default()
    };
    let c = Cascade::<f64>::init(&[5, 4, 3, 1], config, rng.gen())?;
    let r = 8;
    let x0 = uniform(r, 5, -0.9, 0.9, &mut rng);
    let x1 = c.packages()[0].evaluate(&x0)?;
    let ws = c.forward_batch(&x0)?;
    let grads = c.output_gradients(&ws, true)?;
    let step = 1e-5;
    let mut worst = Worst::new();
    for probe in 0..opts.gradient_probes {
        // alternate between the input and the first package output
        let layer = probe % 2;
        let x = if layer == 0 { &x0 } else { &x1 };
        let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..x.cols()));
        let (mut up, mut down) = (x.clone(), x.clone());
        up[(i, j)] += step;
        down[(i, j)] -= step;
        let numeric = (c.evaluate_from(layer, &up)?[(i, 0)]
            - c.evaluate_from(layer, &down)?[(i, 0)])
            / (2.0 * step);
        let analytic = grads[layer][(i, j)];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst.record(rel, || {
            format!("G_{layer}[{i},{j}]: analytic {analytic:e}, numeric {numeric:e}")
        });
    }
    Ok(worst.verdict(GRADIENT_TOL, "relative error"))
}

/// With `sigma2 = 0`, a package evaluated at its constellation points
/// returns `Y`, for octahedral and for random explicit constellations.
fn check_interpolation(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1e7b);
    let mut worst = Worst::new();
    for n in [1, 2, 3, 7, 20] {
        let c = Constellation::octahedral(n)?;
        let y = uniform(c.len(), 3, -1.0, 1.0, &mut rng);
        let pts = c.points();
        let p = Package::new(c, y.clone(), opts.kernel)?;
        worst.record(p.evaluate(&pts)?.sub(&y)?.max_abs(), || {
            format!("octahedral n={n}")
        });
    }
    for (k, n) in [(5, 2), (12, 3), (30, 6)] {
        let pts = uniform(k, n, -1.0, 1.0, &mut rng);
        let c = Constellation::explicit(pts.clone(), 0.0)?;
        let y = uniform(k, 2, -1.0, 1.0, &mut rng);
        let p = Package::new(c, y.clone(), opts.kernel)?;
        worst.record(p.evaluate(&pts)?.sub(&y)?.max_abs(), || {
            format!("explicit k={k} n={n}")
        });
    }
    Ok(worst.verdict(EQUIVALENCE_TOL, "abs error"))
}

/// One package, no ridge: a single step interpolates 50 distinct rows.
fn check_single_package_fit(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xf17);
    let config = CascadeConfig {
        alpha: 0.0,
        kernel: opts.kernel,
        ..CascadeConfig::default()
    };
    // k = 61 points >= 50 rows keeps H H^T nonsingular
    let mut c = Cascade::<f64>::init(&[30, 1], config, rng.gen())?;
    let x0 = uniform(50, 30, -0.9, 0.9, &mut rng);
    let target = uniform(50, 1, -1.0, 1.0, &mut rng);
    c.step(&x0, &target)?;
    let err = c.evaluate(&x0)?.sub(&target)?.max_abs();
    let mut worst = Worst::new();
    worst.record(err, || "r=50".into());
    Ok(worst.verdict(1e-6, "residual"))
}

fn small_cascade(rng: &mut ChaCha8Rng, kernel: KernelParams, alpha: f64) -> Result<Cascade> {
    let depth = rng.gen_range(1..4);
    let mut widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..6)).collect();
    widths.push(1);
    let config = CascadeConfig {
        alpha,
        kernel,
        ..CascadeConfig::default()
    };
    Cascade::init(&widths, config, rng.gen())
}

/// Every `Omega_t` is positive semi-definite: `Omega_t + eps I` factors.
fn check_omega_psd(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x95d);
    for trial in 0..20 {
        let c = small_cascade(&mut rng, opts.kernel, 1.0)?;
        let r = rng.gen_range(1..=20);
        let x0 = uniform(r, c.widths()[0], -1.0, 1.0, &mut rng);
        for (t, mut o) in c.omegas(&x0)?.into_iter().enumerate() {
            o.add_diagonal(PSD_TOL);
            if Cholesky::factor_owned(o).is_err() {
                return Ok(Err(format!(
                    "Omega_{t} of trial {trial} (widths {:?}, r={r}) is indefinite",
                    c.widths()
                )));
            }
        }
    }
    Ok(Ok(
        "20 cascades, every Omega factors with a 1e-8 shift".into()
    ))
}

/// `sum(Omega) + alpha I` factors for alpha >= 1.
fn check_regularized_spd(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5bd);
    for trial in 0..opts.spd_trials {
        let alpha = rng.gen_range(1.0..10.0);
        let c = small_cascade(&mut rng, opts.kernel, alpha)?;
        let r = rng.gen_range(1..=40);
        let x0 = uniform(r, c.widths()[0], -1.0, 1.0, &mut rng);
        let mut s = Matrix::zeros(r, r);
        for o in c.omegas(&x0)? {
            s = s.add(&o)?;
        }
        s.add_diagonal(alpha);
        if let Err(e) = Cholesky::factor_owned(s) {
            return Ok(Err(format!("trial {trial} (alpha {alpha:.2}, r={r}): {e}")));
        }
    }
    Ok(Ok(format!("{} systems factored", opts.spd_trials)))
}

/// Ten equal-width packages with `Y = C` pass constellation points through
/// unchanged; drift of interior points is reported, not asserted.
fn check_identity_fragments(opts: &VerifyOptions) -> Result<Check> {
    let n = 4;
    let depth = 10;
    let c = Constellation::<f64>::octahedral(n)?;
    let pts = c.points();
    let packages: Vec<Package> = (0..depth)
        .map(|_| Package::new(c.clone(), pts.clone(), opts.kernel))
        .collect::<Result<_>>()?;
    let through = |x: &Matrix| -> Result<Matrix> {
        let mut x = x.clone();
        for p in &packages {
            x = p.evaluate(&x)?;
        }
        Ok(x)
    };
    let exact = through(&pts)?.sub(&pts)?.max_abs();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1d);
    let interior = uniform(32, n, -0.5, 0.5, &mut rng);
    let drift = through(&interior)?.sub(&interior)?.max_abs();
    let mut worst = Worst::new();
    worst.record(exact, || format!("depth {depth}"));
    Ok(worst
        .verdict(EQUIVALENCE_TOL, "abs error at points")
        .map(|d| format!("{d}; interior drift {drift:.3e}"))
        .map_err(|d| format!("{d}; interior drift {drift:.3e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(fault: Option<Fault>) -> VerifyOptions {
        VerifyOptions {
            trials_per_cell: 2,
            gradient_probes: 20,
            spd_trials: 10,
            fault,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn clean_battery_passes() {
        let report = run(&quick(None));
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.run_count(), 11);
        assert!(report.to_string().ends_with("11 invariants run, 11 passed"));
    }

    #[test]
    fn corrupted_coefficient_is_caught_and_named() {
        let report = run(&quick(Some(Fault::CorruptB3)));
        let u = report.get("closed-form-u").unwrap();
        assert!(!u.passed, "{report}");
        assert!(u.detail.contains("n="), "{}", u.detail);
        // the fault touches only the closed forms
        assert!(report.get("fast-distances").unwrap().passed);
        assert!(report.get("gradient").unwrap().passed);
    }

    #[test]
    fn relative_difference() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 4.0]]).unwrap();
        assert_eq!(relative_max_diff(&a, &b), 0.5);
        let z = Matrix::zeros(1, 2);
        assert_eq!(relative_max_diff(&a, &z), 2.0);
    }
}
