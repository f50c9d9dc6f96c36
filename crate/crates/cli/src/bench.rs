//! `bench [--max-n N] [--batch-sizes R,..]`: octahedral closed forms
//! against the general dense routes.
//!
//! For every operation, width `n` and batch size `r`, both routes run
//! `repeats` times on the same inputs; the report holds median times and
//! the largest relative disagreement. For the `lambda` operation `r` is the
//! column count of the value matrix, since no batch is involved.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use polycascade::constellation::{synthesize_u, Constellation, OctaCoefficients};
use polycascade::kernel::{phi_matrix, KernelParams};
use polycascade::linalg::Matrix;
use polycascade::package::{
    distances_fast, distances_naive, grad_fast, grad_naive, h_fast, h_naive, lambda_fast,
    lambda_naive,
};
use polycascade::verify::EQUIVALENCE_TOL;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

pub const CSV_HEADER: &str = "op,n,r,fast_seconds,naive_seconds,speedup,max_rel_diff";
pub const OPS: [&str; 4] = ["distances", "lambda", "h", "backward"];

/// Largest dense operand (entries) any measurement may allocate.
const MAX_ENTRIES: usize = 1 << 26;

pub struct BenchArgs {
    pub max_n: usize,
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub op: &'static str,
    pub n: usize,
    pub r: usize,
    pub fast: f64,
    pub naive: f64,
    pub max_rel_diff: f64,
}

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.3},{:.3e}",
            self.op,
            self.n,
            self.r,
            self.fast,
            self.naive,
            self.naive / self.fast,
            self.max_rel_diff
        )
    }
}

/// Widths `1, 2, 4, ..` up to `max_n`, with `max_n` itself appended when it
/// is not a power of two.
pub fn widths(max_n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |&n| n.checked_mul(2))
        .take_while(|&n| n <= max_n)
        .collect();
    if v.last() != Some(&max_n) && max_n > 0 {
        v.push(max_n);
    }
    v
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let d = a.sub(b).map(|m| m.max_abs()).unwrap_or(f64::INFINITY);
    let s = b.max_abs();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// Times `f` `repeats` times; returns the median and the last result.
fn time<F: FnMut() -> polycascade::Result<Matrix>>(
    repeats: usize,
    mut f: F,
) -> polycascade::Result<(f64, Matrix)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let m = f()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(std::hint::black_box(m));
    }
    Ok((median(times), last.expect("at least one repeat")))
}

/// Measures one (op, n, r) combination; `None` when over the size cap.
pub fn measure(
    op: &'static str,
    n: usize,
    r: usize,
    repeats: usize,
    seed: u64,
) -> polycascade::Result<Option<Row>> {
    let k = 2 * n + 1;
    if k * k > MAX_ENTRIES || r * k > MAX_ENTRIES {
        return Ok(None);
    }
    let p = KernelParams::default();
    let co = OctaCoefficients::derive(n, &p, 0.0)?;
    let u: Matrix = synthesize_u(&co, n);
    let c = Constellation::<f64>::octahedral(n)?.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 20) ^ r as u64);
    let mut uniform =
        |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let ((fast, a), (naive, b)) = match op {
        "distances" => {
            let x = uniform(r, n);
            (
                time(repeats, || Ok(distances_fast(&x)))?,
                time(repeats, || distances_naive(&x, &c))?,
            )
        }
        "lambda" => {
            let y = uniform(k, r);
            (
                time(repeats, || lambda_fast(&co, &y))?,
                time(repeats, || lambda_naive(&u, &y))?,
            )
        }
        "h" => {
            let kmat = phi_matrix(&distances_fast(&uniform(r, n)), &p)?;
            (
                time(repeats, || h_fast(&co, &kmat))?,
                time(repeats, || h_naive(&kmat, &u))?,
            )
        }
        "backward" => {
            let x = uniform(r, n);
            let psi = uniform(r, k);
            (
                time(repeats, || grad_fast(&x, &psi))?,
                time(repeats, || grad_naive(&x, &psi, &c))?,
            )
        }
        other => {
            return Err(polycascade::Error::InvalidArgument(format!(
                "unknown operation {other}"
            )))
        }
    };
    Ok(Some(Row {
        op,
        n,
        r,
        fast,
        naive,
        max_rel_diff: rel_diff(&a, &b),
    }))
}

/// Smallest `n` at which the fast route's median beats the naive one.
pub fn crossover(rows: &[Row], op: &str, r: usize) -> Option<usize> {
    rows.iter()
        .filter(|x| x.op == op && x.r == r && x.fast < x.naive)
        .map(|x| x.n)
        .min()
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    if args.max_n == 0 {
        return Err(CliError::Config("--max-n must be at least 1".into()));
    }
    if args.batch_sizes.is_empty() || args.batch_sizes.contains(&0) {
        return Err(CliError::Config(
            "--batch-sizes must list positive sizes".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut csv = format!("{CSV_HEADER}\n");
    let mut skipped = 0;
    for &n in &widths(args.max_n) {
        for &r in &args.batch_sizes {
            for op in OPS {
                match measure(op, n, r, args.repeats, 0)? {
                    Some(row) => {
                        log::info!("{}", row.csv());
                        let _ = writeln!(csv, "{}", row.csv());
                        rows.push(row);
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    let mut summary = String::new();
    if skipped > 0 {
        let _ = writeln!(summary, "{skipped} combinations skipped by the size cap");
    }
    for &r in &args.batch_sizes {
        for op in OPS {
            let at = match crossover(&rows, op, r) {
                None => "none in range".to_string(),
                Some(n) if Some(n) == rows.iter().map(|x| x.n).min() => {
                    format!("n = {n} (fast already wins at the smallest width)")
                }
                Some(n) => format!("n = {n}"),
            };
            let _ = writeln!(summary, "crossover {op} (r = {r}): {at}");
        }
    }
    let disagreements: Vec<&Row> = rows
        .iter()
        .filter(|r| !(r.max_rel_diff <= EQUIVALENCE_TOL))
        .collect();
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            print!("{summary}");
        }
        None => {
            print!("{csv}");
            eprint!("{summary}");
        }
    }
    if disagreements.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = disagreements
            .iter()
            .map(|r| format!("{} n={} r={} ({:.2e})", r.op, r.n, r.r, r.max_rel_diff))
            .collect();
        Err(CliError::Failed(format!(
            "fast and naive routes disagree beyond {EQUIVALENCE_TOL:e}: {}",
            list.join("; ")
        )))
    }
}
