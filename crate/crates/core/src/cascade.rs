//! Cascades of packages: initialization, batched forward evaluation, the
//! joint training step and replication for several outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::linalg::{Cholesky, GramFactor, Matrix, Real};
use crate::package::{Package, PackageBatchState, PathChoice};

/// How the value matrices `Y` are filled when a cascade is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Uniform entries in `[-1, 1]`, each row scaled to unit length.
    #[default]
    Random,
    /// `Y = C` for every package with as many outputs as inputs, so those
    /// packages start as near-identity maps; random elsewhere.
    IdentityFragments,
}

/// Hyper-parameters shared by every package of a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub alpha: f64,
    pub kernel: KernelParams,
    pub sigma2: f64,
    pub init: InitMode,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            alpha: 1.0,
            kernel: KernelParams::default(),
            sigma2: 0.0,
            init: InitMode::Random,
        }
    }
}

/// Checks that `widths` (`n_0 .. n_q`) describes a sequential cascade with
/// a single output.
pub fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidWidths(format!(
            "need at least an input and an output width, got {widths:?}"
        )));
    }
    if let Some(pos) = widths.iter().position(|&w| w == 0) {
        return Err(Error::InvalidWidths(format!(
            "width {pos} is zero in {widths:?}"
        )));
    }
    if *widths.last().expect("non-empty") != 1 {
        return Err(Error::InvalidWidths(format!(
            "the last width must be 1, got {widths:?}"
        )));
    }
    Ok(())
}

/// A strict sequence of packages ending in a single output.
#[derive(Debug, Clone)]
pub struct Cascade<T: Real = f64> {
    packages: Vec<Package<T>>,
    widths: Vec<usize>,
    config: CascadeConfig,
}

/// Intermediates of one batch, consumed by [`Cascade::train_step`].
#[derive(Debug, Clone)]
pub struct CascadeWorkspace<T: Real = f64> {
    /// Per-package state, in cascade order.
    pub states: Vec<PackageBatchState<T>>,
    /// Cascade output `L` (`r x 1`).
    pub output: Matrix<T>,
}

impl<T: Real> CascadeWorkspace<T> {
    pub fn rows(&self) -> usize {
        self.output.rows()
    }
}

/// Diagnostics of one training step; norms are max-abs unless noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `|L* - L|` before the update.
    pub residual_before: f64,
    /// Root-mean-square of `L* - L` before the update.
    pub rms_before: f64,
    /// Residual predicted by the linearized model after the update,
    /// `|L* - L - sum(Omega) B| = alpha |B|`.
    pub linearized_after: f64,
    /// `|(sum(Omega) + alpha E) B - (L* - L)|`.
    pub solve_residual: f64,
    /// `|B|`.
    pub b_norm: f64,
}

impl<T: Real> Cascade<T> {
    /// Builds a cascade over octahedral constellations. `widths` lists
    /// `n_0 .. n_q` and must end in 1. Deterministic in `seed`.
    pub fn init(widths: &[usize], config: CascadeConfig, seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        if !(config.alpha >= 0.0) || !config.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {}",
                config.alpha
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut packages = Vec::with_capacity(widths.len() - 1);
        let mut any_identity = false;
        for w in widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let c = Constellation::octahedral_with_variance(n_in, config.sigma2)?;
            let y = if config.init == InitMode::IdentityFragments && n_in == n_out {
                any_identity = true;
                c.points()
            } else {
                random_values(c.len(), n_out, &mut rng)
            };
            packages.push(Package::new(c, y, config.kernel)?);
        }
        if config.init == InitMode::IdentityFragments && !any_identity {
            log::warn!(
                "identity-fragment initialization requested but no package in {widths:?} \
                 has equal input and output widths; all packages use random values"
            );
        }
        Ok(Cascade {
            packages,
            widths: widths.to_vec(),
            config,
        })
    }

    /// Assembles a cascade from existing packages (e.g. a loaded snapshot).
    pub fn from_packages(packages: Vec<Package<T>>, config: CascadeConfig) -> Result<Self> {
        let first = packages
            .first()
            .ok_or_else(|| Error::InvalidWidths("a cascade needs at least one package".into()))?;
        let mut widths = vec![first.n_in()];
        for p in &packages {
            if p.n_in() != *widths.last().expect("non-empty") {
                return Err(Error::InvalidWidths(format!(
                    "package with {} inputs follows width {}",
                    p.n_in(),
                    widths.last().expect("non-empty")
                )));
            }
            widths.push(p.n_out());
        }
        validate_widths(&widths)?;
        Ok(Cascade {
            packages,
            widths,
            config,
        })
    }

    pub fn packages(&self) -> &[Package<T>] {
        &self.packages
    }

    pub fn packages_mut(&mut self) -> &mut [Package<T>] {
        &mut self.packages
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.config.alpha = alpha;
    }

    pub fn depth(&self) -> usize {
        self.packages.len()
    }

    /// Number of trainable values (entries of all `Y`).
    pub fn parameter_count(&self) -> usize {
        self.packages.iter().map(|p| p.k() * p.n_out()).sum()
    }

    pub fn set_path_choice(&mut self, path: PathChoice) -> Result<()> {
        for p in &mut self.packages {
            p.set_path_choice(path)?;
        }
        Ok(())
    }

    /// Runs a batch `x0` (`r x n_0`) through every package, keeping the
    /// intermediates needed for a training step.
    pub fn forward_batch(&self, x0: &Matrix<T>) -> Result<CascadeWorkspace<T>> {
        self.check_input(x0)?;
        let (x1, s1) = self.packages[0].forward(x0)?;
        self.finish_forward(x1, s1)
    }

    /// Like [`Cascade::forward_batch`], starting from `H_1 = K_1 U_1`
    /// rows computed ahead of time for this batch.
    pub fn forward_batch_from_h1(&self, h1: Matrix<T>) -> Result<CascadeWorkspace<T>> {
        let (x1, s1) = self.packages[0].forward_from_h(h1)?;
        self.finish_forward(x1, s1)
    }

    fn finish_forward(
        &self,
        x1: Matrix<T>,
        s1: PackageBatchState<T>,
    ) -> Result<CascadeWorkspace<T>> {
        let mut states = Vec::with_capacity(self.packages.len());
        states.push(s1);
        let mut x = x1;
        for p in &self.packages[1..] {
            let (next, s) = p.forward(&x)?;
            states.push(s);
            x = next;
        }
        Ok(CascadeWorkspace { states, output: x })
    }

    /// Cascade output without retaining intermediates, evaluated in row
    /// chunks to bound memory.
    pub fn evaluate(&self, x0: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x0)?;
        let mut out = Vec::with_capacity(x0.rows());
        for start in (0..x0.rows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x0.rows());
            let mut x = self.packages[0].evaluate(&x0.row_block(start..end))?;
            for p in &self.packages[1..] {
                x = p.evaluate(&x)?;
            }
            out.extend_from_slice(x.as_slice());
        }
        Matrix::from_vec(x0.rows(), 1, out)
    }

    /// Output for rows whose first-package `H_1` is already known.
    pub fn evaluate_from_h1(&self, h1: &Matrix<T>) -> Result<Matrix<T>> {
        let mut x = h1.matmul(self.packages[0].y())?;
        for p in &self.packages[1..] {
            x = p.evaluate(&x)?;
        }
        Ok(x)
    }

    fn check_input(&self, x0: &Matrix<T>) -> Result<()> {
        if x0.cols() != self.widths[0] {
            return Err(Error::mismatch(
                "cascade input",
                x0.shape(),
                (x0.rows(), self.widths[0]),
            ));
        }
        if x0.rows() == 0 {
            return Err(Error::ZeroDimension(0));
        }
        Ok(())
    }

    /// One training step towards targets `lstar` (`r x 1`) for the batch
    /// held in `ws`.
    pub fn train_step(&mut self, ws: CascadeWorkspace<T>, lstar: &Matrix<T>) -> Result<StepReport> {
        self.train_step_with_gram(ws, lstar, None)
    }

    /// Training step that may reuse `H_1 H_1^T` computed elsewhere; it
    /// depends only on the batch inputs, so replicas can share it.
    pub fn train_step_with_gram(
        &mut self,
        mut ws: CascadeWorkspace<T>,
        lstar: &Matrix<T>,
        first_gram: Option<&Matrix<T>>,
    ) -> Result<StepReport> {
        let r = ws.rows();
        if lstar.shape() != (r, 1) {
            return Err(Error::mismatch("training targets", lstar.shape(), (r, 1)));
        }
        if ws.states.len() != self.packages.len() {
            return Err(Error::StaleState);
        }
        if let Some(g) = first_gram {
            if g.shape() != (r, r) {
                return Err(Error::mismatch("first-package Gram", g.shape(), (r, r)));
            }
        }
        let delta_l = lstar.sub(&ws.output)?;
        let q = self.packages.len();
        let grads = self.output_gradients(&ws, false)?;

        let mut hs = Vec::with_capacity(q);
        for (p, s) in self.packages.iter().zip(ws.states.iter_mut()) {
            p.ensure_h(s, p.default_path())?;
            hs.push(s.h.take().expect("filled by ensure_h"));
        }
        drop(ws.states);

        // sum of Omega_t = (H H^T) o (G G^T), in fixed package order, built
        // on the lower triangle and mirrored
        let mut system = Matrix::zeros(r, r);
        for (t, (h, g)) in hs.iter().zip(&grads).enumerate() {
            let factor = match (t, first_gram) {
                (0, Some(gram)) => GramFactor::Gram(gram),
                _ => GramFactor::Rows(h),
            };
            system.add_hadamard_grams_lower(factor, g)?;
        }
        system.mirror_lower();
        let alpha = T::cast(self.config.alpha);
        system.add_diagonal(alpha);
        let factor = Cholesky::factor_owned(system.clone())?;
        let b = factor.solve(&delta_l)?;
        drop(factor);

        // S B - dL, and the linearized residual dL - sum(Omega) B
        let sb = system.matmul(&b)?;
        drop(system);
        let solve_residual = sb.sub(&delta_l)?.max_abs().as_f64();
        let mut lin = delta_l.sub(&sb)?;
        lin.add_scaled_assign(alpha, &b)?;
        let linearized_after = lin.max_abs().as_f64();

        let deltas = hs
            .iter()
            .zip(&grads)
            .map(|(h, g)| h.matmul_tn(&g.scale_rows(b.as_slice())?))
            .collect::<Result<Vec<_>>>()?;
        for (p, d) in self.packages.iter_mut().zip(&deltas) {
            p.apply_delta(d)?;
        }

        let rms = (delta_l
            .as_slice()
            .iter()
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            / r as f64)
            .sqrt();
        Ok(StepReport {
            residual_before: delta_l.max_abs().as_f64(),
            rms_before: rms,
            linearized_after,
            solve_residual,
            b_norm: b.max_abs().as_f64(),
        })
    }

    /// Derivatives of each row's output with respect to every package
    /// output `X_1 .. X_q` (the last is all ones), computed by backward
    /// propagation through the batch held in `ws`. With `with_input`, the
    /// derivative with respect to the cascade input `X_0` is prepended.
    pub fn output_gradients(
        &self,
        ws: &CascadeWorkspace<T>,
        with_input: bool,
    ) -> Result<Vec<Matrix<T>>> {
        let q = self.packages.len();
        if ws.states.len() != q {
            return Err(Error::StaleState);
        }
        let first = usize::from(!with_input);
        let mut grads: Vec<Matrix<T>> = vec![Matrix::zeros(0, 0); q + 1];
        grads[q] = Matrix::ones(ws.rows(), 1);
        for t in (first..q).rev() {
            let p = &self.packages[t];
            grads[t] = p.backward(&grads[t + 1], &ws.states[t], p.default_path())?;
        }
        Ok(grads.split_off(first))
    }

    /// Output for values `x` entering package `start` (0-based), i.e. the
    /// tail of the cascade from that package on.
    pub fn evaluate_from(&self, start: usize, x: &Matrix<T>) -> Result<Matrix<T>> {
        let packages = self
            .packages
            .get(start..)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no package {start} in a cascade of depth {}",
                    self.depth()
                ))
            })?;
        let mut x = packages[0].evaluate(x)?;
        for p in &packages[1..] {
            x = p.evaluate(&x)?;
        }
        Ok(x)
    }

    /// The per-package matrices `Omega_t = (H_t H_t^T) o (G_t G_t^T)` for
    /// batch `x0`, whose regularized sum the training step solves with.
    /// Dense `r x r` each; meant for diagnostics on small batches.
    pub fn omegas(&self, x0: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let mut ws = self.forward_batch(x0)?;
        let grads = self.output_gradients(&ws, false)?;
        let mut out = Vec::with_capacity(self.packages.len());
        for ((p, s), g) in self.packages.iter().zip(ws.states.iter_mut()).zip(&grads) {
            let h = p.ensure_h(s, p.default_path())?;
            out.push(h.gram()?.hadamard(&g.gram()?)?);
        }
        Ok(out)
    }

    /// Forward pass and training step for one batch.
    pub fn step(&mut self, x0: &Matrix<T>, lstar: &Matrix<T>) -> Result<StepReport> {
        let ws = self.forward_batch(x0)?;
        self.train_step(ws, lstar)
    }

    /// `H_1` rows for inputs `x0`; they depend only on the inputs and the
    /// first constellation.
    pub fn first_h(&self, x0: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x0)?;
        first_h(&self.packages[0], x0)
    }
}

/// Rows processed at once when evaluating large inputs.
pub const EVAL_CHUNK: usize = 4096;

fn first_h<T: Real>(p: &Package<T>, x0: &Matrix<T>) -> Result<Matrix<T>> {
    let path = p.default_path();
    let m = p.squared_distances(x0, path)?;
    let k = crate::kernel::phi_matrix(&m, p.params())?;
    drop(m);
    p.h_from_k(&k, path)
}

/// Random `k x n` values: uniform in `[-1, 1]`, then each row scaled to
/// unit Euclidean length.
pub fn random_values<T: Real>(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let mut y = Matrix::zeros(k, n);
    for i in 0..k {
        loop {
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (dst, v) in y.row_mut(i).iter_mut().zip(&row) {
                    *dst = T::cast(v / norm);
                }
                break;
            }
        }
    }
    y
}

/// Target vector for one class: `+1` where `labels == class`, else `-1`.
pub fn one_vs_rest<T: Real>(labels: &[usize], class: usize) -> Matrix<T> {
    Matrix::from_fn(labels.len(), 1, |i, _| {
        if labels[i] == class {
            T::one()
        } else {
            -T::one()
        }
    })
}

/// Targets for all classes (`r x d`), columns as in [`one_vs_rest`].
pub fn one_hot_targets<T: Real>(labels: &[usize], classes: usize) -> Matrix<T> {
    Matrix::from_fn(labels.len(), classes, |i, j| {
        if labels[i] == j {
            T::one()
        } else {
            -T::one()
        }
    })
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(scores: &Matrix<T>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One independent single-output cascade per output dimension.
#[derive(Debug, Clone)]
pub struct MultiOutputCascade<T: Real = f64> {
    replicas: Vec<Cascade<T>>,
    threads: usize,
}

/// Per-replica diagnostics of one multi-output step.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepReport {
    pub replicas: Vec<StepReport>,
}

impl MultiStepReport {
    /// Largest pre-update residual over replicas.
    pub fn residual_before(&self) -> f64 {
        self.replicas
            .iter()
            .map(|r| r.residual_before)
            .fold(0.0, f64::max)
    }

    /// Root-mean-square pre-update residual over all replicas and rows.
    pub fn rms_before(&self) -> f64 {
        let n = self.replicas.len().max(1) as f64;
        (self
            .replicas
            .iter()
            .map(|r| r.rms_before.powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

impl<T: Real> MultiOutputCascade<T> {
    /// `outputs` replicas of the cascade `widths` (ending in 1); replica `i`
    /// is initialized with seed `seed + i`.
    pub fn init(
        widths: &[usize],
        outputs: usize,
        config: CascadeConfig,
        seed: u64,
    ) -> Result<Self> {
        if outputs == 0 {
            return Err(Error::InvalidArgument(
                "at least one output is required".into(),
            ));
        }
        let replicas = (0..outputs)
            .map(|i| Cascade::init(widths, config, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiOutputCascade {
            replicas,
            threads: 1,
        })
    }

    pub fn from_replicas(replicas: Vec<Cascade<T>>) -> Result<Self> {
        let first = replicas
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one replica is required".into()))?;
        for r in &replicas[1..] {
            if r.widths() != first.widths() || r.config() != first.config() {
                return Err(Error::InvalidArgument(
                    "replicas must share widths and hyper-parameters".into(),
                ));
            }
        }
        Ok(MultiOutputCascade {
            replicas,
            threads: 1,
        })
    }

    /// Caps the number of replicas trained or evaluated concurrently.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn replicas(&self) -> &[Cascade<T>] {
        &self.replicas
    }

    pub fn replicas_mut(&mut self) -> &mut [Cascade<T>] {
        &mut self.replicas
    }

    pub fn outputs(&self) -> usize {
        self.replicas.len()
    }

    pub fn widths(&self) -> &[usize] {
        self.replicas[0].widths()
    }

    pub fn config(&self) -> &CascadeConfig {
        self.replicas[0].config()
    }

    pub fn parameter_count(&self) -> usize {
        self.replicas.iter().map(Cascade::parameter_count).sum()
    }

    /// `H_1` rows for `x0`; identical for every replica.
    pub fn first_h(&self, x0: &Matrix<T>) -> Result<Matrix<T>> {
        self.replicas[0].first_h(x0)
    }

    /// Trains each replica on its target column, given per-replica
    /// workspaces from [`Cascade::forward_batch`].
    pub fn train_multi(
        &mut self,
        workspaces: Vec<CascadeWorkspace<T>>,
        targets: &Matrix<T>,
    ) -> Result<MultiStepReport> {
        if workspaces.len() != self.replicas.len() {
            return Err(Error::InvalidArgument(format!(
                "{} workspaces for {} replicas",
                workspaces.len(),
                self.replicas.len()
            )));
        }
        self.check_targets(targets, workspaces.first().map_or(0, |w| w.rows()))?;
        let jobs: Vec<_> = workspaces.into_iter().map(Some).collect();
        self.run_replicas(jobs, targets, |_, ws| ws.expect("one per replica"), None)
    }

    /// Forward pass and training step of every replica on one batch; the
    /// replica-independent first-package `H_1` and its Gram matrix are
    /// computed once.
    pub fn step(&mut self, x0: &Matrix<T>, targets: &Matrix<T>) -> Result<MultiStepReport> {
        let h1 = self.first_h(x0)?;
        self.step_from_h1(&h1, targets)
    }

    /// Like [`MultiOutputCascade::step`] for a batch whose `H_1` rows are
    /// already known.
    pub fn step_from_h1(&mut self, h1: &Matrix<T>, targets: &Matrix<T>) -> Result<MultiStepReport> {
        self.check_targets(targets, h1.rows())?;
        let gram = h1.gram()?;
        let jobs: Vec<Option<CascadeWorkspace<T>>> = vec![None; self.replicas.len()];
        self.run_replicas(
            jobs,
            targets,
            |c, _| c.forward_batch_from_h1(h1.clone()),
            Some(&gram),
        )
    }

    fn check_targets(&self, targets: &Matrix<T>, rows: usize) -> Result<()> {
        if targets.shape() != (rows, self.replicas.len()) {
            return Err(Error::mismatch(
                "multi-output targets",
                targets.shape(),
                (rows, self.replicas.len()),
            ));
        }
        Ok(())
    }

    fn run_replicas<F, W>(
        &mut self,
        jobs: Vec<Option<CascadeWorkspace<T>>>,
        targets: &Matrix<T>,
        prepare: F,
        gram: Option<&Matrix<T>>,
    ) -> Result<MultiStepReport>
    where
        F: Fn(&Cascade<T>, Option<CascadeWorkspace<T>>) -> W + Sync,
        W: IntoWorkspace<T>,
    {
        let train_one = |i: usize, c: &mut Cascade<T>, job: Option<CascadeWorkspace<T>>| {
            let ws = prepare(c, job).into_workspace()?;
            let lstar = Matrix::from_vec(targets.rows(), 1, targets.column(i))?;
            c.train_step_with_gram(ws, &lstar, gram)
        };
        let mut reports = Vec::with_capacity(self.replicas.len());
        if self.threads <= 1 {
            for (i, (c, job)) in self.replicas.iter_mut().zip(jobs).enumerate() {
                reports.push(train_one(i, c, job)?);
            }
        } else {
            let mut jobs: Vec<_> = jobs.into_iter().enumerate().collect();
            let mut replicas: Vec<_> = self.replicas.iter_mut().collect();
            while !replicas.is_empty() {
                let take = self.threads.min(replicas.len());
                let wave: Vec<_> = replicas.drain(..take).zip(jobs.drain(..take)).collect();
                let results: Vec<Result<StepReport>> = std::thread::scope(|s| {
                    let handles: Vec<_> = wave
                        .into_iter()
                        .map(|(c, (i, job))| {
                            let train_one = &train_one;
                            s.spawn(move || train_one(i, c, job))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("replica worker panicked"))
                        .collect()
                });
                for r in results {
                    reports.push(r?);
                }
            }
        }
        Ok(MultiStepReport { replicas: reports })
    }

    /// Replica outputs (`rows x d`), with the shared first-package kernel
    /// rows computed once per chunk.
    pub fn evaluate(&self, x0: &Matrix<T>) -> Result<Matrix<T>> {
        self.replicas[0].check_input(x0)?;
        let d = self.replicas.len();
        let mut out = Matrix::zeros(x0.rows(), d);
        for start in (0..x0.rows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x0.rows());
            let h1 = self.first_h(&x0.row_block(start..end))?;
            self.fill_outputs(&h1, start, &mut out)?;
        }
        Ok(out)
    }

    /// Replica outputs for rows with known `H_1`.
    pub fn evaluate_from_h1(&self, h1: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(h1.rows(), self.replicas.len());
        self.fill_outputs(h1, 0, &mut out)?;
        Ok(out)
    }

    fn fill_outputs(&self, h1: &Matrix<T>, start: usize, out: &mut Matrix<T>) -> Result<()> {
        for (j, c) in self.replicas.iter().enumerate() {
            let col = c.evaluate_from_h1(h1)?;
            for (i, &v) in col.as_slice().iter().enumerate() {
                out[(start + i, j)] = v;
            }
        }
        Ok(())
    }

    /// Class index per row: argmax over replica outputs, lowest index on
    /// ties.
    pub fn predict(&self, x0: &Matrix<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.evaluate(x0)?))
    }
}

/// Lets replica preparation return either a workspace or a result.
pub trait IntoWorkspace<T: Real> {
    fn into_workspace(self) -> Result<CascadeWorkspace<T>>;
}

impl<T: Real> IntoWorkspace<T> for CascadeWorkspace<T> {
    fn into_workspace(self) -> Result<CascadeWorkspace<T>> {
        Ok(self)
    }
}

impl<T: Real> IntoWorkspace<T> for Result<CascadeWorkspace<T>> {
    fn into_workspace(self) -> Result<CascadeWorkspace<T>> {
        self
    }
}
