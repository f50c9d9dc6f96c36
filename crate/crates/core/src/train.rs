//! Epoch loop over a dataset, with optional first-package precompute and
//! per-epoch metrics.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    one_hot_targets, validate_widths, CascadeConfig, MultiOutputCascade, EVAL_CHUNK,
};
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};
use crate::metrics::{accuracy, roc_auc};

/// Header of the per-epoch metrics CSV.
pub const CSV_HEADER: &str = "epoch,train_metric,test_metric,residual,seconds";

/// Largest training subsample used for the per-epoch training metric.
pub const TRAIN_METRIC_ROWS: usize = 50_000;

/// Hyper-parameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `n_0 .. n_{q-1}`; the final single output of each replica is
    /// implicit.
    pub widths: Vec<usize>,
    /// Number of replicas: 1 for binary tasks, the class count otherwise.
    pub outputs: usize,
    pub cascade: CascadeConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Serve the first package from a table of `H_1` rows computed once.
    pub precompute_h1: bool,
    /// Reshuffle the training rows every epoch (seeded).
    pub shuffle: bool,
    /// Replicas trained concurrently.
    pub threads: usize,
    /// Cap on the training subsample used for the training metric.
    pub train_metric_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            widths: Vec::new(),
            outputs: 1,
            cascade: CascadeConfig::default(),
            epochs: 10,
            batch_size: 2000,
            seed: 0,
            precompute_h1: false,
            shuffle: true,
            threads: 1,
            train_metric_rows: TRAIN_METRIC_ROWS,
        }
    }
}

impl TrainConfig {
    /// Checks the configuration without touching any data.
    pub fn validate(&self) -> Result<()> {
        validate_widths(&self.cascade_widths())?;
        if self.outputs == 0 {
            return Err(Error::InvalidArgument("outputs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        let alpha = self.cascade.alpha;
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {alpha}"
            )));
        }
        // without the ridge term only a single package has a solvable system
        if alpha == 0.0 && self.widths.len() > 1 {
            return Err(Error::InvalidArgument(
                "alpha must be positive for cascades of more than one package".into(),
            ));
        }
        Ok(())
    }

    /// Per-replica widths including the final single output.
    pub fn cascade_widths(&self) -> Vec<usize> {
        let mut w = self.widths.clone();
        w.push(1);
        w
    }
}

/// Metrics after one epoch; epoch 0 describes the initialized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Accuracy (multi-class) or ROC AUC (binary) on a training subsample.
    pub train_metric: f64,
    /// The same metric on the full test split.
    pub test_metric: f64,
    /// Root-mean-square target residual seen by the epoch's training steps
    /// (for epoch 0: on the training subsample).
    pub residual: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// One CSV row matching [`CSV_HEADER`]; floats use the shortest
    /// round-trip representation.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?}",
            self.epoch, self.train_metric, self.test_metric, self.residual, self.seconds
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed metrics row: {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_metric: num(f[1])?,
            test_metric: num(f[2])?,
            residual: num(f[3])?,
            seconds: num(f[4])?,
        })
    }
}

/// What the labels ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Two classes, one replica, scored by ROC AUC.
    Binary,
    /// `d` classes, one replica each, scored by accuracy.
    Multiclass(usize),
}

impl Task {
    pub fn infer(train: &Dataset, outputs: usize) -> Result<Self> {
        match train.labels.classes() {
            None => Err(Error::InvalidArgument(
                "training needs class labels (non-negative integers); real-valued targets are not supported".into(),
            )),
            Some(c) => {
                let max = c.iter().copied().max().unwrap_or(0);
                match outputs {
                    1 if max <= 1 => Ok(Task::Binary),
                    1 => Err(Error::InvalidArgument(format!(
                        "one output requires binary labels, found class {max}"
                    ))),
                    d if max < d => Ok(Task::Multiclass(d)),
                    d => Err(Error::InvalidArgument(format!(
                        "{d} outputs cannot represent class {max}"
                    ))),
                }
            }
        }
    }

    /// `r x d` targets: `+1` for the true class and `-1` otherwise; binary
    /// tasks use class 1 as the positive.
    pub fn targets<T: Real>(&self, labels: &[usize]) -> Matrix<T> {
        match *self {
            Task::Binary => Matrix::from_fn(labels.len(), 1, |i, _| {
                if labels[i] == 1 {
                    T::one()
                } else {
                    -T::one()
                }
            }),
            Task::Multiclass(d) => one_hot_targets(labels, d),
        }
    }

    /// Metric of model outputs (`rows x d`) against labels.
    pub fn metric<T: Real>(&self, outputs: &Matrix<T>, labels: &[usize]) -> Result<f64> {
        match *self {
            Task::Binary => {
                let scores: Vec<f64> = outputs.as_slice().iter().map(|v| v.as_f64()).collect();
                let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                roc_auc(&scores, &pos)
            }
            Task::Multiclass(_) => accuracy(&crate::cascade::argmax_rows(outputs), labels),
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Binary => "roc_auc",
            Task::Multiclass(_) => "accuracy",
        }
    }
}

/// `H_1` rows for every training example, indexed by example.
#[derive(Debug, Clone)]
pub struct H1Table<T: Real> {
    table: Matrix<T>,
}

impl<T: Real> H1Table<T> {
    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    pub fn width(&self) -> usize {
        self.table.cols()
    }

    /// `H_1` rows for the given examples.
    pub fn select(&self, idx: &[usize]) -> Result<Matrix<T>> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.rows()) {
            return Err(Error::InvalidArgument(format!(
                "example {bad} is outside the precomputed table of {} rows",
                self.rows()
            )));
        }
        Ok(self.table.select_rows(idx))
    }
}

/// Computes `H_1` for every row of `d` once (table of `N x k_1` values).
pub fn precompute_h1<T: Real>(mc: &MultiOutputCascade<T>, d: &Dataset) -> Result<H1Table<T>> {
    let n0 = mc.widths()[0];
    if d.width() != n0 {
        return Err(Error::mismatch(
            "precompute H1",
            d.features.shape(),
            (d.len(), n0),
        ));
    }
    let k1 = mc.replicas()[0].packages()[0].k();
    let mut data = Vec::with_capacity(d.len() * k1);
    for start in (0..d.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(d.len());
        let x: Matrix<T> = d.features.row_block(start..end).cast();
        data.extend_from_slice(mc.first_h(&x)?.as_slice());
    }
    Ok(H1Table {
        table: Matrix::from_vec(d.len(), k1, data)?,
    })
}

/// Outputs of `mc` for all rows of `d`.
pub fn evaluate_dataset<T: Real>(mc: &MultiOutputCascade<T>, d: &Dataset) -> Result<Matrix<T>> {
    let mut out = Vec::with_capacity(d.len() * mc.outputs());
    for start in (0..d.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(d.len());
        let x: Matrix<T> = d.features.row_block(start..end).cast();
        out.extend_from_slice(mc.evaluate(&x)?.as_slice());
    }
    Matrix::from_vec(d.len(), mc.outputs(), out)
}

fn class_labels(d: &Dataset) -> Result<Vec<usize>> {
    d.labels.classes().ok_or_else(|| {
        Error::InvalidArgument("class labels (non-negative integers) required".into())
    })
}

/// Builds the model described by `cfg`.
pub fn init_model<T: Real>(cfg: &TrainConfig) -> Result<MultiOutputCascade<T>> {
    Ok(
        MultiOutputCascade::init(&cfg.cascade_widths(), cfg.outputs, cfg.cascade, cfg.seed)?
            .with_threads(cfg.threads),
    )
}

/// Trains a freshly initialized model on `train`, evaluating on `test`
/// after every epoch. `on_epoch` sees each record as soon as it exists.
pub fn run_training<T: Real>(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    on_epoch: impl FnMut(&EpochRecord, &MultiOutputCascade<T>) -> Result<()>,
) -> Result<(MultiOutputCascade<T>, Vec<EpochRecord>)> {
    let mut model = init_model::<T>(cfg)?;
    let records = train_model(&mut model, cfg, train, test, on_epoch)?;
    Ok((model, records))
}

/// Trains an existing model; see [`run_training`].
pub fn train_model<T: Real>(
    model: &mut MultiOutputCascade<T>,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord, &MultiOutputCascade<T>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "training and test splits must be non-empty".into(),
        ));
    }
    let task = Task::infer(train, cfg.outputs)?;
    let train_labels = class_labels(train)?;
    let test_labels = class_labels(test)?;
    if let Some(&bad) = test_labels.iter().find(|&&l| l >= cfg.outputs.max(2)) {
        return Err(Error::InvalidArgument(format!(
            "test label {bad} is out of range"
        )));
    }
    model.set_threads(cfg.threads);

    let started = Instant::now();
    let table = if cfg.precompute_h1 {
        let t = precompute_h1(model, train)?;
        log::info!(
            "precomputed H1: {} x {} ({:.1} MiB) in {:.1}s",
            t.rows(),
            t.width(),
            (t.rows() * t.width() * std::mem::size_of::<T>()) as f64 / (1 << 20) as f64,
            started.elapsed().as_secs_f64()
        );
        Some(t)
    } else {
        None
    };

    // fixed subsample for the training metric
    let mut sub: Vec<usize> = if train.len() <= cfg.train_metric_rows {
        (0..train.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
        sample(&mut rng, train.len(), cfg.train_metric_rows).into_vec()
    };
    sub.sort_unstable();
    let sub_labels: Vec<usize> = sub.iter().map(|&i| train_labels[i]).collect();
    let sub_data = train.select(&sub);

    let evaluate_train = |m: &MultiOutputCascade<T>| -> Result<Matrix<T>> {
        match &table {
            Some(t) => {
                let mut out = Vec::with_capacity(sub.len() * m.outputs());
                for chunk in sub.chunks(EVAL_CHUNK) {
                    out.extend_from_slice(m.evaluate_from_h1(&t.select(chunk)?)?.as_slice());
                }
                Matrix::from_vec(sub.len(), m.outputs(), out)
            }
            None => evaluate_dataset(m, &sub_data),
        }
    };

    let mut records = Vec::new();
    if cfg.epochs == 0 {
        let t0 = Instant::now();
        let train_out = evaluate_train(model)?;
        let targets: Matrix<T> = task.targets(&sub_labels);
        let diff = targets.sub(&train_out)?;
        let residual = (diff
            .as_slice()
            .iter()
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            / diff.as_slice().len() as f64)
            .sqrt();
        let rec = EpochRecord {
            epoch: 0,
            train_metric: task.metric(&train_out, &sub_labels)?,
            test_metric: task.metric(&evaluate_dataset(model, test)?, &test_labels)?,
            residual,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&rec, model)?;
        records.push(rec);
        return Ok(records);
    }

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let plan = batch_indices(
            train.len(),
            cfg.batch_size,
            cfg.seed.wrapping_add(epoch as u64),
            cfg.shuffle,
        )?;
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for (b, idx) in plan.iter().enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let targets: Matrix<T> = task.targets(&labels);
            let step = match &table {
                Some(t) => t
                    .select(idx)
                    .and_then(|h1| model.step_from_h1(&h1, &targets)),
                None => {
                    let x: Matrix<T> = train.features.select_rows(idx).cast();
                    model.step(&x, &targets)
                }
            };
            let rep = step.map_err(|e| Error::TrainingStep {
                epoch,
                batch: b,
                source: Box::new(e),
            })?;
            for r in &rep.replicas {
                sq_sum += r.rms_before.powi(2) * idx.len() as f64;
            }
            count += idx.len() * rep.replicas.len();
            log::debug!(
                "epoch {epoch} batch {b}: residual rms {:.4e} max {:.4e}",
                rep.rms_before(),
                rep.residual_before()
            );
        }
        let train_metric = task.metric(&evaluate_train(model)?, &sub_labels)?;
        let test_metric = task.metric(&evaluate_dataset(model, test)?, &test_labels)?;
        let rec = EpochRecord {
            epoch,
            train_metric,
            test_metric,
            residual: (sq_sum / count as f64).sqrt(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {} {:.5}, test {:.5}, residual {:.4e}, {:.1}s",
            task.metric_name(),
            rec.train_metric,
            rec.test_metric,
            rec.residual,
            rec.seconds
        );
        on_epoch(&rec, model)?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_shells, Labels};

    fn small_config() -> TrainConfig {
        TrainConfig {
            widths: vec![4, 6],
            outputs: 1,
            cascade: CascadeConfig {
                alpha: 1.0,
                ..CascadeConfig::default()
            },
            epochs: 3,
            batch_size: 64,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn splits() -> (Dataset, Dataset) {
        (synthetic_shells(400, 4, 1), synthetic_shells(200, 4, 2))
    }

    #[test]
    fn csv_rows_round_trip() {
        let r = EpochRecord {
            epoch: 7,
            train_metric: 0.1 + 0.2,
            test_metric: 1.0 / 3.0,
            residual: 1e-300,
            seconds: 12.5,
        };
        assert_eq!(EpochRecord::parse_csv_row(&r.csv_row()).unwrap(), r);
        assert_eq!(
            CSV_HEADER.split(',').count(),
            r.csv_row().split(',').count()
        );
    }

    #[test]
    fn zero_epochs_reports_initial_model() {
        let (train, test) = splits();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let (_, recs) = run_training::<f64>(&cfg, &train, &test, |_, _| Ok(())).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].epoch, 0);
        assert!((0.0..=1.0).contains(&recs[0].test_metric));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (train, test) = splits();
        let cfg = small_config();
        let mut seen = Vec::new();
        let (_, a) = run_training::<f64>(&cfg, &train, &test, |r, _| {
            seen.push(r.epoch);
            Ok(())
        })
        .unwrap();
        let (_, b) = run_training::<f64>(&cfg, &train, &test, |_, _| Ok(())).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        let strip = |v: &[EpochRecord]| -> Vec<(f64, f64, f64)> {
            v.iter()
                .map(|r| (r.train_metric, r.test_metric, r.residual))
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        assert!(a[2].test_metric > 0.8, "{a:?}");
    }

    #[test]
    fn precompute_matches_standard_path() {
        let (train, test) = splits();
        let cfg = small_config();
        let pre = TrainConfig {
            precompute_h1: true,
            ..cfg.clone()
        };
        let (_, a) = run_training::<f64>(&cfg, &train, &test, |_, _| Ok(())).unwrap();
        let (_, b) = run_training::<f64>(&pre, &train, &test, |_, _| Ok(())).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.test_metric - y.test_metric).abs() <= 1e-6);
            assert!((x.train_metric - y.train_metric).abs() <= 1e-6);
            assert!((x.residual - y.residual).abs() <= 1e-6 * x.residual.max(1.0));
        }
    }

    #[test]
    fn task_inference() {
        let (train, _) = splits();
        assert_eq!(Task::infer(&train, 1).unwrap(), Task::Binary);
        assert_eq!(Task::infer(&train, 3).unwrap(), Task::Multiclass(3));
        let multi = Dataset::new(Matrix::zeros(2, 1), Labels::Class(vec![0, 4])).unwrap();
        assert!(Task::infer(&multi, 1).is_err());
        assert!(Task::infer(&multi, 4).is_err());
        let real = Dataset::new(Matrix::zeros(2, 1), Labels::Real(vec![1.0, 0.0])).unwrap();
        assert_eq!(Task::infer(&real, 1).unwrap(), Task::Binary);
        let frac = Dataset::new(Matrix::zeros(2, 1), Labels::Real(vec![0.5, 0.0])).unwrap();
        assert!(Task::infer(&frac, 1).is_err());
        let t: Matrix = Task::Binary.targets(&[0, 1]);
        assert_eq!(t.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn spd_failure_names_its_coordinates() {
        let err = Error::TrainingStep {
            epoch: 1,
            batch: 0,
            source: Box::new(Error::NotPositiveDefinite {
                index: 3,
                pivot: -1e-9,
            }),
        };
        assert!(err.is_spd_failure());
        let msg = err.to_string();
        assert!(
            msg.contains("epoch 1, batch 0") && msg.contains("raise alpha"),
            "{msg}"
        );
        let other = Error::TrainingStep {
            epoch: 2,
            batch: 5,
            source: Box::new(Error::StaleState),
        };
        assert!(!other.is_spd_failure());
        assert!(!other.to_string().contains("alpha"));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig {
            widths: vec![4, 3],
            ..TrainConfig::default()
        };
        assert!(ok.validate().is_ok());
        let zero_alpha = |widths: Vec<usize>| TrainConfig {
            widths,
            cascade: CascadeConfig {
                alpha: 0.0,
                ..CascadeConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(zero_alpha(vec![4]).validate().is_ok());
        assert!(zero_alpha(vec![4, 3]).validate().is_err());
        assert!(TrainConfig {
            widths: vec![],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { outputs: 0, ..ok }.validate().is_err());
    }
}
