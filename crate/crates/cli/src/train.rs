//! `train <config> [--dry-run]`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use polycascade::cascade::MultiOutputCascade;
use polycascade::data::fit_apply_transforms;
use polycascade::linalg::{Precision, Real};
use polycascade::snapshot;
use polycascade::train::{run_training, TrainConfig, CSV_HEADER};

use crate::config::RunConfig;
use crate::dataset::load_splits;
use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_FILE: &str = "model.phc";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.toml";

pub fn run(config_path: &Path, dry_run: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    cfg.check_paths()?;
    let tc = cfg.train_config();
    if dry_run {
        print!("{}", architecture(&tc));
        println!("config OK (dry run, nothing trained)");
        return Ok(());
    }

    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let effective = out.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&effective, cfg.to_toml()).map_err(|e| io_error(&effective, e))?;

    let (train, test) = load_splits(&cfg.data)?;
    if train.width() != tc.widths[0] {
        return Err(CliError::Config(format!(
            "model.widths starts with {} inputs but the data has {} features",
            tc.widths[0],
            train.width()
        )));
    }
    let spec = cfg.transform_spec();
    let (train, test, fitted) = fit_apply_transforms(&train, &test, &spec)?;
    log::info!(
        "{} training rows, {} test rows, {} features; {} parameters",
        train.len(),
        test.len(),
        train.width(),
        parameter_count(&tc)
    );

    match cfg.model.precision {
        Precision::F32 => train_with::<f32>(&cfg, &tc, &train, &test, &fitted),
        Precision::F64 => train_with::<f64>(&cfg, &tc, &train, &test, &fitted),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn core_io(path: PathBuf) -> impl FnOnce(std::io::Error) -> polycascade::Error {
    move |source| polycascade::Error::Io { path, source }
}

fn train_with<T: Real>(
    cfg: &RunConfig,
    tc: &TrainConfig,
    train: &polycascade::data::Dataset,
    test: &polycascade::data::Dataset,
    fitted: &polycascade::data::FittedTransform,
) -> Result<(), CliError> {
    let out = &cfg.output.dir;
    let csv_path = out.join(METRICS_FILE);
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?);
    writeln!(csv, "{CSV_HEADER}")
        .and_then(|()| csv.flush())
        .map_err(|e| io_error(&csv_path, e))?;
    let every = cfg.output.snapshot_every;

    let result = run_training::<T>(tc, train, test, |rec, model: &MultiOutputCascade<T>| {
        writeln!(csv, "{}", rec.csv_row())
            .and_then(|()| csv.flush())
            .map_err(core_io(csv_path.clone()))?;
        log::info!(
            "epoch {}: train {:.5}, test {:.5}, residual {:.4e} ({:.1}s)",
            rec.epoch,
            rec.train_metric,
            rec.test_metric,
            rec.residual,
            rec.seconds
        );
        if every > 0 && rec.epoch > 0 && rec.epoch % every == 0 {
            snapshot::save(
                out.join(format!("model-epoch-{:04}.phc", rec.epoch)),
                model,
                Some(fitted),
            )?;
        }
        Ok(())
    });
    let (model, records) = result?;
    let snap = out.join(SNAPSHOT_FILE);
    snapshot::save(&snap, &model, Some(fitted))?;
    if let Some(last) = records.last() {
        println!(
            "epoch {}: test metric {:.5}; metrics in {}, model in {}",
            last.epoch,
            last.test_metric,
            csv_path.display(),
            snap.display()
        );
    }
    Ok(())
}

fn parameter_count(tc: &TrainConfig) -> usize {
    tc.cascade_widths()
        .windows(2)
        .map(|w| (2 * w[0] + 1) * w[1])
        .sum::<usize>()
        * tc.outputs
}

/// Human-readable architecture summary.
pub fn architecture(tc: &TrainConfig) -> String {
    let widths = tc.cascade_widths();
    let mut s = format!(
        "architecture: {} x {} replica(s), alpha {}, batch {}, {} epoch(s)\n",
        widths
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("-"),
        tc.outputs,
        tc.cascade.alpha,
        tc.batch_size,
        tc.epochs
    );
    s.push_str("package  inputs  outputs  points(k)  parameters\n");
    for (t, w) in widths.windows(2).enumerate() {
        let k = 2 * w[0] + 1;
        s.push_str(&format!(
            "{:>7}  {:>6}  {:>7}  {:>9}  {:>10}\n",
            t + 1,
            w[0],
            w[1],
            k,
            k * w[1]
        ));
    }
    let per = parameter_count(tc) / tc.outputs;
    s.push_str(&format!(
        "parameters: {per} per replica, {} total\n",
        per * tc.outputs
    ));
    s
}
