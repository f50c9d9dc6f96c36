//! `eval <snapshot> <dataset>`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use polycascade::cascade::argmax_rows;
use polycascade::data::Dataset;
use polycascade::snapshot::{self, Snapshot};
use polycascade::train::{evaluate_dataset, Task};

use crate::config::RunConfig;
use crate::dataset::{load_one, load_splits};
use crate::error::CliError;

pub struct EvalArgs {
    pub snapshot: PathBuf,
    pub dataset: PathBuf,
    pub labels: Option<PathBuf>,
    pub label_column: usize,
    pub delimiter: char,
    pub predictions: Option<PathBuf>,
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if !args.snapshot.is_file() {
        return Err(CliError::Io(format!(
            "snapshot not found: {}",
            args.snapshot.display()
        )));
    }
    let snap: Snapshot = snapshot::load(&args.snapshot)?;
    let raw = if args.dataset.extension().is_some_and(|e| e == "toml") {
        let cfg = RunConfig::load(&args.dataset)?;
        cfg.check_paths()?;
        load_splits(&cfg.data)?.1
    } else {
        if !args.dataset.is_file() {
            return Err(CliError::Io(format!(
                "dataset not found: {}",
                args.dataset.display()
            )));
        }
        load_one(
            &args.dataset,
            args.labels.as_deref(),
            args.label_column,
            args.delimiter,
        )?
    };
    let data = match &snap.transform {
        Some(t) => t.apply(&raw)?,
        None => raw,
    };
    let (name, value, outputs) = score(&snap, &data)?;
    println!("rows {}, {name} {value:.6}", data.len());
    if let Some(path) = &args.predictions {
        write_predictions(path, &outputs)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn score(
    snap: &Snapshot,
    data: &Dataset,
) -> Result<(&'static str, f64, polycascade::linalg::Matrix), CliError> {
    let model = &snap.model;
    if data.width() != model.widths()[0] {
        return Err(CliError::Config(format!(
            "the model expects {} features, the dataset has {}",
            model.widths()[0],
            data.width()
        )));
    }
    let task = Task::infer(data, model.outputs())?;
    let labels = data
        .labels
        .classes()
        .ok_or_else(|| CliError::Config("evaluation needs class labels".into()))?;
    let outputs = evaluate_dataset(model, data)?;
    Ok((task.metric_name(), task.metric(&outputs, &labels)?, outputs))
}

fn write_predictions(
    path: &std::path::Path,
    outputs: &polycascade::linalg::Matrix,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = outputs.cols();
    let header: Vec<String> = (0..d).map(|j| format!("score_{j}")).collect();
    writeln!(w, "row,{},predicted", header.join(","))?;
    let classes = if d > 1 {
        argmax_rows(outputs)
    } else {
        outputs
            .as_slice()
            .iter()
            .map(|&s| usize::from(s > 0.0))
            .collect()
    };
    for (i, (row, c)) in outputs.row_iter().zip(classes).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{i},{},{c}", cells.join(","))?;
    }
    w.flush()
}
