//! Loading the train/test splits a run config names.

use polycascade::data::{load_delimited, load_idx, Dataset};

use crate::config::{DataFormat, DataSection};
use crate::error::CliError;

fn limit(d: Dataset, rows: usize) -> Dataset {
    if rows == 0 || rows >= d.len() {
        d
    } else {
        d.rows(0..rows)
    }
}

fn delimiter(c: char) -> Result<u8, CliError> {
    u8::try_from(c).map_err(|_| CliError::Config(format!("delimiter {c:?} is not a single byte")))
}

/// Raw (untransformed) train and test splits.
pub fn load_splits(d: &DataSection) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match d.format {
        DataFormat::Idx => {
            let path = |p: &Option<std::path::PathBuf>| {
                p.clone().expect("checked when the config was parsed")
            };
            (
                load_idx(path(&d.train_images), path(&d.train_labels))?,
                load_idx(path(&d.test_images), path(&d.test_labels))?,
            )
        }
        DataFormat::Delimited => {
            let delim = delimiter(d.delimiter)?;
            let all = load_delimited(
                d.train.as_ref().expect("checked when parsed"),
                d.label_column,
                delim,
            )?;
            match (&d.test, d.test_rows) {
                (Some(test), _) => (all, load_delimited(test, d.label_column, delim)?),
                (None, Some(rows)) => {
                    if rows == 0 || rows >= all.len() {
                        return Err(CliError::Config(format!(
                            "data.test_rows = {rows} must leave both splits non-empty ({} rows)",
                            all.len()
                        )));
                    }
                    let cut = all.len() - rows;
                    (all.rows(0..cut), all.rows(cut..all.len()))
                }
                (None, None) => unreachable!("checked when the config was parsed"),
            }
        }
    };
    Ok((limit(train, d.limit_train), limit(test, d.limit_test)))
}

/// A single dataset for evaluation.
pub fn load_one(
    path: &std::path::Path,
    labels: Option<&std::path::Path>,
    label_column: usize,
    delim: char,
) -> Result<Dataset, CliError> {
    match labels {
        Some(l) => Ok(load_idx(path, l)?),
        None => Ok(load_delimited(path, label_column, delimiter(delim)?)?),
    }
}
