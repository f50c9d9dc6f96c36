//! Run configuration file (TOML).
//!
//! Every section and key is optional except `model.widths` and the dataset
//! paths; unknown keys are rejected so typos fail loudly. Relative paths
//! are resolved against the directory containing the config file.

use std::path::{Path, PathBuf};

use polycascade::cascade::{CascadeConfig, InitMode};
use polycascade::data::{Bounds, TransformSpec};
use polycascade::kernel::KernelParams;
use polycascade::linalg::Precision;
use polycascade::train::{TrainConfig, TRAIN_METRIC_ROWS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `n_0 .. n_{q-1}`; each replica ends in one implicit output.
    pub widths: Vec<usize>,
    /// Replicas: 1 for binary or regression tasks, the class count for
    /// classification.
    #[serde(default = "one")]
    pub outputs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default = "default_b")]
    pub kernel_b: f64,
    #[serde(default = "default_c")]
    pub kernel_c: f64,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
    #[serde(default)]
    pub precompute_h1: bool,
    /// Replicas trained concurrently.
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default = "default_metric_rows")]
    pub train_metric_rows: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            shuffle: true,
            precompute_h1: false,
            threads: 1,
            train_metric_rows: default_metric_rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// IDX image and label files (MNIST layout).
    Idx,
    /// Numeric text table with one label column.
    Delimited,
}

/// Input scaling before the first package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Training-split min/max of each column mapped onto `[-1, 1]`.
    Fitted,
    /// Bytes `0..255` mapped onto `[-1, 1]`.
    Pixels,
    /// Bytes `0..255` mapped onto `[0, 1]`.
    UnitPixels,
    /// Values used as stored.
    Raw,
}

/// Per-column log recipe applied before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LogRecipe {
    #[default]
    None,
    /// `ln` on 1-based features 1, 6, 10, 14, 18, 22-28 and `log1p` on
    /// feature 4 of the 28-feature HIGGS layout.
    Higgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub format: DataFormat,
    // IDX
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    // delimited
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Separate test file; alternatively `test_rows` splits off the tail of
    /// `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rows: Option<usize>,
    #[serde(default)]
    pub label_column: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Defaults to `pixels` for IDX data and `fitted` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    #[serde(default)]
    pub log_recipe: LogRecipe,
    /// Clamp scaled test values into `[-1, 1]`.
    #[serde(default)]
    pub clamp: bool,
    /// Use only the first rows of each split (0 = all).
    #[serde(default)]
    pub limit_train: usize,
    #[serde(default)]
    pub limit_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Write an intermediate snapshot every this many epochs (0 = final
    /// snapshot only).
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            snapshot_every: 0,
        }
    }
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_alpha() -> f64 {
    CascadeConfig::default().alpha
}
fn default_b() -> f64 {
    KernelParams::default().b
}
fn default_c() -> f64 {
    KernelParams::default().c
}
fn default_precision() -> Precision {
    Precision::F64
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_metric_rows() -> usize {
    TRAIN_METRIC_ROWS
}
fn default_delimiter() -> char {
    ','
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`, and
    /// defaults that depend on other keys are filled in.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
            &mut d.train,
            &mut d.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
        if d.scaling.is_none() {
            d.scaling = Some(match d.format {
                DataFormat::Idx => Scaling::Pixels,
                DataFormat::Delimited => Scaling::Fitted,
            });
        }
    }

    /// Structural checks that need no file access.
    fn check(&self) -> Result<(), CliError> {
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let d = &self.data;
        let missing = |key: &str| {
            CliError::Config(format!("data.{key} is required for format {:?}", d.format))
        };
        match d.format {
            DataFormat::Idx => {
                for (key, v) in [
                    ("train_images", &d.train_images),
                    ("train_labels", &d.train_labels),
                    ("test_images", &d.test_images),
                    ("test_labels", &d.test_labels),
                ] {
                    if v.is_none() {
                        return Err(missing(key));
                    }
                }
            }
            DataFormat::Delimited => {
                if d.train.is_none() {
                    return Err(missing("train"));
                }
                if d.test.is_some() == d.test_rows.is_some() {
                    return Err(CliError::Config(
                        "delimited data needs exactly one of data.test and data.test_rows".into(),
                    ));
                }
                if !d.delimiter.is_ascii() {
                    return Err(CliError::Config(
                        "data.delimiter must be an ASCII character".into(),
                    ));
                }
            }
        }
        if self.training.threads == 0 {
            return Err(CliError::Config(
                "training.threads must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Every input file the run reads.
    pub fn input_paths(&self) -> Vec<&Path> {
        let d = &self.data;
        [
            &d.train_images,
            &d.train_labels,
            &d.test_images,
            &d.test_labels,
            &d.train,
            &d.test,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }

    /// Fails with the first input path that is not a readable file.
    pub fn check_paths(&self) -> Result<(), CliError> {
        for p in self.input_paths() {
            if !p.is_file() {
                return Err(CliError::Io(format!(
                    "dataset file not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.training);
        TrainConfig {
            widths: m.widths.clone(),
            outputs: m.outputs,
            cascade: CascadeConfig {
                alpha: m.alpha,
                kernel: KernelParams {
                    b: m.kernel_b,
                    c: m.kernel_c,
                },
                sigma2: m.sigma2,
                init: m.init,
            },
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            precompute_h1: t.precompute_h1,
            shuffle: t.shuffle,
            threads: t.threads,
            train_metric_rows: t.train_metric_rows,
        }
    }

    pub fn transform_spec(&self) -> TransformSpec {
        let d = &self.data;
        let mut spec = match d.scaling.unwrap_or(Scaling::Fitted) {
            Scaling::Fitted => TransformSpec::default(),
            Scaling::Pixels => TransformSpec::pixels(),
            Scaling::UnitPixels => TransformSpec::unit_pixels(),
            Scaling::Raw => TransformSpec {
                bounds: Bounds::Raw,
                ..TransformSpec::default()
            },
        };
        if d.log_recipe == LogRecipe::Higgs {
            spec.ops = TransformSpec::higgs_log().ops;
        }
        spec.clamp = d.clamp;
        spec
    }

    /// The configuration with every default spelled out, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        widths = [784, 100, 20, 20]
        outputs = 10
        alpha = 200.0

        [data]
        format = "idx"
        train_images = "mnist/train-images-idx3-ubyte"
        train_labels = "mnist/train-labels-idx1-ubyte"
        test_images = "mnist/t10k-images-idx3-ubyte"
        test_labels = "mnist/t10k-labels-idx1-ubyte"
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.training, TrainingSection::default());
        assert_eq!(c.data.scaling, Some(Scaling::Pixels));
        assert_eq!(
            c.data.train_images.as_deref(),
            Some(Path::new("/cfg/mnist/train-images-idx3-ubyte"))
        );
        assert_eq!(c.output.dir, Path::new("/cfg/runs/latest"));
        let t = c.train_config();
        assert_eq!(t.cascade_widths(), vec![784, 100, 20, 20, 1]);
        assert_eq!(t.cascade.alpha, 200.0);
        assert_eq!(t.cascade.kernel, KernelParams::default());
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig::parse(MINIMAL, Path::new("/cfg")).unwrap();
        let text = c.to_toml();
        assert!(text.contains("batch_size = 2000"), "{text}");
        let back = RunConfig::parse(&text, Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let text = MINIMAL.replace("alpha = 200.0", "alpah = 200.0");
        let err = RunConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let msg = err.to_string();
        assert!(msg.contains("alpah") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn structural_errors() {
        let no_test = MINIMAL.replace("test_labels", "#");
        assert!(RunConfig::parse(&no_test, Path::new(".")).is_err());
        let zero_alpha = MINIMAL.replace("alpha = 200.0", "alpha = 0.0");
        assert!(RunConfig::parse(&zero_alpha, Path::new(".")).is_err());
        let delimited = r#"
            [model]
            widths = [28, 10]
            [data]
            format = "delimited"
            train = "higgs.csv"
        "#;
        let err = RunConfig::parse(delimited, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("test_rows"), "{err}");
        let ok = delimited.replace(
            "higgs.csv\"",
            "higgs.csv\"\ntest_rows = 500000\nlog_recipe = \"higgs\"",
        );
        let c = RunConfig::parse(&ok, Path::new(".")).unwrap();
        assert_eq!(c.data.scaling, Some(Scaling::Fitted));
        assert_eq!(c.transform_spec().ops.len(), 13);
    }

    #[test]
    fn missing_files_are_named() {
        let c = RunConfig::parse(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = c.check_paths().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(
            err.to_string()
                .contains("/nonexistent/mnist/train-images-idx3-ubyte"),
            "{err}"
        );
    }

    #[test]
    fn shipped_experiment_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let text = std::fs::read_to_string(&path).unwrap();
                RunConfig::parse(&text, &dir).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
        assert!(seen >= 4);
    }
}
