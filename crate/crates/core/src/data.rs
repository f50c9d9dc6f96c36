//! Dataset ingestion, normalization and batching.
//!
//! Two on-disk formats are supported: IDX (the MNIST container: big-endian
//! header, magic `0x00000803` for images and `0x00000801` for labels) and
//! delimited numeric text with one label column.

use std::fs::File;
use std::io::{BufReader, Read};
use std::ops::Range;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Matrix, Real};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated payload, missing {missing} bytes")]
    Truncated { path: PathBuf, missing: u64 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    Ragged {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{path}: row {row}, column {col}: cannot parse {text:?} as a number")]
    NotNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        text: String,
    },
    #[error("{path}: label column {col} out of range ({cols} columns)")]
    LabelColumn {
        path: PathBuf,
        col: usize,
        cols: usize,
    },
    #[error("{0}: dataset is empty")]
    Empty(PathBuf),
    #[error("column {col}: {op} undefined for training value {value}")]
    TransformDomain {
        col: usize,
        op: &'static str,
        value: f64,
    },
    #[error("transform expects {expected} columns, dataset has {found}")]
    TransformWidth { expected: usize, found: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-row targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Class(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Class indices; real labels are accepted when integral and non-negative.
    pub fn classes(&self) -> Option<Vec<usize>> {
        match self {
            Labels::Class(v) => Some(v.clone()),
            Labels::Real(v) => v
                .iter()
                .map(|&x| (x >= 0.0 && x.fract() == 0.0).then_some(x as usize))
                .collect(),
        }
    }

    /// Binary view: class/label values above 0.5 are positive.
    pub fn binary(&self) -> Vec<bool> {
        match self {
            Labels::Class(v) => v.iter().map(|&c| c > 0).collect(),
            Labels::Real(v) => v.iter().map(|&x| x > 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix<f64>,
    pub labels: Labels,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn new(features: Matrix<f64>, labels: Labels) -> Result<Self, crate::Error> {
        if features.rows() != labels.len() {
            return Err(crate::Error::mismatch(
                "dataset",
                features.shape(),
                (labels.len(), features.cols()),
            ));
        }
        Ok(Dataset {
            features,
            labels,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.select(idx),
            split: None,
        }
    }

    pub fn rows(&self, range: Range<usize>) -> Dataset {
        let idx: Vec<usize> = range.collect();
        self.select(&idx)
    }

    /// Records a train/test split: the first `train_rows` rows train, the rest test.
    pub fn with_split(mut self, train_rows: usize) -> Self {
        let n = self.len();
        let t = train_rows.min(n);
        self.split = Some(Split {
            train: 0..t,
            test: t..n,
        });
        self
    }

    /// Materializes the recorded split (everything is training data when no
    /// split is recorded).
    pub fn split_parts(&self) -> (Dataset, Dataset) {
        match &self.split {
            Some(s) => (self.rows(s.train.clone()), self.rows(s.test.clone())),
            None => (self.clone(), self.rows(0..0)),
        }
    }

    /// Concatenates two datasets with the same width, recording the split.
    pub fn concat_split(train: &Dataset, test: &Dataset) -> Result<Dataset, crate::Error> {
        if train.width() != test.width() {
            return Err(crate::Error::mismatch(
                "concat",
                train.features.shape(),
                test.features.shape(),
            ));
        }
        let mut data = train.features.as_slice().to_vec();
        data.extend_from_slice(test.features.as_slice());
        let features = Matrix::from_vec(train.len() + test.len(), train.width(), data)?;
        let labels = match (&train.labels, &test.labels) {
            (Labels::Class(a), Labels::Class(b)) => {
                Labels::Class(a.iter().chain(b).copied().collect())
            }
            (a, b) => {
                let real = |l: &Labels| match l {
                    Labels::Class(v) => v.iter().map(|&c| c as f64).collect::<Vec<_>>(),
                    Labels::Real(v) => v.clone(),
                };
                Labels::Real(real(a).into_iter().chain(real(b)).collect())
            }
        };
        Ok(Dataset::new(features, labels)?.with_split(train.len()))
    }
}

fn read_idx_header(
    cur: &mut impl Read,
    path: &Path,
    magic: u32,
    dims: usize,
) -> Result<Vec<usize>, DataError> {
    let read = |cur: &mut dyn Read| -> Result<u32, DataError> {
        cur.read_u32::<BigEndian>().map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DataError::Truncated {
                    path: path.to_path_buf(),
                    missing: 4,
                }
            } else {
                io_err(path)(e)
            }
        })
    };
    let found = read(cur)?;
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    (0..dims).map(|_| read(cur).map(|v| v as usize)).collect()
}

fn read_payload(cur: &mut impl Read, path: &Path, len: usize) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::with_capacity(len);
    cur.take(len as u64)
        .read_to_end(&mut buf)
        .map_err(io_err(path))?;
    if buf.len() < len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            missing: (len - buf.len()) as u64,
        });
    }
    Ok(buf)
}

/// Loads an IDX image file and its label file. Features are the raw byte
/// values (0-255), one flattened image per row.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let mut ir = BufReader::new(File::open(ip).map_err(io_err(ip))?);
    let dims = read_idx_header(&mut ir, ip, IDX_IMAGES_MAGIC, 3)?;
    let (count, width) = (dims[0], dims[1] * dims[2]);
    let pixels = read_payload(&mut ir, ip, count * width)?;

    let mut lr = BufReader::new(File::open(lp).map_err(io_err(lp))?);
    let ldims = read_idx_header(&mut lr, lp, IDX_LABELS_MAGIC, 1)?;
    if ldims[0] != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: ldims[0],
        });
    }
    let labels = read_payload(&mut lr, lp, count)?;

    let features = Matrix::from_vec(count, width, pixels.into_iter().map(f64::from).collect())
        .expect("payload length checked");
    Ok(Dataset {
        features,
        labels: Labels::Class(labels.into_iter().map(usize::from).collect()),
        split: None,
    })
}

/// Loads a delimited numeric table; `label_column` is removed from the
/// features and becomes the label. Rows are streamed.
pub fn load_delimited(
    path: impl AsRef<Path>,
    label_column: usize,
    delimiter: u8,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
        if !more {
            break;
        }
        row += 1;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let cols = record.len();
        match width {
            None => {
                if label_column >= cols {
                    return Err(DataError::LabelColumn {
                        path: path.to_path_buf(),
                        col: label_column,
                        cols,
                    });
                }
                width = Some(cols);
            }
            Some(w) if w != cols => {
                return Err(DataError::Ragged {
                    path: path.to_path_buf(),
                    row,
                    found: cols,
                    expected: w,
                })
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::NotNumeric {
                path: path.to_path_buf(),
                row,
                col: col + 1,
                text: cell.to_string(),
            })?;
            if col == label_column {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(DataError::Empty(path.to_path_buf()));
    };
    let n = labels.len();
    Ok(Dataset {
        features: Matrix::from_vec(n, w - 1, features).expect("rectangular by construction"),
        labels: Labels::Real(labels),
        split: None,
    })
}

/// Synthetic two-class task: points uniform in `[-1, 1]^dim`, labelled by
/// which of two concentric shells they fall in. The boundary radius is the
/// median of `|x|^2` (`dim / 3`), giving roughly balanced classes.
pub fn synthetic_shells(rows: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = dim as f64 / 3.0;
    let features = Matrix::from_fn(rows, dim, |_, _| rng.gen_range(-1.0..1.0));
    let labels = features
        .row_iter()
        .map(|r| usize::from(r.iter().map(|v| v * v).sum::<f64>() < threshold))
        .collect();
    Dataset {
        features,
        labels: Labels::Class(labels),
        split: None,
    }
}

/// Per-column preprocessing applied before min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColumnOp {
    #[default]
    None,
    Ln,
    Log1p,
}

impl ColumnOp {
    fn apply(self, v: f64, col: usize) -> Result<f64, DataError> {
        match self {
            ColumnOp::None => Ok(v),
            ColumnOp::Ln if v > 0.0 => Ok(v.ln()),
            ColumnOp::Ln => Err(DataError::TransformDomain {
                col,
                op: "ln",
                value: v,
            }),
            ColumnOp::Log1p if v > -1.0 => Ok(v.ln_1p()),
            ColumnOp::Log1p => Err(DataError::TransformDomain {
                col,
                op: "log1p",
                value: v,
            }),
        }
    }

    fn invert(self, v: f64) -> f64 {
        match self {
            ColumnOp::None => v,
            ColumnOp::Ln => v.exp(),
            ColumnOp::Log1p => v.exp_m1(),
        }
    }

    fn code(self) -> u8 {
        match self {
            ColumnOp::None => 0,
            ColumnOp::Ln => 1,
            ColumnOp::Log1p => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ColumnOp::None),
            1 => Some(ColumnOp::Ln),
            2 => Some(ColumnOp::Log1p),
            _ => None,
        }
    }
}

/// How scaling bounds are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounds {
    /// Column min/max of the training split.
    Fitted,
    /// The same fixed range for every column (e.g. 0..255 for pixels).
    Fixed { min: f64, max: f64 },
    /// No scaling at all.
    Raw,
}

/// Requested preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    /// Per-column ops by 0-based feature index; unlisted columns are `None`.
    pub ops: Vec<(usize, ColumnOp)>,
    pub bounds: Bounds,
    /// Clamp mapped values into `[-1, 1]` (affects out-of-range test rows).
    pub clamp: bool,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            ops: Vec::new(),
            bounds: Bounds::Fitted,
            clamp: false,
        }
    }
}

impl TransformSpec {
    /// Pixel bytes mapped from `[0, 255]` onto `[-1, 1]`.
    pub fn pixels() -> Self {
        TransformSpec {
            ops: Vec::new(),
            bounds: Bounds::Fixed {
                min: 0.0,
                max: 255.0,
            },
            clamp: false,
        }
    }

    /// Pixel bytes mapped from `[0, 255]` onto `[0, 1]` (`v / 255`).
    ///
    /// Expressed as the affine map onto `[-1, 1]` of the symmetric range
    /// `[-255, 255]`, so the fitted transform needs no extra target range.
    pub fn unit_pixels() -> Self {
        TransformSpec {
            ops: Vec::new(),
            bounds: Bounds::Fixed {
                min: -255.0,
                max: 255.0,
            },
            clamp: false,
        }
    }

    /// HIGGS log recipe: `ln` on 1-based features 1, 6, 10, 14, 18 and
    /// 22-28, `log1p` on feature 4, then fitted min-max.
    pub fn higgs_log() -> Self {
        let mut ops: Vec<(usize, ColumnOp)> = [1, 6, 10, 14, 18, 22, 23, 24, 25, 26, 27, 28]
            .iter()
            .map(|&f| (f - 1, ColumnOp::Ln))
            .collect();
        ops.push((3, ColumnOp::Log1p));
        ops.sort_by_key(|o| o.0);
        TransformSpec {
            ops,
            bounds: Bounds::Fitted,
            clamp: false,
        }
    }

    /// Fits bounds on `train` (only) and returns the fitted transform.
    pub fn fit(&self, train: &Dataset) -> Result<FittedTransform, DataError> {
        let w = train.width();
        let mut ops = vec![ColumnOp::None; w];
        for &(col, op) in &self.ops {
            if col >= w {
                return Err(DataError::TransformWidth {
                    expected: col + 1,
                    found: w,
                });
            }
            ops[col] = op;
        }
        let (mut mins, mut maxs) = (vec![f64::INFINITY; w], vec![f64::NEG_INFINITY; w]);
        match self.bounds {
            Bounds::Fitted => {
                for r in train.features.row_iter() {
                    for (col, &v) in r.iter().enumerate() {
                        let t = ops[col].apply(v, col)?;
                        mins[col] = mins[col].min(t);
                        maxs[col] = maxs[col].max(t);
                    }
                }
                if train.is_empty() {
                    mins.fill(0.0);
                    maxs.fill(0.0);
                }
            }
            Bounds::Fixed { min, max } => {
                mins.fill(min);
                maxs.fill(max);
            }
            Bounds::Raw => {
                mins.fill(f64::NAN);
                maxs.fill(f64::NAN);
            }
        }
        Ok(FittedTransform {
            ops,
            mins,
            maxs,
            clamp: self.clamp,
        })
    }
}

/// Preprocessing with bounds learned from a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTransform {
    pub ops: Vec<ColumnOp>,
    /// NaN bounds mean "no scaling" for that column.
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub clamp: bool,
}

impl FittedTransform {
    pub fn width(&self) -> usize {
        self.ops.len()
    }

    fn map(&self, v: f64, col: usize) -> Result<f64, DataError> {
        let t = self.ops[col].apply(v, col)?;
        let (lo, hi) = (self.mins[col], self.maxs[col]);
        if lo.is_nan() {
            return Ok(t);
        }
        let range = hi - lo;
        // zero-range columns carry no information; park them at the center
        let s = if range > 0.0 {
            2.0 * (t - lo) / range - 1.0
        } else {
            0.0
        };
        Ok(if self.clamp { s.clamp(-1.0, 1.0) } else { s })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, DataError> {
        if d.width() != self.width() {
            return Err(DataError::TransformWidth {
                expected: self.width(),
                found: d.width(),
            });
        }
        let mut out = d.clone();
        let w = d.width();
        for (idx, v) in out.features.as_mut_slice().iter_mut().enumerate() {
            *v = self.map(*v, idx % w)?;
        }
        Ok(out)
    }

    /// Maps transformed values back to the original feature scale.
    /// Zero-range columns cannot be recovered and come back as their minimum.
    pub fn invert(&self, d: &Dataset) -> Dataset {
        let mut out = d.clone();
        let w = d.width();
        for (idx, v) in out.features.as_mut_slice().iter_mut().enumerate() {
            let col = idx % w;
            let (lo, hi) = (self.mins[col], self.maxs[col]);
            let t = if lo.is_nan() {
                *v
            } else {
                (*v + 1.0) * 0.5 * (hi - lo) + lo
            };
            *v = self.ops[col].invert(t);
        }
        out
    }

    pub(crate) fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        use byteorder::{LittleEndian, WriteBytesExt};
        w.write_u64::<LittleEndian>(self.ops.len() as u64)?;
        for i in 0..self.ops.len() {
            w.write_u8(self.ops[i].code())?;
            w.write_f64::<LittleEndian>(self.mins[i])?;
            w.write_f64::<LittleEndian>(self.maxs[i])?;
        }
        w.write_u8(u8::from(self.clamp))
    }

    pub(crate) fn read_from(r: &mut impl Read) -> Result<Self, String> {
        use byteorder::LittleEndian;
        let e = |e: std::io::Error| e.to_string();
        let n = r.read_u64::<LittleEndian>().map_err(e)? as usize;
        if n > (1 << 32) {
            return Err(format!("implausible transform width {n}"));
        }
        let mut t = FittedTransform {
            ops: Vec::with_capacity(n),
            mins: Vec::with_capacity(n),
            maxs: Vec::with_capacity(n),
            clamp: false,
        };
        for _ in 0..n {
            let code = r.read_u8().map_err(e)?;
            t.ops
                .push(ColumnOp::from_code(code).ok_or(format!("unknown column op {code}"))?);
            t.mins.push(r.read_f64::<LittleEndian>().map_err(e)?);
            t.maxs.push(r.read_f64::<LittleEndian>().map_err(e)?);
        }
        t.clamp = r.read_u8().map_err(e)? != 0;
        Ok(t)
    }
}

/// Fits `spec` on `train` and applies it to both splits.
pub fn fit_apply_transforms(
    train: &Dataset,
    test: &Dataset,
    spec: &TransformSpec,
) -> Result<(Dataset, Dataset, FittedTransform), DataError> {
    let fitted = spec.fit(train)?;
    Ok((fitted.apply(train)?, fitted.apply(test)?, fitted))
}

/// Row order for one pass over a dataset, cut into batches of `r` rows;
/// the last batch may be short.
pub fn batch_indices(
    n: usize,
    r: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>, DataError> {
    if r == 0 {
        return Err(DataError::ZeroBatch);
    }
    if r > n {
        log::warn!("batch size {r} exceeds dataset size {n}; using a single batch");
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(r).map(<[usize]>::to_vec).collect())
}

/// One batch of features and labels.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub indices: Vec<usize>,
    pub features: Matrix<T>,
    pub labels: Labels,
}

/// Iterates over `d` in batches of `r` rows (seeded shuffle when requested).
pub fn batches<T: Real>(
    d: &Dataset,
    r: usize,
    seed: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Batch<T>> + '_, DataError> {
    let plan = batch_indices(d.len(), r, seed, shuffle)?;
    Ok(plan.into_iter().map(move |indices| Batch {
        features: d.features.select_rows(&indices).cast(),
        labels: d.labels.select(&indices),
        indices,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(dir: &Path, images: &[[u8; 4]], labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lbl");
        let mut f = File::create(&ip).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        for d in [images.len() as u32, 2, 2] {
            f.write_all(&d.to_be_bytes()).unwrap();
        }
        for im in images {
            f.write_all(im).unwrap();
        }
        let mut f = File::create(&lp).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[0, 1, 2, 255], [9, 8, 7, 6]], &[3, 7]);
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.features.shape(), (2, 4));
        assert_eq!(d.features.row(0), &[0.0, 1.0, 2.0, 255.0]);
        assert_eq!(d.labels, Labels::Class(vec![3, 7]));
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[0, 1, 2, 3], [4, 5, 6, 7]], &[1]);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch {
                images: 2,
                labels: 1
            })
        ));
        assert!(matches!(
            load_idx(&lp, &lp),
            Err(DataError::BadMagic { .. })
        ));
        // chop the last three pixel bytes
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(
            matches!(err, DataError::Truncated { missing: 3, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("missing 3 bytes"));
    }

    #[test]
    fn delimited_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "1,0.5,2\n0,1.5,-3\n").unwrap();
        let d = load_delimited(&p, 0, b',').unwrap();
        assert_eq!(d.features.as_slice(), &[0.5, 2.0, 1.5, -3.0]);
        assert_eq!(d.labels, Labels::Real(vec![1.0, 0.0]));

        std::fs::write(&p, "1,2,3\n4,5\n").unwrap();
        assert!(matches!(
            load_delimited(&p, 0, b','),
            Err(DataError::Ragged {
                row: 2,
                found: 2,
                expected: 3,
                ..
            })
        ));
        std::fs::write(&p, "1 2\n3 x\n").unwrap();
        assert!(matches!(
            load_delimited(&p, 0, b' '),
            Err(DataError::NotNumeric { row: 2, col: 2, .. })
        ));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(
            load_delimited(&p, 0, b','),
            Err(DataError::Empty(_))
        ));
    }

    fn table(rows: &[[f64; 3]]) -> Dataset {
        Dataset::new(
            Matrix::from_rows(rows).unwrap(),
            Labels::Real(vec![0.0; rows.len()]),
        )
        .unwrap()
    }

    #[test]
    fn minmax_endpoints_and_constant_column() {
        let train = table(&[[0.0, 5.0, 1.0], [255.0, 5.0, 3.0]]);
        let test = table(&[[300.0, 5.0, 2.0]]);
        let (tr, te, _) = fit_apply_transforms(&train, &test, &TransformSpec::default()).unwrap();
        assert_eq!(tr.features.row(1), &[1.0, 0.0, 1.0]);
        assert_eq!(tr.features.row(0), &[-1.0, 0.0, -1.0]);
        // test rows use training bounds and are not clamped by default
        assert!(te.features[(0, 0)] > 1.0);
        assert_eq!(te.features[(0, 2)], 0.0);
        let clamp = TransformSpec {
            clamp: true,
            ..TransformSpec::default()
        };
        let (_, te, _) = fit_apply_transforms(&train, &test, &clamp).unwrap();
        assert_eq!(te.features[(0, 0)], 1.0);
    }

    #[test]
    fn log_requires_positive_training_values() {
        let train = table(&[[0.0, 1.0, 1.0], [1.0, 2.0, 3.0]]);
        let spec = TransformSpec {
            ops: vec![(0, ColumnOp::Ln)],
            ..TransformSpec::default()
        };
        assert!(matches!(
            spec.fit(&train),
            Err(DataError::TransformDomain {
                col: 0,
                op: "ln",
                ..
            })
        ));
        let spec = TransformSpec {
            ops: vec![(0, ColumnOp::Log1p)],
            ..TransformSpec::default()
        };
        assert!(spec.fit(&train).is_ok());
    }

    #[test]
    fn higgs_recipe() {
        let s = TransformSpec::higgs_log();
        let ln: Vec<usize> = s
            .ops
            .iter()
            .filter(|o| o.1 == ColumnOp::Ln)
            .map(|o| o.0 + 1)
            .collect();
        assert_eq!(ln, vec![1, 6, 10, 14, 18, 22, 23, 24, 25, 26, 27, 28]);
        assert!(s.ops.contains(&(3, ColumnOp::Log1p)));
    }

    #[test]
    fn pixel_scaling() {
        let train = table(&[[0.0, 127.5, 255.0]]);
        let f = TransformSpec::pixels().fit(&train).unwrap();
        assert_eq!(f.apply(&train).unwrap().features.row(0), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn fitting_ignores_test_rows() {
        let train = table(&[[1.0, 2.0, 3.0], [4.0, 8.0, 9.0]]);
        let clean = table(&[[2.0, 3.0, 4.0]]);
        let poisoned = table(&[[1e9, -1e9, f64::MAX]]);
        let (a, _, fa) = fit_apply_transforms(&train, &clean, &TransformSpec::default()).unwrap();
        let (b, _, fb) =
            fit_apply_transforms(&train, &poisoned, &TransformSpec::default()).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn batch_plan() {
        let plan = batch_indices(60_000, 2000, 1, true).unwrap();
        assert_eq!(plan.len(), 30);
        let plan = batch_indices(10, 4, 0, false).unwrap();
        assert_eq!(plan, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
        assert_eq!(batch_indices(5, 9, 0, false).unwrap().len(), 1);
        assert_eq!(
            batch_indices(100, 7, 3, true).unwrap(),
            batch_indices(100, 7, 3, true).unwrap()
        );
        assert!(matches!(
            batch_indices(3, 0, 0, false),
            Err(DataError::ZeroBatch)
        ));
    }

    #[test]
    fn batch_iterator_gathers_rows() {
        let d = synthetic_shells(10, 3, 4);
        let bs: Vec<Batch<f64>> = batches(&d, 4, 0, false).unwrap().collect();
        assert_eq!(bs.len(), 3);
        assert_eq!(bs[1].features.row(0), d.features.row(4));
        assert_eq!(bs[2].labels.len(), 2);
    }

    #[test]
    fn shells_are_roughly_balanced() {
        let d = synthetic_shells(4000, 10, 7);
        let pos = d.labels.binary().iter().filter(|&&b| b).count();
        assert!((1500..2500).contains(&pos), "{pos}");
    }
}
