//! Binary model snapshots.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic      4 bytes  "PHC1"
//! version    u32      FORMAT_VERSION
//! replicas   u64
//! widths     u64 count, then count x u64   (n_0 .. n_q, n_q = 1)
//! b, c       f64, f64                      kernel coefficients
//! alpha      f64
//! sigma2     f64
//! init       u8                            0 random, 1 identity fragments
//! per replica, per package:
//!   rows u64, cols u64, rows*cols f64      Y, row-major
//! transform  u8 flag, then (if 1) the input transform section
//! ```
//!
//! Values are always stored in 64-bit precision; `Lambda` is not stored and
//! is rederived from `Y` on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::cascade::{validate_widths, Cascade, CascadeConfig, InitMode, MultiOutputCascade};
use crate::constellation::Constellation;
use crate::data::FittedTransform;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::linalg::{Matrix, Real};
use crate::package::Package;

pub const MAGIC: &[u8; 4] = b"PHC1";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any stored length, to reject corrupt headers before
/// allocating.
const MAX_LEN: u64 = 1 << 34;

/// A loaded model with the input transform it was trained with.
#[derive(Debug, Clone)]
pub struct Snapshot<T: Real = f64> {
    pub model: MultiOutputCascade<T>,
    pub transform: Option<FittedTransform>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

/// Serializes `model` (and optionally its input transform) to `w`.
pub fn write_to<T: Real>(
    w: &mut impl Write,
    model: &MultiOutputCascade<T>,
    transform: Option<&FittedTransform>,
) -> Result<()> {
    let cfg = model.config();
    let widths = model.widths();
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)
        .map_err(io_err)?;
    w.write_u64::<LittleEndian>(model.outputs() as u64)
        .map_err(io_err)?;
    w.write_u64::<LittleEndian>(widths.len() as u64)
        .map_err(io_err)?;
    for &n in widths {
        w.write_u64::<LittleEndian>(n as u64).map_err(io_err)?;
    }
    for v in [cfg.kernel.b, cfg.kernel.c, cfg.alpha, cfg.sigma2] {
        w.write_f64::<LittleEndian>(v).map_err(io_err)?;
    }
    w.write_u8(match cfg.init {
        InitMode::Random => 0,
        InitMode::IdentityFragments => 1,
    })
    .map_err(io_err)?;
    for c in model.replicas() {
        for p in c.packages() {
            let y = p.y();
            w.write_u64::<LittleEndian>(y.rows() as u64)
                .map_err(io_err)?;
            w.write_u64::<LittleEndian>(y.cols() as u64)
                .map_err(io_err)?;
            for &v in y.as_slice() {
                w.write_f64::<LittleEndian>(v.as_f64()).map_err(io_err)?;
            }
        }
    }
    match transform {
        Some(t) => {
            w.write_u8(1).map_err(io_err)?;
            t.write_to(w).map_err(io_err)?;
        }
        None => w.write_u8(0).map_err(io_err)?,
    }
    Ok(())
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = r.read_u64::<LittleEndian>().map_err(io_err)?;
    if v > MAX_LEN {
        return Err(Error::Snapshot(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

/// Reads a snapshot written by [`write_to`].
pub fn read_from<T: Real>(r: &mut impl Read) -> Result<Snapshot<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let replicas = read_len(r, "replica count")?;
    if replicas == 0 {
        return Err(Error::Snapshot("no replicas".into()));
    }
    let nw = read_len(r, "width count")?;
    let widths = (0..nw)
        .map(|_| read_len(r, "width"))
        .collect::<Result<Vec<_>>>()?;
    validate_widths(&widths).map_err(|e| Error::Snapshot(e.to_string()))?;
    let mut f = [0.0; 4];
    for v in &mut f {
        *v = r.read_f64::<LittleEndian>().map_err(io_err)?;
    }
    let kernel = KernelParams::new(f[0], f[1])?;
    let init = match r.read_u8().map_err(io_err)? {
        0 => InitMode::Random,
        1 => InitMode::IdentityFragments,
        c => return Err(Error::Snapshot(format!("unknown init mode {c}"))),
    };
    let config = CascadeConfig {
        alpha: f[2],
        kernel,
        sigma2: f[3],
        init,
    };
    let mut cascades = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let mut packages = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (rows, cols) = (read_len(r, "row count")?, read_len(r, "column count")?);
            let constellation = Constellation::octahedral_with_variance(w[0], config.sigma2)?;
            if (rows, cols) != (constellation.len(), w[1]) {
                return Err(Error::Snapshot(format!(
                    "values of a {}->{} package have shape {rows}x{cols}, expected {}x{}",
                    w[0],
                    w[1],
                    constellation.len(),
                    w[1]
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(T::cast(r.read_f64::<LittleEndian>().map_err(io_err)?));
            }
            let y = Matrix::from_vec(rows, cols, data)?;
            packages.push(Package::new(constellation, y, kernel)?);
        }
        cascades.push(Cascade::from_packages(packages, config)?);
    }
    let transform = match r.read_u8().map_err(io_err)? {
        0 => None,
        1 => Some(FittedTransform::read_from(r).map_err(Error::Snapshot)?),
        c => return Err(Error::Snapshot(format!("bad transform flag {c}"))),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err)? != 0 {
        return Err(Error::Snapshot("trailing bytes after snapshot".into()));
    }
    Ok(Snapshot {
        model: MultiOutputCascade::from_replicas(cascades)?,
        transform,
    })
}

/// Writes a snapshot file.
pub fn save<T: Real>(
    path: impl AsRef<Path>,
    model: &MultiOutputCascade<T>,
    transform: Option<&FittedTransform>,
) -> Result<()> {
    let path = path.as_ref();
    let wrap = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    write_to(&mut w, model, transform)?;
    w.flush().map_err(wrap)
}

/// Reads a snapshot file.
pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Snapshot<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_from(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnOp, Dataset, Labels, TransformSpec};

    fn model() -> MultiOutputCascade {
        let cfg = CascadeConfig {
            alpha: 3.5,
            sigma2: 0.0,
            ..CascadeConfig::default()
        };
        MultiOutputCascade::init(&[3, 4, 1], 2, cfg, 17).unwrap()
    }

    fn bytes(m: &MultiOutputCascade, t: Option<&FittedTransform>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(&mut buf, m, t).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let d = Dataset::new(
            Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 0.5, 9.0]]).unwrap(),
            Labels::Class(vec![0, 1]),
        )
        .unwrap();
        let spec = TransformSpec {
            ops: vec![(1, ColumnOp::Ln)],
            ..TransformSpec::default()
        };
        let t = spec.fit(&d).unwrap();
        let buf = bytes(&m, Some(&t));
        assert_eq!(&buf[..4], b"PHC1");
        let back: Snapshot = read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.transform.as_ref(), Some(&t));
        assert_eq!(back.model.widths(), m.widths());
        assert_eq!(back.model.config(), m.config());
        for (a, b) in back.model.replicas().iter().zip(m.replicas()) {
            for (p, q) in a.packages().iter().zip(b.packages()) {
                assert_eq!(p.y(), q.y());
                assert_eq!(p.lambda(), q.lambda());
            }
        }
        let x = Matrix::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.2);
        assert_eq!(back.model.evaluate(&x).unwrap(), m.evaluate(&x).unwrap());
    }

    #[test]
    fn file_round_trip_without_transform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.phc");
        let m = model();
        save(&p, &m, None).unwrap();
        let back: Snapshot<f32> = load(&p).unwrap();
        assert!(back.transform.is_none());
        assert_eq!(back.model.outputs(), 2);
        assert!(matches!(
            load::<f64>(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let buf = bytes(&model(), None);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_from::<f64>(&mut bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        let err = read_from::<f64>(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        assert!(read_from::<f64>(&mut &buf[..buf.len() - 9]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_from::<f64>(&mut long.as_slice()).is_err());
    }
}
