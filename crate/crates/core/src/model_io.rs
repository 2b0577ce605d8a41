//! Binary model container.
//!
//! ```text
//! magic      8 bytes  "RCGRFMDL"
//! version    u32 LE   1
//! kind       u8       0 = GRU, 1 = LSTM
//! d, k, C    3 × u64 LE
//! blocks     f64 LE, declaration order: per gate input (k×d), recurrent (k×k),
//!            bias (k); then readout (C×k), readout bias (C). Row-major.
//! has_norm   u8       0 or 1
//! [norm]     d means then d stds, f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cells::{CellKind, CellParams};
use crate::data::NormStats;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RCGRFMDL";
const VERSION: u32 = 1;
// Upper bound on any single dimension read from a file.
const MAX_DIM: u64 = 1 << 20;

/// Parameters plus the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: CellParams,
    pub normalization: Option<NormStats>,
}

pub fn write_model<W: Write>(model: &SavedModel, mut w: W) -> std::io::Result<()> {
    let p = &model.params;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match p.kind {
        CellKind::Gru => 0,
        CellKind::Lstm => 1,
    }])?;
    for dim in [p.input_dim, p.hidden_dim, p.num_classes] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    for block in p.weights.slices() {
        for v in block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match &model.normalization {
        None => w.write_all(&[0])?,
        Some(stats) => {
            w.write_all(&[1])?;
            for v in stats.mean.iter().chain(&stats.std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| Ok(f64::from_le_bytes(read_exact::<8, _>(r)?)))
        .collect()
}

pub fn read_model<R: Read>(mut r: R) -> Result<SavedModel> {
    if &read_exact::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4, _>(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match read_exact::<1, _>(&mut r)?[0] {
        0 => CellKind::Gru,
        1 => CellKind::Lstm,
        other => return Err(Error::Format(format!("unknown cell kind tag {other}"))),
    };
    let mut dims = [0usize; 3];
    for dim in &mut dims {
        let v = u64::from_le_bytes(read_exact::<8, _>(&mut r)?);
        if v == 0 || v > MAX_DIM {
            return Err(Error::Format(format!("implausible dimension {v}")));
        }
        *dim = v as usize;
    }
    let mut params = CellParams::zeros(kind, dims[0], dims[1], dims[2]);
    let flat = read_f64s(&mut r, params.weights.len())?;
    params.weights.set_flat(&flat)?;
    params
        .validate()
        .map_err(|e| Error::Format(format!("invalid parameters: {e}")))?;
    let normalization = match read_exact::<1, _>(&mut r)?[0] {
        0 => None,
        1 => {
            let mean = read_f64s(&mut r, dims[0])?;
            let std = read_f64s(&mut r, dims[0])?;
            Some(NormStats { mean, std })
        }
        other => return Err(Error::Format(format!("bad normalization flag {other}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes".into()));
    }
    Ok(SavedModel {
        params,
        normalization,
    })
}

pub fn save_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), lstm in any::<bool>(), d in 1usize..5, k in 1usize..6, c in 2usize..5, norm in any::<bool>()) {
            let kind = if lstm { CellKind::Lstm } else { CellKind::Gru };
            let params = CellParams::init(kind, d, k, c, &mut Rng::new(seed)).unwrap();
            let normalization = norm.then(|| NormStats { mean: vec![0.5; d], std: vec![2.0; d] });
            let model = SavedModel { params, normalization };
            let mut buf = Vec::new();
            write_model(&model, &mut buf).unwrap();
            prop_assert_eq!(read_model(buf.as_slice()).unwrap(), model);
        }
    }

    #[test]
    fn header_layout() {
        let params = CellParams::zeros(CellKind::Lstm, 2, 3, 4);
        let mut buf = Vec::new();
        write_model(&SavedModel { params, normalization: None }, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"RCGRFMDL");
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(buf[12], 1);
        assert_eq!(&buf[13..21], &2u64.to_le_bytes());
        let n = 4 * (3 * 2 + 3 * 3 + 3) + 4 * 3 + 4;
        assert_eq!(buf.len(), 8 + 4 + 1 + 24 + 8 * n + 1);
    }

    #[test]
    fn rejects_corruption() {
        let params = CellParams::zeros(CellKind::Gru, 1, 1, 2);
        let mut buf = Vec::new();
        write_model(&SavedModel { params, normalization: None }, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(long.as_slice()).is_err());
    }
}
