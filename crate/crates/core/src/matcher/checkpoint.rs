//! Little-endian binary checkpoints.
//!
//! Layout: magic `EPMC`, `u32` version, four `u32` dimensions
//! `(d_in, d, d_in_f, d_f)`, `f64` tau, then `W_coarse` and `W_fine` as
//! row-major `f64`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{MatcherError, MatcherParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EPMC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> MatcherError {
    MatcherError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &MatcherParams) -> Result<(), MatcherError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [params.w_coarse.nrows(), params.w_coarse.ncols(), params.w_fine.nrows(), params.w_fine.ncols()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&params.tau.to_le_bytes());
    for m in [&params.w_coarse, &params.w_fine] {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                buf.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MatcherParams, MatcherError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], MatcherError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| MatcherError::Checkpoint("truncated".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(MatcherError::Checkpoint("bad magic".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(MatcherError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = u32_at(take(4)?) as usize;
    }
    let tau = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut mat = |rows: usize, cols: usize| -> Result<DMatrix<f64>, MatcherError> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
        }
        Ok(m)
    };
    let w_coarse = mat(dims[0], dims[1])?;
    let w_fine = mat(dims[2], dims[3])?;
    if pos != bytes.len() {
        return Err(MatcherError::Checkpoint("trailing bytes".into()));
    }
    Ok(MatcherParams { w_coarse, w_fine, tau })
}

pub fn save_checkpoint(path: &Path, params: &MatcherParams) -> Result<(), MatcherError> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_checkpoint(std::io::BufWriter::new(file), params)
}

pub fn load_checkpoint(path: &Path) -> Result<MatcherParams, MatcherError> {
    read_checkpoint(std::fs::File::open(path).map_err(io_err)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::MatcherConfig;

    #[test]
    fn round_trip_is_exact() {
        let cfg = MatcherConfig::default();
        let p = MatcherParams::init(&cfg, 17);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"EPMC");
        assert_eq!(buf.len(), 4 + 4 + 16 + 8 + 8 * (cfg.coarse_input_dim() * 32 + cfg.fine_input_dim() * 16));
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let p = MatcherParams::init(&MatcherConfig::default(), 1);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }
}
