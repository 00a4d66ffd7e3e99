//! On-disk datasets: `pairs/NNNNN.bin`, `index.txt` and `spec.json`.
//!
//! Pair files are little-endian: magic `EPSP`, `u32` version, `u32` width,
//! `u32` height, `f64` `fx fy cx cy`, `f64` rotation (row-major) and
//! translation, then `image1`, `image2`, `depth1`, `depth2` as `f32` grids.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{sample_pair, RenderedPair, SceneSpec, SynthError};
use crate::geometry::{CameraIntrinsics, Mat3, RelativePose, Vec3};
use crate::image::Image;

pub const PAIR_MAGIC: &[u8; 4] = b"EPSP";
pub const PAIR_VERSION: u32 = 1;

/// Pairs loaded from disk, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: Option<SceneSpec>,
    pub names: Vec<String>,
    pub pairs: Vec<RenderedPair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn write_pair<W: Write>(mut w: W, pair: &RenderedPair) -> Result<(), SynthError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PAIR_MAGIC);
    for v in [PAIR_VERSION, pair.width() as u32, pair.height() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let k = &pair.intrinsics;
    let r = &pair.pose.rotation;
    let t = &pair.pose.translation;
    let mut scalars = vec![k.fx, k.fy, k.cx, k.cy];
    for i in 0..3 {
        for j in 0..3 {
            scalars.push(r[(i, j)]);
        }
    }
    scalars.extend(t.iter());
    for s in scalars {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for grid in [&pair.image1.data, &pair.image2.data, &pair.depth1, &pair.depth2] {
        for &v in grid.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pair(bytes: &[u8]) -> Result<RenderedPair, SynthError> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], SynthError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| SynthError::Format("truncated pair file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != PAIR_MAGIC {
        return Err(SynthError::Format("bad magic".into()));
    }
    let mut header = [0u32; 3];
    for h in header.iter_mut() {
        *h = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let [version, width, height] = header.map(|v| v as usize);
    if version != PAIR_VERSION as usize {
        return Err(SynthError::Format(format!("unsupported version {version}")));
    }
    let mut s = [0.0f64; 16];
    for v in s.iter_mut() {
        *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let intrinsics = CameraIntrinsics { fx: s[0], fy: s[1], cx: s[2], cy: s[3] };
    let rotation = Mat3::from_row_slice(&s[4..13]);
    let pose = RelativePose { rotation, translation: Vec3::new(s[13], s[14], s[15]) };
    let n = width * height;
    let mut grid = || -> Result<Vec<f64>, SynthError> {
        let raw = take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    };
    let (i1, i2, d1, d2) = (grid()?, grid()?, grid()?, grid()?);
    if pos != bytes.len() {
        return Err(SynthError::Format("trailing bytes".into()));
    }
    Ok(RenderedPair {
        image1: Image { width, height, data: i1 },
        image2: Image { width, height, data: i2 },
        depth1: d1,
        depth2: d2,
        intrinsics,
        pose,
    })
}

fn pair_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("pairs").join(name)
}

/// Generates pairs `0..count` of `spec` (in parallel) and writes them.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, count: usize) -> Result<Dataset, SynthError> {
    spec.validate()?;
    fs::create_dir_all(dir.join("pairs"))?;
    let pairs: Vec<RenderedPair> =
        (0..count as u64).into_par_iter().map(|i| sample_pair(spec, i)).collect::<Result<_, _>>()?;
    let names: Vec<String> = (0..count).map(|i| format!("{i:05}.bin")).collect();
    for (name, pair) in names.iter().zip(&pairs) {
        let file = fs::File::create(pair_path(dir, name))?;
        write_pair(std::io::BufWriter::new(file), pair)?;
    }
    fs::write(dir.join("index.txt"), names.join("\n") + "\n")?;
    let json = serde_json::to_string_pretty(spec).map_err(|e| SynthError::Format(e.to_string()))?;
    fs::write(dir.join("spec.json"), json + "\n")?;
    Ok(Dataset { spec: Some(spec.clone()), names, pairs })
}

/// Loads the pairs listed in `index.txt`; `spec.json` is optional.
pub fn read_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let index = fs::read_to_string(dir.join("index.txt"))?;
    let names: Vec<String> =
        index.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
    let pairs = names
        .par_iter()
        .map(|name| read_pair(&fs::read(pair_path(dir, name))?))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = match fs::read_to_string(dir.join("spec.json")) {
        Ok(s) => Some(serde_json::from_str(&s).map_err(|e| SynthError::Format(e.to_string()))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Dataset { spec, names, pairs })
}
