//! Binary grid checkpoints.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content                                             |
//! |--------|------|-----------------------------------------------------|
//! | 0      | 16   | magic `STYLETRF-VMGRID1`                            |
//! | 16     | 12   | resolution x, y, z (`u32`)                          |
//! | 28     | 48   | aabb min x, y, z then max x, y, z (`f64`)           |
//! | 76     | 12   | density rank, appearance rank, sh degree (`u32`)    |
//! | 88     | ...  | factor arrays (`f32`)                               |
//!
//! Factor arrays follow in this order: density then appearance, each as
//! mode 0 vectors, mode 0 matrices, mode 1 vectors, ..., mode 2 matrices,
//! then the feature basis. Mode `m` vectors are indexed `[i][r]` along axis
//! `m`; matrices are `[a][b][r]` over the two remaining axes in ascending
//! order. The basis is row-major `feature_dim x (3 * appearance_rank)` with
//! `feature_dim = 3 * (sh_degree + 1)^2`. The file ends after the basis.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Aabb, GridShape, VMGrid};

pub const MAGIC: &[u8; 16] = b"STYLETRF-VMGRID1";
const HEADER_LEN: usize = 88;

pub fn encode(grid: &VMGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.param_count());
    out.extend_from_slice(MAGIC);
    for n in grid.shape.resolution {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in grid.aabb.min.iter().chain(&grid.aabb.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for n in [
        grid.shape.density_rank,
        grid.shape.appearance_rank,
        grid.shape.sh_degree,
    ] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for (_, slice) in grid.param_slices() {
        for v in slice {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("checkpoint truncated at byte {}", self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<VMGrid> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(16)? != MAGIC {
        return Err(Error::format(
            path,
            "not a grid checkpoint or incompatible version (bad magic)",
        ));
    }
    let resolution = [r.u32()?, r.u32()?, r.u32()?];
    let min = [r.f64()?, r.f64()?, r.f64()?];
    let max = [r.f64()?, r.f64()?, r.f64()?];
    let shape = GridShape {
        resolution,
        density_rank: r.u32()?,
        appearance_rank: r.u32()?,
        sh_degree: r.u32()?,
    };
    let mut grid = VMGrid::zeros(shape, Aabb { min, max })
        .map_err(|e| Error::format(path, format!("invalid checkpoint header: {e}")))?;
    let expected = HEADER_LEN + 4 * grid.param_count();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "checkpoint is {} bytes but its header implies {expected}",
                bytes.len()
            ),
        ));
    }
    for (_, slice) in grid.param_slices_mut() {
        for v in slice.iter_mut() {
            let b = r.take(4)?;
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    Ok(grid)
}

/// Writes atomically through a temporary file in the same directory.
pub fn save_checkpoint(grid: &VMGrid, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(grid)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<VMGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VMGrid {
        VMGrid::random(
            GridShape {
                resolution: [3, 4, 5],
                density_rank: 2,
                appearance_rank: 3,
                sh_degree: 1,
            },
            Aabb::new([-1.0, -2.0, -0.5], [1.0, 0.25, 3.0]).unwrap(),
            42,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        let g = grid();
        save_checkpoint(&g, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), g);
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn magic_at_start() {
        let bytes = encode(&grid());
        assert_eq!(&bytes[..16], b"STYLETRF-VMGRID1");
    }

    #[test]
    fn truncated_or_foreign_files_rejected() {
        let bytes = encode(&grid());
        let p = Path::new("mem");
        for cut in [0, 10, 50, HEADER_LEN, bytes.len() - 1] {
            assert!(decode(&bytes[..cut], p).is_err(), "cut at {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[15] = b'2';
        let err = decode(&wrong, p).unwrap_err();
        assert!(err.to_string().contains("magic"));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long, p).is_err());
    }
}
