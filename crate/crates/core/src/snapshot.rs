//! Binary field snapshots and small CSV grid exports.
//!
//! Snapshot layout (little endian):
//!
//! | bytes  | content                          |
//! |--------|----------------------------------|
//! | 0..8   | magic `KSNLSNAP`                 |
//! | 8..12  | dim (u32)                        |
//! | 12..16 | nx (u32)                         |
//! | 16..20 | ny (u32, 1 in 1D)                |
//! | 20..24 | reserved, zero                   |
//! | 24..32 | time (f64)                       |
//! | 32..   | nx·ny values (f64), x fastest    |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::SnapshotError;
use crate::grid::{Field, Grid};

pub const MAGIC: &[u8; 8] = b"KSNLSNAP";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: u32,
    pub nx: u32,
    pub ny: u32,
    pub t: f64,
    pub values: Vec<f64>,
}

pub fn encode(grid: &Grid, field: &Field, t: f64) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * field.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.nx() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.ny() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Truncated { expected: HEADER_LEN, got: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(SnapshotError::Magic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let (dim, nx, ny) = (u32_at(8), u32_at(12), u32_at(16));
    let t = f64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let n = nx as usize * ny as usize;
    let expected = HEADER_LEN + 8 * n;
    if bytes.len() != expected {
        return Err(SnapshotError::Truncated { expected, got: bytes.len() });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Snapshot { dim, nx, ny, t, values })
}

pub fn write_snapshot(path: &Path, grid: &Grid, field: &Field, t: f64) -> Result<(), SnapshotError> {
    fs::write(path, encode(grid, field, t))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    decode(&fs::read(path)?)
}

/// `x,y,u,v` per cell center (`y = 0` in 1D).
pub fn grid_csv(grid: &Grid, u: &Field, v: &Field) -> String {
    let mut out = String::from("x,y,u,v\n");
    for k in 0..grid.len() {
        let [x, y] = grid.center(k);
        let _ = writeln!(out, "{x:.16e},{y:.16e},{:.16e},{:.16e}", u.values()[k], v.values()[k]);
    }
    out
}
