//! CAPF1: one feature tensor per file.
//!
//! ```text
//! offset  size        field
//! 0       6           magic "CAPF1\0"
//! 6       4           rank (u32 LE)
//! 10      4 * rank    extents (u32 LE each, positive)
//! ...     4 * numel   row-major f32 LE payload
//! ```

use std::path::Path;

use crate::ndcore::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CAPF1\0";

/// Largest rank accepted when decoding.
pub const MAX_RANK: usize = 8;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("bad CAPF1 magic or version"));
    }
    let rank = read_u32(bytes, 6).ok_or_else(|| Error::format("CAPF1 header truncated"))? as usize;
    if rank > MAX_RANK {
        return Err(Error::format(format!("CAPF1 rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = read_u32(bytes, 10 + 4 * i)
            .ok_or_else(|| Error::format("CAPF1 header truncated"))? as usize;
        if d == 0 {
            return Err(Error::format(format!("CAPF1 extent {i} is zero")));
        }
        shape.push(d);
    }
    let header = 10 + 4 * rank;
    let expected = shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::format(format!("CAPF1 extents {shape:?} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "CAPF1 payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape, data)
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, t: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}
