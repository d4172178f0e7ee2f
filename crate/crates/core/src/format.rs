//! Binary grid file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TGRD"
//! 4       4     version (u32) = 1
//! 8       4     H (u32)
//! 12      4     W (u32)
//! 16      4     d (u32)
//! 20      4*HWd payload (f32, row-major, channel-last)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::TokenGrid;

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

pub fn write_grid(grid: &TokenGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.data().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, grid.height() as u32, grid.width() as u32, grid.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn read_grid(bytes: &[u8]) -> Result<TokenGrid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (h, w, d) = (
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    );
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Format(format!("zero extent in header {h}x{w}x{d}")));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("header {h}x{w}x{d} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "length mismatch: header {h}x{w}x{d} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite payload value at index {i}")));
    }
    TokenGrid::new(h, w, d, data).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a grid file; I/O failures are reported as format errors.
pub fn load_grid(path: impl AsRef<Path>) -> Result<TokenGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_grid(&bytes)
}

pub fn save_grid(path: impl AsRef<Path>, grid: &TokenGrid) -> std::io::Result<()> {
    fs::write(path, write_grid(grid))
}
