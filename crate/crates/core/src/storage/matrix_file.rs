//! `CDLM` container: lossless little-endian storage for real matrices.
//!
//! Layout: `b"CDLM"`, `u32` version (= 1), `u64` rows, `u64` cols, then
//! `rows * cols` IEEE-754 doubles in row-major order.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDLM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn is_matrix_file(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated matrix header"));
    }
    if !is_matrix_file(bytes) {
        return Err(Error::format(0, "missing CDLM magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported matrix file version {version}"),
        ));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::format(8, "matrix dimensions overflow"))?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {available} of {payload} bytes"),
        ));
    }
    if available > payload {
        return Err(Error::format(
            HEADER_LEN + payload,
            format!("{} trailing bytes after payload", available - payload),
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}
