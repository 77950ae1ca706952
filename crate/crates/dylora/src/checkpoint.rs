//! Binary adapter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "DYLORACK"
//! version  u32
//! m, d     u64, u64
//! r_min    u64
//! r_max    u64
//! alpha    f64
//! w0       m*d      f64, row-major
//! w_up     m*r_max  f64, row-major
//! w_dw     r_max*d  f64, row-major
//! ```
//!
//! Merged weights use the same scheme with magic `"DYLMERGE"`, the header
//! `version, rows, cols, rank` and a single matrix body.

use std::io::{Read, Write};
use std::path::Path;

use dylora_core::{DyLoraAdapter, Matrix};

use crate::error::{CliError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DYLORACK";
pub const MERGED_MAGIC: &[u8; 8] = b"DYLMERGE";
pub const FORMAT_VERSION: u32 = 1;

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(adapter: &DyLoraAdapter) -> Vec<u8> {
    let (m, d, r) = (adapter.out_dim(), adapter.in_dim(), adapter.r_max());
    let mut out = Vec::with_capacity(52 + 8 * (m * d + m * r + r * d));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [m, d, adapter.r_min(), r] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&adapter.alpha().to_le_bytes());
    put_matrix(&mut out, adapter.w0());
    put_matrix(&mut out, adapter.w_up());
    put_matrix(&mut out, adapter.w_dw());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(CliError::Usage("checkpoint is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v)
            .map_err(|_| CliError::Usage("checkpoint dimension overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| CliError::Usage("checkpoint dimensions overflow".into()))?;
        if self.bytes.len() / 8 < n {
            return Err(CliError::Usage("checkpoint is truncated".into()));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data)?)
    }
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 8]) -> Result<()> {
    if r.take(8)? != magic {
        return Err(CliError::Usage("not a dylora file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Usage(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<DyLoraAdapter> {
    let mut r = Reader { bytes };
    check_header(&mut r, CHECKPOINT_MAGIC)?;
    let (m, d, r_min, r_max) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let alpha = r.f64()?;
    let w0 = r.matrix(m, d)?;
    let w_up = r.matrix(m, r_max)?;
    let w_dw = r.matrix(r_max, d)?;
    if !r.bytes.is_empty() {
        return Err(CliError::Usage(
            "trailing bytes after checkpoint body".into(),
        ));
    }
    Ok(DyLoraAdapter::from_parts(
        w0, w_up, w_dw, alpha, r_min, r_max,
    )?)
}

pub fn encode_merged(weights: &Matrix, rank: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 8 * weights.as_slice().len());
    out.extend_from_slice(MERGED_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [weights.rows(), weights.cols(), rank] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    put_matrix(&mut out, weights);
    out
}

/// `(weights, rank)`
pub fn decode_merged(bytes: &[u8]) -> Result<(Matrix, usize)> {
    let mut r = Reader { bytes };
    check_header(&mut r, MERGED_MAGIC)?;
    let (rows, cols, rank) = (r.u64()?, r.u64()?, r.u64()?);
    let w = r.matrix(rows, cols)?;
    Ok((w, rank))
}

pub fn save(adapter: &DyLoraAdapter, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&encode(adapter))
        .map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<DyLoraAdapter> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}
