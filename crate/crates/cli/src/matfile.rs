//! The `.mbgl` matrix container.
//!
//! ```text
//! "MBGL" | version u16 LE = 1 | dtype u8 = 1 (f64 LE) | ndims u8 ∈ {2, 3}
//! | dims: ndims × u64 LE | payload: Π dims × f64 LE, first index fastest
//! | CRC32 (IEEE) of the payload bytes, u32 LE
//! ```

use std::fs;
use std::path::Path;

use mbgl_core::DMatrix;

use crate::error::{CliError, FormatError};

pub const MAGIC: &[u8; 4] = b"MBGL";
pub const VERSION: u16 = 1;
pub const DTYPE_F64_LE: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl MatrixFile {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, FormatError> {
        if !(2..=3).contains(&dims.len()) {
            return Err(FormatError::BadNdims(dims.len() as u8));
        }
        let len = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        if len != Some(data.len()) {
            return Err(FormatError::Truncated {
                expected: len.unwrap_or(usize::MAX),
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    /// Stacks equally sized matrices along a third axis.
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Self {
        let (r, c) = blocks.first().map_or((0, 0), |b| b.shape());
        let mut data = Vec::with_capacity(r * c * blocks.len());
        for b in blocks {
            data.extend_from_slice(b.as_slice());
        }
        Self {
            dims: vec![r, c, blocks.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, FormatError> {
        match self.dims[..] {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, &self.data)),
            _ => Err(FormatError::Shape(format!(
                "expected a 2-D matrix, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_blocks(&self) -> Result<Vec<DMatrix<f64>>, FormatError> {
        match self.dims[..] {
            [r, c, k] => Ok((0..k)
                .map(|l| DMatrix::from_column_slice(r, c, &self.data[l * r * c..(l + 1) * r * c]))
                .collect()),
            _ => Err(FormatError::Shape(format!(
                "expected a 3-D array, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 8 * self.data.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F64_LE);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        let start = out.len();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let take = |at: usize, len: usize| {
            bytes.get(at..at + len).ok_or(FormatError::Truncated {
                expected: at + len,
                found: bytes.len(),
            })
        };
        if take(0, 4)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = u16::from_le_bytes(take(4, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dtype = take(6, 1)?[0];
        if dtype != DTYPE_F64_LE {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let ndims = take(7, 1)?[0];
        if !(2..=3).contains(&ndims) {
            return Err(FormatError::BadNdims(ndims));
        }
        let mut dims = Vec::with_capacity(ndims as usize);
        let mut at = 8;
        for _ in 0..ndims {
            let d = u64::from_le_bytes(take(at, 8)?.try_into().unwrap());
            dims.push(
                usize::try_from(d)
                    .map_err(|_| FormatError::Shape(format!("dimension {d} too large")))?,
            );
            at += 8;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| FormatError::Shape(format!("dims {dims:?} overflow")))?;
        let payload = take(at, count)?;
        let stored = u32::from_le_bytes(take(at + count, 4)?.try_into().unwrap());
        if bytes.len() != at + count + 4 {
            return Err(FormatError::TrailingBytes(bytes.len() - (at + count + 4)));
        }
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(FormatError::CrcMismatch { stored, computed });
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| CliError::format(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }
}
