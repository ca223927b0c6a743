//! IDX image/label files (the MNIST container format).
//!
//! ```text
//! bytes 0-1   0x00 0x00
//! byte  2     0x08 (unsigned byte payload)
//! byte  3     number of dimensions (3 for images, 1 for labels)
//! 4·d bytes   big-endian u32 dimension sizes
//! payload     product(sizes) bytes, row-major
//! ```

use std::path::Path;

use paramcorrupt::{Batch, Targets, Tensor};
use thiserror::Error;

use crate::error::{BenchError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("file too short for the 4-byte magic: {len} bytes (offset 0)")]
    TooShort { len: usize },
    #[error("bad magic at offset 0: reserved bytes are {0:#04x} {1:#04x}, expected 0x00 0x00")]
    BadMagic(u8, u8),
    #[error("unsupported element type {code:#04x} at offset 2, expected 0x08 (u8)")]
    UnsupportedType { code: u8 },
    #[error("wrong dimension count {found} at offset 3, expected {expected} (magic {magic:#010x})")]
    WrongRank { found: u8, expected: u8, magic: u32 },
    #[error("truncated header: dimension table ends at offset {needed}, file has {len} bytes")]
    TruncatedHeader { needed: usize, len: usize },
    #[error("dimension {index} is zero at offset {offset}")]
    ZeroDimension { index: usize, offset: usize },
    #[error("truncated payload at offset {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

/// A parsed IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX byte array whose magic must equal `magic`.
pub fn parse_idx(bytes: &[u8], magic: u32) -> std::result::Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::TooShort { len: bytes.len() });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::BadMagic(bytes[0], bytes[1]));
    }
    if bytes[2] != 0x08 {
        return Err(IdxError::UnsupportedType { code: bytes[2] });
    }
    let expected = (magic & 0xff) as u8;
    if bytes[3] != expected {
        return Err(IdxError::WrongRank {
            found: bytes[3],
            expected,
            magic,
        });
    }
    let rank = expected as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IdxError::TruncatedHeader {
            needed: header,
            len: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for index in 0..rank {
        let offset = 4 + 4 * index;
        let d = u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes")) as usize;
        if d == 0 {
            return Err(IdxError::ZeroDimension { index, offset });
        }
        dims.push(d);
    }
    let expected_len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let found = bytes.len() - header;
    let expected_len = match expected_len {
        Some(n) if n <= found => n,
        Some(n) => {
            return Err(IdxError::TruncatedPayload {
                offset: header,
                expected: n,
                found,
            })
        }
        None => {
            return Err(IdxError::TruncatedPayload {
                offset: header,
                expected: usize::MAX,
                found,
            })
        }
    };
    if found > expected_len {
        return Err(IdxError::TrailingBytes {
            offset: header + expected_len,
            extra: found - expected_len,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Builds a batch from parsed image and label arrays; pixels are scaled
/// to `[0, 1]`.
pub fn idx_batch(images: &IdxArray, labels: &IdxArray) -> Result<Batch> {
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(BenchError::Data(format!(
            "image count {n} does not match label count {}",
            labels.dims[0]
        )));
    }
    let width = images.dims[1] * images.dims[2];
    let values = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let inputs = Tensor::new(vec![n, width], values)?;
    let classes = labels.data.iter().map(|&b| usize::from(b)).collect();
    Ok(Batch::new(inputs, Targets::Classes(classes))?)
}

/// Loads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Batch> {
    let read = |path: &Path, magic| -> Result<IdxArray> {
        let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
        parse_idx(&bytes, magic).map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))
    };
    idx_batch(&read(images, IMAGE_MAGIC)?, &read(labels, LABEL_MAGIC)?)
}

/// Serializes an array in IDX layout; the inverse of [`parse_idx`].
pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}
