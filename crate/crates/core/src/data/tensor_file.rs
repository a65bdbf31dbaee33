//! Single-array binary files.
//!
//! Layout: `"ALFT"`, version `0x01`, dtype `0x02` (binary64 LE), rank byte
//! (1 or 2), `rank` little-endian `u32` dims, then the row-major payload.

use std::path::Path;

use crate::numerics::{Matrix, Tensor, Vector};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ALFT";
const VERSION: u8 = 0x01;
const DTYPE_F64: u8 = 0x02;
const HEADER: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    Vector(Vector),
    Matrix(Matrix),
}

impl AnyTensor {
    pub fn into_vector(self) -> Result<Vector> {
        match self {
            AnyTensor::Vector(v) => Ok(v),
            AnyTensor::Matrix(m) => Err(Error::Integrity(format!(
                "expected a rank-1 tensor, found {}",
                m.shape()
            ))),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self {
            AnyTensor::Matrix(m) => Ok(m),
            AnyTensor::Vector(v) => Err(Error::Integrity(format!(
                "expected a rank-2 tensor, found {}",
                v.shape()
            ))),
        }
    }
}

pub fn encode_tensor<T: Tensor + ?Sized>(t: &T) -> Vec<u8> {
    let dims: Vec<usize> = match t.shape() {
        crate::numerics::Shape::Vector(n) => vec![n],
        crate::numerics::Shape::Matrix(r, c) => vec![r, c],
    };
    let payload = t.as_slice();
    let mut out = Vec::with_capacity(HEADER + 4 * dims.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F64);
    out.push(dims.len() as u8);
    for d in dims {
        let d = u32::try_from(d).expect("tensor dimension exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < HEADER {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(
            4,
            format!("unsupported version {:#04x}", bytes[4]),
        ));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(format_err(
            5,
            format!("unsupported dtype {:#04x}", bytes[5]),
        ));
    }
    let rank = bytes[6] as usize;
    if rank != 1 && rank != 2 {
        return Err(format_err(6, format!("unsupported rank {rank}")));
    }
    let mut at = HEADER;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes
            .get(at..at + 4)
            .ok_or_else(|| format_err(bytes.len(), "truncated dims"))?;
        dims.push(u32::from_le_bytes(chunk.try_into().expect("4 bytes")) as usize);
        at += 4;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(HEADER, "element count overflows"))?;
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(at))
        .ok_or_else(|| format_err(HEADER, "payload size overflows"))?;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in bytes[at..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(format_err(at + 8 * k, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    Ok(if rank == 1 {
        AnyTensor::Vector(Vector::new(data)?)
    } else {
        AnyTensor::Matrix(Matrix::new(dims[0], dims[1], data)?)
    })
}

pub fn write_tensor<T: Tensor + ?Sized>(path: &Path, t: &T) -> Result<()> {
    super::atomic_write(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{msg} in {}", path.display()),
        },
        other => other,
    })
}
