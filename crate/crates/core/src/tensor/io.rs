//! METF v1: a little-endian tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "METF"
//! 4       4           u32 version (1)
//! 8       4           u32 dtype (1 = real64, 2 = complex128 as re,im pairs)
//! 12      4           u32 ndim
//! 16      8 * ndim    u64 extents, row-major
//! ...     payload     raw f64 values
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{checked_len, ComplexTensor, RealTensor};
use crate::error::{Error, Result};

pub const METF_MAGIC: [u8; 4] = *b"METF";
pub const METF_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real64 = 1,
    Complex128 = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::Real(_) => DType::Real64,
            AnyTensor::Complex(_) => DType::Complex128,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real(t) => t.shape(),
            AnyTensor::Complex(t) => t.shape(),
        }
    }

    pub fn into_real(self) -> Result<RealTensor> {
        match self {
            AnyTensor::Real(t) => Ok(t),
            AnyTensor::Complex(_) => Err(Error::invalid("expected a real64 tensor")),
        }
    }

    pub fn into_complex(self) -> Result<ComplexTensor> {
        match self {
            AnyTensor::Complex(t) => Ok(t),
            AnyTensor::Real(_) => Err(Error::invalid("expected a complex128 tensor")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (code, shape, payload): (u32, &[usize], &[f64]) = match self {
            AnyTensor::Real(t) => (DType::Real64 as u32, t.shape(), t.data()),
            AnyTensor::Complex(t) => (
                DType::Complex128 as u32,
                t.shape(),
                bytemuck::cast_slice(t.data()),
            ),
        };
        let mut out = Vec::with_capacity(16 + 8 * shape.len() + 8 * payload.len());
        out.extend_from_slice(&METF_MAGIC);
        out.extend_from_slice(&METF_VERSION.to_le_bytes());
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != METF_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:02x?}"),
            });
        }
        let version = cur.u32()?;
        if version != METF_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let dtype = match cur.u32()? {
            1 => DType::Real64,
            2 => DType::Complex128,
            other => {
                return Err(Error::Format {
                    offset: 8,
                    message: format!("unknown dtype code {other}"),
                })
            }
        };
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let at = cur.pos as u64;
            let d = usize::try_from(cur.u64()?).map_err(|_| Error::Format {
                offset: at,
                message: "extent does not fit in memory".into(),
            })?;
            shape.push(d);
        }
        let header_end = cur.pos as u64;
        let n = checked_len(&shape).map_err(|e| Error::Format {
            offset: 12,
            message: e.to_string(),
        })?;
        let scalars = match dtype {
            DType::Real64 => n,
            DType::Complex128 => 2 * n,
        };
        let available = (bytes.len() - cur.pos) / 8;
        if available < scalars || bytes.len() - cur.pos != scalars * 8 {
            let message = if available < scalars {
                format!("payload truncated: header declares {scalars} values, found {available}")
            } else {
                format!(
                    "{} trailing bytes after payload",
                    bytes.len() - cur.pos - scalars * 8
                )
            };
            return Err(Error::Format {
                offset: header_end + (available.min(scalars) * 8) as u64,
                message,
            });
        }
        let values: Vec<f64> = bytes[cur.pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(match dtype {
            DType::Real64 => AnyTensor::Real(RealTensor::from_vec(&shape, values)?),
            DType::Complex128 => {
                let data = values
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                AnyTensor::Complex(ComplexTensor::from_vec(&shape, data)?)
            }
        })
    }
}

impl From<RealTensor> for AnyTensor {
    fn from(t: RealTensor) -> Self {
        AnyTensor::Real(t)
    }
}

impl From<ComplexTensor> for AnyTensor {
    fn from(t: ComplexTensor) -> Self {
        AnyTensor::Complex(t)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("header truncated, wanted {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AnyTensor::from_bytes(&bytes)
}

/// Writes atomically: the bytes go to a sibling temp file that is then renamed.
pub fn write_tensor(x: &AnyTensor, path: impl AsRef<Path>) -> Result<()> {
    crate::io_util::write_atomic(path.as_ref(), &x.to_bytes())
}
