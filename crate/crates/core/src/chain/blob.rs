//! Named-tensor archive.
//!
//! Layout, little-endian throughout: magic `RDT1`, `u32` tensor count, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank` x `u32`
//! dims and the raw `f32` payload.

use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(
        name: impl Into<String>,
        dims: Vec<usize>,
        data: Vec<f32>,
    ) -> std::result::Result<Self, BlobError> {
        let name = name.into();
        let expected = element_count(&dims).ok_or(BlobError::DimensionOverflow)?;
        if expected != data.len() {
            return Err(BlobError::ShapeMismatch {
                name,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { name, dims, data })
    }

    pub fn from_f64(
        name: impl Into<String>,
        dims: &[usize],
        data: &[f64],
    ) -> std::result::Result<Self, BlobError> {
        Tensor::new(
            name,
            dims.to_vec(),
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlobError {
    #[error("bad magic {0:?}, expected \"RDT1\"")]
    BadMagic([u8; 4]),
    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("tensor dimensions overflow the addressable size")]
    DimensionOverflow,
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("tensor {name:?} has {expected} elements by shape but {actual} values")]
    ShapeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("cannot encode: {0}")]
    Unencodable(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

impl BlobError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            BlobError::BadMagic(_) => 1,
            BlobError::Truncated { .. } => 2,
            BlobError::DimensionOverflow => 3,
            BlobError::InvalidName => 4,
            BlobError::ShapeMismatch { .. } => 5,
            BlobError::Unencodable(_) => 6,
            BlobError::TrailingBytes(_) => 7,
        }
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn encode(tensors: &[Tensor]) -> std::result::Result<Vec<u8>, BlobError> {
    let count = u32::try_from(tensors.len())
        .map_err(|_| BlobError::Unencodable("too many tensors".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| BlobError::Unencodable(format!("name of {} bytes", t.name.len())))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| BlobError::Unencodable(format!("rank {}", t.dims.len())))?;
        let expected = element_count(&t.dims).ok_or(BlobError::DimensionOverflow)?;
        if expected != t.data.len() {
            return Err(BlobError::ShapeMismatch {
                name: t.name.clone(),
                expected,
                actual: t.data.len(),
            });
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| BlobError::DimensionOverflow)?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.reserve(t.data.len() * 4);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], BlobError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(BlobError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, BlobError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, BlobError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> std::result::Result<u32, BlobError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Tensor>, BlobError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().expect("4 bytes"),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if m[..bytes.len()] != MAGIC[..bytes.len()] {
                return Err(BlobError::BadMagic(m));
            }
            return Err(r.take(4).unwrap_err());
        }
    };
    if &magic != MAGIC {
        return Err(BlobError::BadMagic(magic));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| BlobError::InvalidName)?
            .to_owned();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let elements = element_count(&dims).ok_or(BlobError::DimensionOverflow)?;
        let byte_len = elements
            .checked_mul(4)
            .ok_or(BlobError::DimensionOverflow)?;
        let raw = r.take(byte_len)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(BlobError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(tensors)
}

pub fn write_blob(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [Tensor], name: &str) -> std::result::Result<&'a Tensor, Error> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::config(format!("tensor {name:?} missing from archive")))
}
