//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "OETR"
//! version u16      1
//! dtype   u8       0 = f32, 1 = f64
//! rank    u8
//! extents rank x u64
//! data    row-major elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{OetrError, Result};

use super::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"OETR";
pub const CONTAINER_VERSION: u16 = 1;

/// A tensor of either element type, as read from a container.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(OetrError::Format(format!("rank {} too large", t.rank())));
    }
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(OetrError::Format(format!("truncated container while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn decode_data<T: Real>(shape: Vec<usize>, raw: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    Tensor::new(shape, raw.chunks_exact(size).map(T::read_le).collect())
}

pub fn decode_tensor(mut bytes: &[u8]) -> Result<AnyTensor> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(OetrError::Format("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(take(&mut bytes, 2, "version")?.try_into().expect("2 bytes"));
    if version != CONTAINER_VERSION {
        return Err(OetrError::Format(format!("unsupported container version {version}")));
    }
    let code = take(&mut bytes, 1, "dtype")?[0];
    let dtype =
        DType::from_code(code).ok_or_else(|| OetrError::Format(format!("unknown dtype code {code}")))?;
    let rank = take(&mut bytes, 1, "rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = u64::from_le_bytes(take(&mut bytes, 8, "extent")?.try_into().expect("8 bytes"));
        shape.push(usize::try_from(e).map_err(|_| OetrError::Format("extent overflow".into()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| OetrError::Format("element count overflow".into()))?;
    let raw = take(&mut bytes, count * dtype.size(), "data")?;
    if !bytes.is_empty() {
        return Err(OetrError::Format(format!("{} trailing bytes", bytes.len())));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_data(shape, raw)?),
        DType::F64 => AnyTensor::F64(decode_data(shape, raw)?),
    })
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_tensor(t)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}
