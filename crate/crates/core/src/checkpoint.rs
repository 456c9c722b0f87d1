//! Binary checkpoint format.
//!
//! ```text
//! "RSSM" | version: u16 LE | entries: u32 LE
//! repeated `entries` times:
//!   name_len: u16 LE | name: utf-8 | dtype: u8 (0 = f32, 1 = f64) | rank: u8
//!   | extents: rank × u32 LE | payload: little-endian scalars
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSSM";
pub const VERSION: u16 = 2;

/// A decoded tensor of either precision.
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

    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Scalar>(entries: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::invalid("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid(format!("rank too large for `{name}`")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE as u8);
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::invalid(format!("extent too large for `{name}`")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos,
                reason: format!(
                    "truncated while reading {what} ({n} bytes wanted, {} left)",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fail(&self, at: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: at,
            reason: reason.into(),
        }
    }
}

/// Decodes a checkpoint; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic (expected \"RSSM\")"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(r.take(4, "entry count")?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let start = r.pos;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.fail(start + 2, "name is not utf-8"))?
            .to_string();
        let tag_at = r.pos;
        let dtype = DType::from_tag(r.take(1, "dtype")?[0]).ok_or_else(|| r.fail(tag_at, "unknown dtype tag"))?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.take(4, "extent")?.try_into().unwrap()) as usize);
        }
        let bytes_wanted = shape
            .iter()
            .try_fold(dtype.size(), |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| r.fail(tag_at, format!("extents of `{name}` overflow")))?;
        let payload = r.take(bytes_wanted, "payload")?;
        let t = match dtype {
            DType::F32 => AnyTensor::F32(Tensor::from_parts(shape, payload.chunks_exact(4).map(f32::read_le).collect())),
            DType::F64 => AnyTensor::F64(Tensor::from_parts(shape, payload.chunks_exact(8).map(f64::read_le).collect())),
        };
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes after {count} tensors", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let bytes = encode(&store.named_tensors())?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_any(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads a checkpoint into `store`, casting stored precision to `T` if it differs.
pub fn load_into<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let entries: Vec<(String, Tensor<T>)> = load_any(path)?.into_iter().map(|(n, t)| (n, t.to())).collect();
    store.load_from(&entries)
}
