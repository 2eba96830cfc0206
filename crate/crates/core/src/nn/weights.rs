//! Named parameter tensors and the `.dtpw` container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DTPW" | version u32 = 1 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | dtype u8 | ndim u8 | dims u32 × ndim | payload
//! ```
//!
//! dtype 0 stores 32-bit floats, dtype 1 stores 64-bit floats; payloads are
//! row-major.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, FormatError, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"DTPW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: StoredData,
}

impl StoredTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => StoredData::F32(t.data().iter().map(|x| x.as_f64() as f32).collect()),
            DType::F64 => StoredData::F64(t.data().iter().map(|x| x.as_f64()).collect()),
        };
        StoredTensor { dims: t.shape().to_vec(), data }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            StoredData::F32(_) => DType::F32,
            StoredData::F64(_) => DType::F64,
        }
    }

    /// Converts into the requested element type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = match &self.data {
            StoredData::F32(v) => v.iter().map(|&x| T::of_f64(x as f64)).collect(),
            StoredData::F64(v) => v.iter().map(|&x| T::of_f64(x)).collect(),
        };
        Tensor::from_vec(&self.dims, data).expect("stored dims match payload")
    }
}

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) -> Result<()> {
        self.insert_stored(name, StoredTensor::from_tensor(tensor))
    }

    pub fn insert_stored(&mut self, name: &str, tensor: StoredTensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(FormatError::DuplicateName(name.to_string()).into());
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let name_len: u16 = name.len().try_into().map_err(|_| FormatError::NameTooLong(name.len()))?;
            if t.dims.len() > MAX_RANK {
                return Err(FormatError::UnsupportedRank { tensor: name.clone(), ndim: t.dims.len() as u8 }.into());
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().tag());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &t.data {
                StoredData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                StoredData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4).ok_or(FormatError::TruncatedHeader)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic }.into());
        }
        let version = r.u32().ok_or(FormatError::TruncatedHeader)?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let count = r.u32().ok_or(FormatError::TruncatedHeader)?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16().ok_or(FormatError::TruncatedHeader)? as usize;
            let name_bytes = r.take(name_len).ok_or(FormatError::TruncatedHeader)?;
            let name = std::str::from_utf8(name_bytes).map_err(|_| FormatError::InvalidName)?.to_string();
            let truncated = || FormatError::TruncatedPayload { tensor: name.clone() };
            let tag = r.u8().ok_or_else(truncated)?;
            let dtype = DType::from_tag(tag).ok_or_else(|| FormatError::UnsupportedDType { tensor: name.clone(), dtype: tag })?;
            let ndim = r.u8().ok_or_else(truncated)?;
            if ndim as usize > MAX_RANK {
                return Err(FormatError::UnsupportedRank { tensor: name, ndim }.into());
            }
            let mut dims = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                dims.push(r.u32().ok_or_else(truncated)? as usize);
            }
            let payload = numel(&dims)
                .checked_mul(dtype.size_bytes())
                .and_then(|n| r.take(n))
                .ok_or_else(truncated)?;
            let data = match dtype {
                DType::F32 => StoredData::F32(payload.chunks_exact(4).map(f32::read_le).collect()),
                DType::F64 => StoredData::F64(payload.chunks_exact(8).map(f64::read_le).collect()),
            };
            if store.entries.contains_key(&name) {
                return Err(FormatError::DuplicateName(name).into());
            }
            store.entries.insert(name, StoredTensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}
