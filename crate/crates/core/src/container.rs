//! Binary array container used for checkpoints and weight import.
//!
//! Layout:
//!
//! ```text
//! "MVF1"                      4 bytes magic
//! header_len                  u64 little-endian
//! header                      header_len bytes of JSON
//! zero padding                up to the next 64-byte boundary
//! array data                  raw little-endian values; every array starts
//!                             on a 64-byte boundary relative to this section
//! ```
//!
//! The JSON header holds `format_version`, a free-form `meta` object and the
//! array manifest (`name`, `dtype`, `shape`, `offset`, `length`, and `scale`
//! for int8 arrays). Offsets are relative to the start of the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MVF1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
    I8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::I8(_) => Dtype::I8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I8(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            Dtype::F32 => ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Dtype::I8 => ArrayData::I8(bytes.iter().map(|&b| b as i8).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
    /// Dequantization scale, present for int8 arrays.
    pub scale: Option<f64>,
}

impl ArrayRecord {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor, dtype: Dtype) -> Self {
        let data = match dtype {
            Dtype::F32 => ArrayData::F32(t.data().iter().map(|&v| v as f32).collect()),
            _ => ArrayData::F64(t.data().to_vec()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    arrays: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayRecord>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ArrayRecord) {
        self.arrays.push(record);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayRecord> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Named array as an f64 tensor (f32 arrays are widened, int8 arrays
    /// dequantized with their scale).
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let rec = self
            .get(name)
            .ok_or_else(|| Error::Format(format!("array `{name}` not found")))?;
        let data = match &rec.data {
            ArrayData::F64(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            ArrayData::I8(v) => {
                let s = rec.scale.unwrap_or(1.0);
                v.iter().map(|&q| f64::from(q) * s).collect()
            }
        };
        Tensor::new(rec.shape.clone(), data).map_err(|e| Error::Format(format!("array `{name}`: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for a in &self.arrays {
            let numel: usize = a.shape.iter().product();
            if numel != a.data.len() {
                return Err(Error::Format(format!(
                    "array `{}` has shape {:?} but {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            let length = a.data.len() * a.data.dtype().size();
            entries.push(ManifestEntry {
                name: a.name.clone(),
                dtype: a.data.dtype(),
                shape: a.shape.clone(),
                offset,
                length,
                scale: a.scale,
            });
            offset = align_up(offset + length);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            arrays: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json("container header", e))?;

        let mut out = Vec::with_capacity(offset + json.len() + 2 * ALIGN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.resize(align_up(out.len()), 0);
        let data_start = out.len();
        for (a, e) in self.arrays.iter().zip(&header.arrays) {
            out.resize(data_start + e.offset, 0);
            a.data.write_le(&mut out);
        }
        out.resize(data_start + offset, 0);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("truncated file: missing header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                std::str::from_utf8(MAGIC).expect("ascii")
            )));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated file: header runs past end".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::json("container header", e))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let data_start = align_up(header_end);
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let numel: usize = e.shape.iter().product();
            if numel * e.dtype.size() != e.length {
                return Err(Error::Format(format!(
                    "array `{}`: length {} does not match shape {:?} of {:?}",
                    e.name, e.length, e.shape, e.dtype
                )));
            }
            let start = data_start + e.offset;
            let end = start + e.length;
            if end > bytes.len() {
                return Err(Error::Format(format!(
                    "truncated file: array `{}` needs bytes {start}..{end} of {}",
                    e.name,
                    bytes.len()
                )));
            }
            arrays.push(ArrayRecord {
                name: e.name,
                shape: e.shape,
                data: ArrayData::read_le(e.dtype, &bytes[start..end]),
                scale: e.scale,
            });
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
