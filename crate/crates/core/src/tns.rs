//! Self-describing tensor container (`.tns`).
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   b"KBNTNS01"
//! hdr_len  u64 LE    length of the JSON header in bytes
//! header   hdr_len   UTF-8 JSON: dtype, byte order, tensor table, metadata
//! payload  ...       little-endian f32 values, tensors back to back
//! ```
//!
//! Tensor offsets in the header are byte offsets relative to the start of the
//! payload. Tensors keep insertion order, and metadata keys are sorted, so
//! writing the same content twice yields byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KBNTNS01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    numel: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    byte_order: String,
    tensors: Vec<TensorEntry>,
    meta: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    tensors: Vec<NamedTensor>,
    meta: Map<String, Value>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Names must be unique and `data.len()` must match `shape`.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "tensor `{name}` declares shape {shape:?} ({numel} values) but holds {}",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Param(format!("duplicate tensor name `{name}`")));
        }
        self.tensors.push(NamedTensor {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Like [`get`](Self::get) but with a descriptive error, optionally checking the shape.
    pub fn require(&self, name: &str, shape: Option<&[usize]>) -> Result<&NamedTensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing tensor `{name}`")))?;
        if let Some(shape) = shape {
            if t.shape != shape {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(t)
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn meta(&self) -> &Map<String, Value> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: Value) {
        self.meta.insert(key.into(), value);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    numel: t.data.len() as u64,
                };
                offset += 4 * t.data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            version: FORMAT_VERSION,
            dtype: "f32".into(),
            byte_order: "LE".into(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serialization cannot fail");

        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing tensor container magic"));
        }
        let hdr_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(hdr_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| bad(&format!("invalid header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        if header.dtype != "f32" || header.byte_order != "LE" {
            return Err(bad("only little-endian f32 payloads are supported"));
        }
        let payload = &bytes[payload_start..];
        let mut expected_end = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let numel: usize = e.shape.iter().product();
            if numel as u64 != e.numel {
                return Err(bad(&format!("tensor `{}` numel disagrees with shape", e.name)));
            }
            if e.offset != expected_end {
                return Err(bad(&format!("tensor `{}` has non-contiguous offset", e.name)));
            }
            let start = e.offset as usize;
            let end = start + 4 * numel;
            if end > payload.len() {
                return Err(bad(&format!("tensor `{}` runs past end of payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_end = end as u64;
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        if expected_end as usize != payload.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    /// Writes via a temporary sibling file and rename so readers never see a partial file.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("tmp")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
