//! Versioned binary artifact container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! [0..8)    magic, 8 ASCII bytes identifying the artifact kind
//! [8..12)   format version (u32)
//! [12..16)  header length H (u32)
//! [16..16+H) UTF-8 JSON header:
//!            { "config_hash": str, "meta": any, "arrays": [{"name", "dtype", "shape"}] }
//! then      array payloads in header order, f32 or f64 little-endian
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const MAGIC_BATCH: &[u8; 8] = b"IMPBATCH";
pub const MAGIC_FIELD: &[u8; 8] = b"LAPFIELD";
pub const MAGIC_GENERATOR: &[u8; 8] = b"TOYGENV1";
pub const MAGIC_DETECTOR: &[u8; 8] = b"DETECTOR";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::F32(data),
        }
    }

    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::F64(data),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            ArrayData::F32(v) => Ok(v),
            ArrayData::F64(_) => Err(Error::Format(format!("array '{}' is f64, expected f32", self.name))),
        }
    }

    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self.data {
            ArrayData::F64(v) => Ok(v),
            ArrayData::F32(_) => Err(Error::Format(format!("array '{}' is f32, expected f64", self.name))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

impl Container {
    pub fn new(config_hash: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            config_hash: config_hash.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, a: NamedArray) {
        self.arrays.push(a);
    }

    /// Remove and return the array called `name`.
    pub fn take(&mut self, name: &str) -> Result<NamedArray> {
        let idx = self
            .arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array '{name}'")))?;
        Ok(self.arrays.remove(idx))
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Vec<u8> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    dtype: match a.data {
                        ArrayData::F32(_) => "f32".into(),
                        ArrayData::F64(_) => "f64".into(),
                    },
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + hjson.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
        out.extend_from_slice(&hjson);
        for a in &self.arrays {
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("truncated header".into()));
        }
        if &bytes[..8] != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let hend = 16 + hlen;
        if bytes.len() < hend {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| Error::Format(format!("header: {e}")))?;
        let mut pos = hend;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::Format(format!("unknown dtype '{other}'"))),
            };
            let end = pos + n * width;
            if bytes.len() < end {
                return Err(Error::Format(format!("array '{}' truncated", e.name)));
            }
            let raw = &bytes[pos..end];
            let data = if width == 4 {
                ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            } else {
                ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            };
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            config_hash: header.config_hash,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes(magic)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Hex SHA-256 of the canonical JSON form of a config value.
pub fn config_hash<S: serde::Serialize>(cfg: &S) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
