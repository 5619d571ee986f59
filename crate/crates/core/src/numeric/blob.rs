//! Parameter blob format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"MCAB"
//! 4       1     version (1)
//! 5       4     header length H, u32 little-endian
//! 9       H     header, UTF-8 JSON (see `BlobHeader`)
//! 9+H     8*N   payload: every tensor's data as f64 little-endian,
//!               concatenated in header order
//! ```
//!
//! The header names each tensor with its shape so a reader can validate the
//! payload length before touching it. `meta` carries the owner's architecture
//! description (layer kinds, widths, activations) so models rebuild without
//! any side files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"MCAB";
pub const BLOB_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobHeader {
    pub kind: String,
    pub precision: String,
    pub seed: u64,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub kind: String,
    pub seed: u64,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Blob {
    pub fn new(kind: impl Into<String>, seed: u64, meta: serde_json::Value) -> Self {
        Blob {
            kind: kind.into(),
            seed,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        let mut t = t.clone();
        t.clear_grad();
        self.tensors.push((name.into(), t));
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = BlobHeader {
            kind: self.kind.clone(),
            precision: "f64".into(),
            seed: self.seed,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Format("blob header too large".into()))?;
        w.write_all(BLOB_MAGIC)?;
        w.write_all(&[BLOB_VERSION])?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.tensors.iter().map(|(_, t)| t.len() * 8).sum());
        for (_, t) in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(Error::Format(format!("bad blob magic {magic:?}")));
        }
        let mut ver = [0u8; 1];
        r.read_exact(&mut ver)?;
        if ver[0] != BLOB_VERSION {
            return Err(Error::Format(format!("unsupported blob version {}", ver[0])));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: BlobHeader = serde_json::from_slice(&json)?;
        if header.precision != "f64" {
            return Err(Error::Format(format!("unsupported precision {}", header.precision)));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut bytes = [0u8; 8];
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut bytes)?;
                data.push(f64::from_le_bytes(bytes));
            }
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after blob payload", rest.len())));
        }
        Ok(Blob {
            kind: header.kind,
            seed: header.seed,
            meta: header.meta,
            tensors,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Blob::read_from(&mut std::io::Cursor::new(bytes))
    }

    /// Take the tensor at `index`, checking its name.
    pub fn tensor(&self, index: usize, name: &str) -> Result<Tensor> {
        match self.tensors.get(index) {
            Some((n, t)) if n == name => Ok(t.clone()),
            Some((n, _)) => Err(Error::Format(format!("expected tensor `{name}`, found `{n}`"))),
            None => Err(Error::Format(format!("missing tensor `{name}`"))),
        }
    }
}
