//! Named parameter store and its on-disk format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "SRSW0001"
//! 8 bytes   u64 length M of the manifest
//! M bytes   UTF-8 JSON: {"tensors":[{"name":..,"shape":[..],"dtype":"f32","offset":..}, ..]}
//! rest      IEEE-754 f32 payload; `offset` is in bytes from the payload start
//! ```
//!
//! Tensors are written in name order with no padding between them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{Linear, Matrix};

pub const MAGIC: &[u8; 8] = b"SRSW0001";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }
}

/// Expected parameter names and shapes for a model.
pub type Manifest = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Param>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    tensors: Vec<ManifestEntry>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) {
        self.params.insert(name.into(), param);
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Manifest(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Manifest(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Exact cover check: every manifest entry present with its shape, and
    /// nothing else.
    pub fn validate(&self, manifest: &Manifest) -> Result<()> {
        let expected: BTreeMap<&str, &Vec<usize>> =
            manifest.iter().map(|(n, s)| (n.as_str(), s)).collect();
        for (name, shape) in &expected {
            let p = self
                .params
                .get(*name)
                .ok_or_else(|| Error::Manifest(format!("missing parameter {name}")))?;
            if &p.shape != *shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    p.shape
                )));
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !expected.contains_key(k.as_str())) {
            return Err(Error::Manifest(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.data.iter().map(|&v| v as f64).collect())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let p = self.get(name)?;
        match p.shape.as_slice() {
            [r, c] => Matrix::from_vec(*r, *c, p.data.iter().map(|&v| v as f64).collect()),
            other => Err(Error::Shape(format!("parameter {name} has shape {other:?}, expected 2-D"))),
        }
    }

    /// `{prefix}.weight` and `{prefix}.bias` as a 1x1 convolution.
    pub fn linear(&self, prefix: &str) -> Result<Linear> {
        Linear::new(
            self.matrix(&format!("{prefix}.weight"))?,
            self.vector(&format!("{prefix}.bias"))?,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(name, p)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: p.shape.clone(),
                    dtype: "f32".into(),
                    offset,
                };
                offset += 4 * p.data.len() as u64;
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&ManifestFile { tensors }).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for p in self.params.values() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a weight file (bad magic)".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(Error::CorruptFile("manifest length exceeds file size".into()));
        }
        let manifest: ManifestFile = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::Format(format!("weight manifest is not valid JSON: {e}")))?;
        let payload = &body[mlen..];
        let mut store = WeightStore::new();
        let mut used = 0usize;
        for e in manifest.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(4 * n)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| Error::CorruptFile(format!("tensor {} overruns the payload", e.name)))?;
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {} holds non-finite values", e.name)));
            }
            used += 4 * n;
            if store.params.insert(e.name.clone(), Param { shape: e.shape, data }).is_some() {
                return Err(Error::Manifest(format!("duplicate parameter {}", e.name)));
            }
        }
        if used != payload.len() {
            return Err(Error::CorruptFile(format!(
                "payload holds {} bytes but the manifest accounts for {used}",
                payload.len()
            )));
        }
        Ok(store)
    }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    crate::audio_io::write_atomic(path.as_ref(), &store.to_bytes())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightStore::from_bytes(&bytes)
}
