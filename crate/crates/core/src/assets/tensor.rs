use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NTC1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
}

/// Dense row-major f32 tensor as stored in NTC1 files.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBlob {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: DType,
    shape: Vec<usize>,
}

impl TensorBlob {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let blob = Self {
            dtype: DType::F32,
            shape,
            data,
        };
        blob.validate()?;
        Ok(blob)
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!(
                "tensor shape must be non-empty with positive dims, got {:?}",
                self.shape
            )));
        }
        if self.numel() != self.data.len() {
            return Err(Error::Corruption(format!(
                "shape {:?} needs {} elements, payload has {}",
                self.shape,
                self.numel(),
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&Header {
            dtype: self.dtype,
            shape: self.shape.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NTC1 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() < hlen {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.shape.is_empty() || header.shape.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!("invalid shape {:?}", header.shape)));
        }
        let payload = &body[hlen..];
        if payload.len() % 4 != 0 {
            return Err(Error::Corruption("payload is not a whole number of f32".into()));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let blob = Self {
            dtype: header.dtype,
            shape: header.shape,
            data,
        };
        blob.validate()?;
        Ok(blob)
    }
}

pub fn write_tensor(path: impl AsRef<Path>, blob: &TensorBlob) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, blob.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorBlob::from_bytes(&bytes)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    meta: serde_json::Value,
    tensors: BTreeMap<String, ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    file: String,
    shape: Vec<usize>,
}

/// A directory of NTC1 tensors plus `manifest.json` naming each one.
///
/// Networks, tri-planes, morph models and embedding caches all persist through
/// this type. Tensor names are free-form; `/` is mapped to `__` in file names.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, TensorBlob>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Result<()> {
        self.tensors.insert(name.into(), TensorBlob::from_f64(shape, data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TensorBlob> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("tensor {name} not in checkpoint")))
    }

    /// Values of `name`, checked against the expected element count.
    pub fn get_f64(&self, name: &str, numel: usize) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.numel() != numel {
            return Err(Error::Validation(format!(
                "tensor {name} has {} elements, expected {numel}",
                t.numel()
            )));
        }
        Ok(t.to_f64())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = BTreeMap::new();
        for (name, blob) in &self.tensors {
            let file = format!("{}.ntc", name.replace('/', "__"));
            write_tensor(dir.join(&file), blob)?;
            entries.insert(
                name.clone(),
                ManifestEntry {
                    file,
                    shape: blob.shape.clone(),
                },
            );
        }
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let mut tensors = BTreeMap::new();
        for (name, entry) in manifest.tensors {
            let blob = read_tensor(dir.join(&entry.file))?;
            if blob.shape != entry.shape {
                return Err(Error::Corruption(format!(
                    "{name}: manifest shape {:?} but file shape {:?}",
                    entry.shape, blob.shape
                )));
            }
            tensors.insert(name, blob);
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2x3() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ntc");
        let blob = TensorBlob::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        write_tensor(&p, &blob).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), blob);
    }

    #[test]
    fn empty_shape_is_format_error() {
        let header = br#"{"dtype":"f32","shape":[]}"#;
        let mut bytes = b"NTC1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        assert!(matches!(TensorBlob::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn short_payload_is_corruption() {
        let header = br#"{"dtype":"f32","shape":[4]}"#;
        let mut bytes = b"NTC1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(TensorBlob::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(TensorBlob::from_bytes(b"NTC2\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(TensorBlob::from_bytes(b"NT"), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::new(serde_json::json!({"kind": "test"}));
        ck.put("net/layer0.w", vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.get_f64("net/layer0.w", 4).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(back.get_f64("net/layer0.w", 3).is_err());
        assert!(matches!(back.get("missing"), Err(Error::Lookup(_))));
    }
}
