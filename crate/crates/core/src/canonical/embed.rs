use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assets::{read_tensor, write_tensor, ImageBuffer, RngStream, TensorBlob};
use crate::condition::Embedding;
use crate::error::{validate, Error, Result};

/// Side length of the pooled image the toy embedder projects.
pub const POOL: usize = 8;

/// Stand-in image encoder: 8×8 average pooling of the first three channels,
/// a fixed Gaussian projection, then L2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEmbedder {
    pub dim: usize,
    pub seed: u64,
    projection: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        validate(dim >= 1, || "embedding dimension must be positive".into())?;
        let n_in = POOL * POOL * 3;
        let scale = 1.0 / (n_in as f64).sqrt();
        let projection = RngStream::new(seed, 0x656d62)
            .gaussian_vec(dim * n_in)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Ok(Self { dim, seed, projection })
    }

    pub fn pool(image: &ImageBuffer) -> Result<Vec<f64>> {
        validate(image.width >= POOL && image.height >= POOL, || {
            format!("toy embedder needs at least {POOL}x{POOL} pixels, got {}x{}", image.width, image.height)
        })?;
        validate(image.channels >= 3, || format!("toy embedder needs 3 channels, got {}", image.channels))?;
        let mut sums = vec![0.0; POOL * POOL * 3];
        let mut counts = vec![0usize; POOL * POOL];
        for y in 0..image.height {
            let cy = y * POOL / image.height;
            for x in 0..image.width {
                let cell = cy * POOL + x * POOL / image.width;
                counts[cell] += 1;
                for c in 0..3 {
                    sums[cell * 3 + c] += image.get(x, y, c) as f64;
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            for c in 0..3 {
                sums[cell * 3 + c] /= n as f64;
            }
        }
        Ok(sums)
    }

    pub fn embed(&self, image: &ImageBuffer) -> Result<Embedding> {
        let pooled = Self::pool(image)?;
        let n_in = pooled.len();
        let out = (0..self.dim)
            .map(|r| self.projection[r * n_in..(r + 1) * n_in].iter().zip(&pooled).map(|(a, b)| a * b).sum())
            .collect();
        Embedding::normalized(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdManifest {
    ids: Vec<u64>,
}

/// Embeddings keyed by sample id, stored as one `[N, d]` NTC1 tensor plus a
/// JSON list of ids in row order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub ids: Vec<u64>,
    pub values: Vec<f64>,
}

impl EmbeddingSet {
    pub const TENSOR_FILE: &'static str = "embeddings.ntc";
    pub const ID_FILE: &'static str = "ids.json";

    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_rows(ids: Vec<u64>, rows: &[Vec<f64>]) -> Result<Self> {
        validate(ids.len() == rows.len(), || format!("{} ids for {} embeddings", ids.len(), rows.len()))?;
        validate(!rows.is_empty(), || "embedding set is empty".into())?;
        let mut set = Self::new(rows[0].len());
        for (id, row) in ids.into_iter().zip(rows) {
            set.push(id, row)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u64, values: &[f64]) -> Result<()> {
        validate(values.len() == self.dim, || {
            format!("embedding for id {id} has {} entries, set dimension is {}", values.len(), self.dim)
        })?;
        validate(!self.ids.contains(&id), || format!("duplicate embedding id {id}"))?;
        self.ids.push(id);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn get(&self, id: u64) -> Result<&[f64]> {
        let k = self
            .ids
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| Error::Lookup(format!("no embedding for sample id {id}")))?;
        Ok(self.row(k))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        validate(!self.is_empty(), || "cannot save an empty embedding set".into())?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(dir.join(Self::TENSOR_FILE), &TensorBlob::from_f64(vec![self.len(), self.dim], &self.values)?)?;
        let text = serde_json::to_string_pretty(&IdManifest { ids: self.ids.clone() }).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join(Self::ID_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let blob = read_tensor(dir.join(Self::TENSOR_FILE))?;
        validate(blob.shape.len() == 2, || format!("embedding tensor must be [N, d], got {:?}", blob.shape))?;
        let path = dir.join(Self::ID_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: IdManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("id manifest: {e}")))?;
        validate(manifest.ids.len() == blob.shape[0], || {
            format!("{} ids for {} embedding rows", manifest.ids.len(), blob.shape[0])
        })?;
        let mut set = Self::new(blob.shape[1]);
        let values = blob.to_f64();
        for (k, id) in manifest.ids.into_iter().enumerate() {
            set.push(id, &values[k * set.dim..(k + 1) * set.dim])?;
        }
        Ok(set)
    }
}

/// What an embedding is looked up from.
pub enum EmbedInput<'a> {
    Image(&'a ImageBuffer),
    Id(u64),
}

/// Source of conditioning embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingProvider {
    Toy(ToyEmbedder),
    File(EmbeddingSet),
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            Self::Toy(t) => t.dim,
            Self::File(s) => s.dim,
        }
    }

    pub fn embed(&self, input: EmbedInput) -> Result<Embedding> {
        match (self, input) {
            (Self::Toy(t), EmbedInput::Image(img)) => t.embed(img),
            (Self::File(s), EmbedInput::Id(id)) => Ok(Embedding::raw(s.get(id)?.to_vec())),
            (Self::Toy(_), EmbedInput::Id(_)) => Err(Error::Validation("toy embedder needs an image, not an id".into())),
            (Self::File(_), EmbedInput::Image(_)) => Err(Error::Validation("file embeddings are looked up by id".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, w: usize, h: usize) -> ImageBuffer {
        let v = RngStream::new(seed, 0).gaussian_vec(w * h * 3);
        ImageBuffer::from_f64(w, h, 3, &v).unwrap()
    }

    #[test]
    fn toy_embeddings_are_deterministic_unit_vectors() {
        let e = ToyEmbedder::new(16, 3).unwrap();
        let img = image(1, 20, 12);
        let a = e.embed(&img).unwrap();
        assert_eq!(a, e.embed(&img).unwrap());
        assert_eq!(a, ToyEmbedder::new(16, 3).unwrap().embed(&img).unwrap());
        let n: f64 = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(a.normalized);
        assert_ne!(a, e.embed(&image(2, 20, 12)).unwrap());
        assert!(e.embed(&image(1, 7, 12)).is_err());
    }

    #[test]
    fn pooling_averages_cells() {
        let img = ImageBuffer::filled(16, 16, 3, 0.25);
        assert!(ToyEmbedder::pool(&img).unwrap().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let mut img = ImageBuffer::new(16, 16, 3);
        img.set(0, 0, 1, 4.0);
        let p = ToyEmbedder::pool(&img).unwrap();
        assert_eq!(p[1], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn file_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![0.5, -1.0, 2.0], vec![0.25, 0.0, -0.125]];
        let set = EmbeddingSet::from_rows(vec![7, 3], &rows).unwrap();
        set.save(dir.path()).unwrap();
        let back = EmbeddingSet::load(dir.path()).unwrap();
        assert_eq!(back, set);
        let p = EmbeddingProvider::File(back);
        assert_eq!(p.embed(EmbedInput::Id(3)).unwrap().values, rows[1]);
        let err = p.embed(EmbedInput::Id(4)).unwrap_err();
        assert!(matches!(err, Error::Lookup(_)));
    }

    #[test]
    fn rejects_inconsistent_sets() {
        assert!(EmbeddingSet::from_rows(vec![1, 2], &[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(EmbeddingSet::from_rows(vec![1, 1], &[vec![1.0], vec![2.0]]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let set = EmbeddingSet::from_rows(vec![1, 2], &[vec![1.0], vec![2.0]]).unwrap();
        set.save(dir.path()).unwrap();
        std::fs::write(dir.path().join(EmbeddingSet::ID_FILE), r#"{"ids": [1, 2, 3]}"#).unwrap();
        assert!(EmbeddingSet::load(dir.path()).is_err());
    }
}
