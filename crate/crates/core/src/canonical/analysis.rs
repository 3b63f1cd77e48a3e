use serde::{Deserialize, Serialize};

use crate::error::{validate, Result};
use crate::regularize::cosine;

/// Similarities of one image embedding to its main and noise prompts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSimilarity {
    pub main: f64,
    pub noise: f64,
    /// The noise prompt matches better than the main prompt.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub images: Vec<ImageSimilarity>,
    /// Per noise prompt, its mean similarity to every image in the set.
    pub average_noise: Vec<f64>,
    pub n_flagged: usize,
}

/// Compares image `i` against main prompt `i` and noise prompt `i`, and each
/// noise prompt against the whole image set.
pub fn noise_analysis(images: &[Vec<f64>], main: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<NoiseReport> {
    validate(!images.is_empty(), || "noise analysis needs at least one image".into())?;
    validate(main.len() == images.len() && noise.len() == images.len(), || {
        format!(
            "need one main and one noise prompt per image: {} images, {} main, {} noise",
            images.len(),
            main.len(),
            noise.len()
        )
    })?;
    let dim = images[0].len();
    for v in images.iter().chain(main).chain(noise) {
        validate(v.len() == dim, || format!("embedding dimensions differ: {} vs {dim}", v.len()))?;
    }
    let mut rows = Vec::with_capacity(images.len());
    for ((img, m), n) in images.iter().zip(main).zip(noise) {
        let main = cosine(img, m)?;
        let noise = cosine(img, n)?;
        rows.push(ImageSimilarity {
            main,
            noise,
            flagged: noise > main,
        });
    }
    let average_noise = noise
        .iter()
        .map(|n| -> Result<f64> {
            let mut s = 0.0;
            for img in images {
                s += cosine(img, n)?;
            }
            Ok(s / images.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseReport {
        n_flagged: rows.iter().filter(|r| r.flagged).count(),
        images: rows,
        average_noise,
    })
}
