//! Canonicalization: latent inversion of a posed image, re-rendering in the
//! neutral frame, the embedding socket and the prompt-noise similarity report.

mod analysis;
mod embed;
mod frame;
mod invert;

pub use analysis::{noise_analysis, ImageSimilarity, NoiseReport};
pub use embed::{EmbedInput, EmbeddingProvider, EmbeddingSet, ToyEmbedder, POOL};
pub use frame::{canonical_render, NeutralFrame, NEUTRAL_DISTANCE};
pub use invert::{invert, invert_from, mean_style, GradientMode, ImageDistance, Inversion, InversionConfig};
