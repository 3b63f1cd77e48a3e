//! Latent mapping, zero-initialized alignment networks and projection scoring.

mod align;
mod vectors;

pub use align::{AlignmentNet, AlignmentTrace};
pub use vectors::{align_style, discriminate, edit_style, map_latent, zero_init, Embedding, LatentVector, StyleVector};
