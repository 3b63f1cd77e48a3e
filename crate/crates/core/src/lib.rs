//! Deformable tri-plane volume generation with canonicalization, zero-initialized
//! alignment conditioning and stochastic Jacobian-norm regularization.
//!
//! The crate is organized bottom-up:
//!
//! * [`assets`]: random streams, the NTC1 tensor container, images, OBJ/PPM I/O.
//! * [`geometry`]: triangle meshes, nearest-triangle queries, the surface-field
//!   deformation and a linear toy morphable model.
//! * [`field`]: tri-plane feature grids and small dense networks with forward-mode
//!   and reverse-mode derivatives.
//! * [`render`]: cameras, alpha-compositing volume quadrature and the vertex-coordinate
//!   rasterizer used for discriminator conditioning.
//! * [`regularize`]: Frobenius-norm estimators, alignment regularizers and the
//!   editing objective.
//! * [`condition`]: mapping and alignment networks and projection scoring.
//! * [`canonical`]: latent inversion, neutral re-rendering, embeddings and the
//!   noise-similarity report.
//! * [`train`]: the desk-scale adversarial pipeline and collapse diagnostics.

pub mod assets;
pub mod canonical;
pub mod condition;
pub mod error;
pub mod field;
pub mod geometry;
pub mod regularize;
pub mod render;
pub mod train;

pub use error::{Error, Result};
