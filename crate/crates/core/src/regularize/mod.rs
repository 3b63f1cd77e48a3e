//! Frobenius-norm estimators for Jacobians, the alignment regularizers, a
//! power-iteration spectral norm and the text-editing objective.

mod estimators;
mod losses;
mod matrix;

pub use estimators::{exact_frob_sq, fd_frob_sq, hutchinson_frob_sq, r_jac, Estimate, ProbeSpec};
pub use losses::{cosine, edit_loss, r_norm, RegWeights};
pub use matrix::{spectral_norm, Matrix};
