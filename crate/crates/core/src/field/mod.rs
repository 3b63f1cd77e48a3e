//! The tri-plane neural volume: feature-plane sampling, small dense networks
//! (forward pass, tangent propagation, reverse accumulation) and the decoder
//! producing per-point features and density.

mod decoder;
mod nn;
mod triplane;

pub use decoder::{DecoderNet, FieldSample, NeuralField};
pub use nn::{
    export_params, import_params, jacobian_by_jvp, softplus, sigmoid, Activation, Dense, Mlp, MlpTrace,
    Parametric,
};
pub use triplane::{PlaneTaps, TriPlaneField};
