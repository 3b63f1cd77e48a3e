use serde::{Deserialize, Serialize};

use crate::error::{validate, Result};

/// Network sizes shared by the generator and discriminator bundles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub r_dim: usize,
    pub mapping_hidden: usize,
    pub plane_resolution: usize,
    pub plane_channels: usize,
    /// Half extent of the cubic tri-plane bounds.
    pub bounds: f64,
    pub synthesis_gain: f64,
    pub decoder_hidden: usize,
    pub decoder_density_bias: f64,
    pub feature_dim: usize,
    pub align_width: usize,
    pub align_blocks: usize,
    pub u_dim: usize,
    pub stem_widths: Vec<usize>,
    pub camera_hidden: usize,
    pub image_size: usize,
    pub n_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            z_dim: 64,
            w_dim: 64,
            r_dim: 32,
            mapping_hidden: 64,
            plane_resolution: 16,
            plane_channels: 4,
            bounds: 1.0,
            synthesis_gain: 0.5,
            decoder_hidden: 16,
            decoder_density_bias: -1.0,
            feature_dim: 3,
            align_width: 64,
            align_blocks: 2,
            u_dim: 32,
            stem_widths: vec![16, 32, 64],
            camera_hidden: 32,
            image_size: 32,
            n_samples: 12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("z_dim", self.z_dim),
            ("w_dim", self.w_dim),
            ("mapping_hidden", self.mapping_hidden),
            ("plane_resolution", self.plane_resolution),
            ("plane_channels", self.plane_channels),
            ("decoder_hidden", self.decoder_hidden),
            ("feature_dim", self.feature_dim),
            ("align_width", self.align_width),
            ("u_dim", self.u_dim),
            ("camera_hidden", self.camera_hidden),
            ("image_size", self.image_size),
        ] {
            validate(v > 0, || format!("{name} must be positive"))?;
        }
        validate(self.plane_resolution >= 2, || "plane_resolution must be at least 2".into())?;
        validate(self.n_samples >= 2, || "n_samples must be at least 2".into())?;
        validate(self.bounds > 0.0, || "bounds must be positive".into())?;
        validate(!self.stem_widths.is_empty(), || "stem needs at least one convolution".into())
    }

    pub fn plane_len(&self) -> usize {
        3 * self.plane_resolution * self.plane_resolution * self.plane_channels
    }
}
