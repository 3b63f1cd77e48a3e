use crate::assets::ImageBuffer;
use crate::condition::StyleVector;
use crate::error::{validate, Result};
use crate::field::NeuralField;
use crate::geometry::{MorphParams, ToyMorphModel, Vec3};
use crate::render::{render_image, Camera, RaySamples};
use crate::train::GeneratorBundle;

/// Distance of the neutral camera from the origin, on the −z axis.
pub const NEUTRAL_DISTANCE: f64 = 2.7;

/// Frontal camera and canonical geometry used for canonical renders. `morph`
/// holds the canonical coefficients; the rendered geometry is the model's
/// canonical mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct NeutralFrame {
    pub camera: Camera,
    pub morph: MorphParams,
}

impl NeutralFrame {
    /// Square frontal view with focal length equal to the width and a depth
    /// range covering the unit volume.
    pub fn new(model: &ToyMorphModel, resolution: usize) -> Result<Self> {
        validate(resolution >= 1, || "neutral frame needs a positive resolution".into())?;
        let d = NEUTRAL_DISTANCE;
        let camera = Camera::look_at(
            Vec3::new(0.0, 0.0, -d),
            Vec3::ZERO,
            Vec3::new(0.0, 1.0, 0.0),
            resolution as f64,
            resolution,
            resolution,
            d - 1.0,
            d + 1.0,
        )?;
        Ok(Self {
            camera,
            morph: model.canonical_params(),
        })
    }
}

impl NeutralFrame {
    /// Ray samples of the neutral view. The observed geometry is the canonical
    /// mesh itself, so the deformation is the identity.
    pub fn ray_samples(&self, g: &GeneratorBundle) -> Result<RaySamples> {
        RaySamples::prepare(&self.camera, None, &g.quadrature())
    }
}

/// Renders `w` in the neutral frame, sampling canonical space directly.
pub fn canonical_render(g: &GeneratorBundle, w: &StyleVector, frame: &NeutralFrame) -> Result<ImageBuffer> {
    let planes = g.planes(&w.values)?;
    let field = NeuralField::new(&planes, &g.decoder)?;
    Ok(render_image(&field, None, &frame.camera, &g.quadrature())?.0)
}
