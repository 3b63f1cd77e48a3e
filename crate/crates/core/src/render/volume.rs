use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::{ImageBuffer, RngStream};
use crate::error::{validate, Result};
use crate::field::{FieldSample, NeuralField};
use crate::geometry::{SurfaceField, Vec3};

use super::camera::{Camera, Ray};

/// Anything that can be queried for `(feature, density)` at a point.
pub trait VolumeField: Sync {
    fn feature_dim(&self) -> usize;
    fn query(&self, x: Vec3) -> FieldSample;
}

impl VolumeField for NeuralField<'_> {
    fn feature_dim(&self) -> usize {
        self.decoder.feature_dim
    }

    fn query(&self, x: Vec3) -> FieldSample {
        NeuralField::query(self, x)
    }
}

/// Closure-backed field, handy for analytic scenes.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(Vec3) -> FieldSample + Sync> VolumeField for FnField<F> {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn query(&self, x: Vec3) -> FieldSample {
        (self.f)(x)
    }
}

/// Discretization of the rendering integral along each ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub n_samples: usize,
    #[serde(default)]
    pub stratified: bool,
    /// Seed and stream of the jitter generator; ray `k` uses substream `k`.
    #[serde(default = "default_jitter")]
    pub jitter: RngStream,
}

fn default_jitter() -> RngStream {
    RngStream::new(0, 0x6a69)
}

impl QuadratureSpec {
    pub fn midpoint(n_samples: usize) -> Self {
        Self {
            n_samples,
            stratified: false,
            jitter: default_jitter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate(self.n_samples >= 2, || "quadrature needs at least 2 samples per ray".into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    pub feature: Vec<f64>,
    /// Transmittance after the last sample.
    pub transmittance: f64,
    /// Expected termination distance normalized by the accumulated weight.
    pub depth: f64,
    pub weight_sum: f64,
}

const DEPTH_EPS: f64 = 1e-10;

/// Sample depths on `[t_near, t_far]` and the (constant) bin width: bin
/// midpoints, or one uniform draw per bin when stratified.
pub fn sample_depths(quad: &QuadratureSpec, t_near: f64, t_far: f64, ray_index: usize) -> (Vec<f64>, f64) {
    let n = quad.n_samples;
    let delta = (t_far - t_near) / n as f64;
    let ts = if quad.stratified {
        let mut rng = quad.jitter.substream(ray_index as u64);
        (0..n).map(|i| t_near + (i as f64 + rng.uniform()) * delta).collect()
    } else {
        (0..n).map(|i| t_near + (i as f64 + 0.5) * delta).collect()
    };
    (ts, delta)
}

/// Discrete compositing: `T_i = exp(-Σ_{j<i} σ_j δ)`, `a_i = 1 - exp(-σ_i δ)`,
/// `w_i = T_i a_i`. Writes the weights into `weights` and returns the final
/// transmittance.
#[inline]
pub fn composite(densities: &[f64], delta: f64, weights: &mut [f64]) -> f64 {
    let mut log_t = 0.0;
    let mut t = 1.0;
    for (w, &sigma) in weights.iter_mut().zip(densities) {
        let tau = sigma * delta;
        let next_log = log_t - tau;
        let next_t = next_log.exp();
        // T_i - T_{i+1} = T_i (1 - e^{-τ})
        *w = t * (-(-tau).exp_m1());
        log_t = next_log;
        t = next_t;
    }
    t
}

/// Renders one ray. Sample points are deformed by `sf` (when given) before the
/// field is queried; spacing stays in the undeformed ray parameter.
pub fn render_ray(field: &dyn VolumeField, sf: Option<&SurfaceField>, ray: &Ray, quad: &QuadratureSpec) -> RayResult {
    let (ts, delta) = sample_depths(quad, ray.t_near, ray.t_far, ray.index);
    let n = ts.len();
    let dim = field.feature_dim();
    let mut feats = Vec::with_capacity(n * dim);
    let mut dens = Vec::with_capacity(n);
    for &t in &ts {
        let mut x = ray.at(t);
        if let Some(sf) = sf {
            x = sf.deform(x).expect("surface field is validated non-empty");
        }
        let s = field.query(x);
        feats.extend_from_slice(&s.feature);
        dens.push(s.density);
    }
    let mut weights = vec![0.0; n];
    let transmittance = composite(&dens, delta, &mut weights);
    let mut feature = vec![0.0; dim];
    let mut wsum = 0.0;
    let mut wt = 0.0;
    for i in 0..n {
        let w = weights[i];
        wsum += w;
        wt += w * ts[i];
        for (f, v) in feature.iter_mut().zip(&feats[i * dim..(i + 1) * dim]) {
            *f += w * v;
        }
    }
    RayResult {
        feature,
        transmittance,
        depth: wt / wsum.max(DEPTH_EPS),
        weight_sum: wsum,
    }
}

/// Renders every pixel: a feature image and a single-channel depth image.
pub fn render_image(
    field: &dyn VolumeField,
    sf: Option<&SurfaceField>,
    cam: &Camera,
    quad: &QuadratureSpec,
) -> Result<(ImageBuffer, ImageBuffer)> {
    quad.validate()?;
    let rays = cam.make_rays();
    let results: Vec<RayResult> = rays.rays.par_iter().map(|r| render_ray(field, sf, r, quad)).collect();
    let dim = field.feature_dim();
    let mut feat = Vec::with_capacity(results.len() * dim);
    let mut depth = Vec::with_capacity(results.len());
    for r in &results {
        feat.extend_from_slice(&r.feature);
        depth.push(r.depth);
    }
    Ok((
        ImageBuffer::from_f64(cam.width, cam.height, dim, &feat)?,
        ImageBuffer::from_f64(cam.width, cam.height, 1, &depth)?,
    ))
}
