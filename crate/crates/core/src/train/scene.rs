use serde::{Deserialize, Serialize};

use crate::assets::{ImageBuffer, RngStream};
use crate::error::{validate, Result};
use crate::field::FieldSample;
use crate::geometry::{MorphParams, ToyMorphModel, TriMesh, Vec3};
use crate::render::{render_image, render_mesh_coords, Camera, QuadratureSpec, VolumeField};

/// Synthetic dataset settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub resolution: usize,
    pub n_blobs: usize,
    pub blob_radius: f64,
    pub blob_peak: f64,
    pub camera_distance: f64,
    pub azimuth_range: f64,
    pub elevation_range: f64,
    pub n_samples: usize,
    pub shape_scale: f64,
    pub expression_scale: f64,
    pub pose_scale: f64,
    pub flip_probability: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            n_blobs: 20,
            blob_radius: 0.14,
            blob_peak: 40.0,
            camera_distance: 2.7,
            azimuth_range: 0.5,
            elevation_range: 0.25,
            n_samples: 32,
            shape_scale: 1.0,
            expression_scale: 1.0,
            pose_scale: 0.1,
            flip_probability: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.resolution >= 4, || "scene resolution must be at least 4".into())?;
        validate(self.n_blobs >= 1, || "scene needs at least one blob".into())?;
        validate(self.blob_radius > 0.0 && self.blob_peak > 0.0, || "blob radius and peak must be positive".into())?;
        validate(self.camera_distance > 1.5, || "camera must stay outside the unit volume".into())?;
        validate((0.0..=1.0).contains(&self.flip_probability), || "flip probability must lie in [0, 1]".into())?;
        validate(self.n_samples >= 2, || "need at least 2 samples per ray".into())
    }

    /// Camera with the dataset's intrinsics and clipping range.
    pub fn camera(&self, azimuth: f64, elevation: f64) -> Result<Camera> {
        let d = self.camera_distance;
        Camera::orbit(azimuth, elevation, d, self.resolution as f64, self.resolution, self.resolution, d - 1.0, d + 1.0)
    }
}

/// Per-sample appearance: anchor vertices and blob colors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub anchors: Vec<usize>,
    pub colors: Vec<[f64; 3]>,
}

impl Appearance {
    pub fn sample(seed: u64, n_blobs: usize, vertex_count: usize) -> Self {
        let mut rng = RngStream::new(seed, 0x61707065);
        let anchors = (0..n_blobs).map(|_| rng.below(vertex_count)).collect();
        let colors = (0..n_blobs)
            .map(|_| [0.15 + 0.85 * rng.uniform(), 0.15 + 0.85 * rng.uniform(), 0.15 + 0.85 * rng.uniform()])
            .collect();
        Self { anchors, colors }
    }
}

/// Analytic volume: isotropic Gaussian density blobs centered on mesh
/// vertices, color the density-weighted mix of blob colors.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobScene {
    pub centers: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub radius: f64,
    pub peak: f64,
}

impl BlobScene {
    pub fn anchored(mesh: &TriMesh, app: &Appearance, radius: f64, peak: f64) -> Self {
        Self {
            centers: app.anchors.iter().map(|&i| mesh.vertices()[i]).collect(),
            colors: app.colors.clone(),
            radius,
            peak,
        }
    }

    pub fn mirrored_x(&self) -> Self {
        Self {
            centers: self.centers.iter().map(|c| Vec3::new(-c.x, c.y, c.z)).collect(),
            ..self.clone()
        }
    }
}

impl VolumeField for BlobScene {
    fn feature_dim(&self) -> usize {
        3
    }

    fn query(&self, x: Vec3) -> FieldSample {
        let inv = 1.0 / (2.0 * self.radius * self.radius);
        let mut rho = 0.0;
        let mut col = [0.0; 3];
        for (c, k) in self.centers.iter().zip(&self.colors) {
            let d2 = (x - *c).norm_sq();
            let g = (-d2 * inv).exp();
            rho += g;
            for i in 0..3 {
                col[i] += g * k[i];
            }
        }
        let feature = if rho > 0.0 { col.iter().map(|v| v / rho).collect() } else { vec![0.0; 3] };
        FieldSample {
            feature,
            density: self.peak * rho,
        }
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub id: u64,
    pub image: ImageBuffer,
    pub camera: Camera,
    pub morph: MorphParams,
    /// Mesh-coordinate rendering under `camera`.
    pub rdr: ImageBuffer,
    pub appearance_seed: u64,
    pub flipped: bool,
}

/// Draws labelled synthetic scenes from a toy morphable model.
#[derive(Clone, Debug)]
pub struct SceneSampler {
    pub model: ToyMorphModel,
    pub cfg: SceneConfig,
}

impl SceneSampler {
    pub fn new(model: ToyMorphModel, cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { model, cfg })
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::midpoint(self.cfg.n_samples)
    }

    pub fn scene(&self, morph: &MorphParams, appearance_seed: u64) -> Result<BlobScene> {
        let mesh = self.model.morph(morph)?;
        let app = Appearance::sample(appearance_seed, self.cfg.n_blobs, mesh.vertex_count());
        Ok(BlobScene::anchored(&mesh, &app, self.cfg.blob_radius, self.cfg.blob_peak))
    }

    /// Ground-truth scene of a record moved to the canonical configuration.
    pub fn canonical_scene(&self, appearance_seed: u64) -> Result<BlobScene> {
        let mesh = self.model.canonical_mesh()?;
        let app = Appearance::sample(appearance_seed, self.cfg.n_blobs, mesh.vertex_count());
        Ok(BlobScene::anchored(&mesh, &app, self.cfg.blob_radius, self.cfg.blob_peak))
    }

    pub fn render(&self, scene: &BlobScene, cam: &Camera) -> Result<ImageBuffer> {
        Ok(render_image(scene, None, cam, &self.quadrature())?.0)
    }
}

/// Samples one record: morph parameters, appearance seed, a random orbit
/// camera, the rendered image and mesh-coordinate map; with probability
/// `flip_probability` the image is mirrored and the camera replaced by its
/// mirror.
pub fn sample_scene(sampler: &SceneSampler, id: u64, rng: &RngStream) -> Result<SceneRecord> {
    let cfg = &sampler.cfg;
    let mut rng = rng.substream(id);
    let dims = sampler.model.dims();
    let scaled = |rng: &mut RngStream, n: usize, s: f64| -> Vec<f64> { rng.gaussian_vec(n).into_iter().map(|v| v * s).collect() };
    let morph = MorphParams {
        beta: scaled(&mut rng, dims.shape, cfg.shape_scale),
        theta: scaled(&mut rng, dims.pose, cfg.pose_scale),
        psi: scaled(&mut rng, dims.expression, cfg.expression_scale),
    };
    let appearance_seed = rng.next_u64();
    let azimuth = cfg.azimuth_range * (2.0 * rng.uniform() - 1.0);
    let elevation = cfg.elevation_range * (2.0 * rng.uniform() - 1.0);
    let flipped = rng.bernoulli(cfg.flip_probability);

    let cam = cfg.camera(azimuth, elevation)?;
    let scene = sampler.scene(&morph, appearance_seed)?;
    let mut image = sampler.render(&scene, &cam)?;
    let camera = if flipped {
        image = image.mirror_horizontal();
        cam.mirrored()
    } else {
        cam
    };
    let mesh = sampler.model.morph(&morph)?;
    let rdr = render_mesh_coords(&mesh, &camera);
    Ok(SceneRecord {
        id,
        image,
        camera,
        morph,
        rdr,
        appearance_seed,
        flipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MorphDims;

    fn sampler(res: usize) -> SceneSampler {
        let model = ToyMorphModel::synthetic(3, 2, MorphDims { shape: 6, pose: 3, expression: 4 });
        SceneSampler::new(
            model,
            SceneConfig {
                resolution: res,
                n_samples: 24,
                ..SceneConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn deterministic_records() {
        let s = sampler(12);
        let rng = RngStream::new(5, 0);
        let a = sample_scene(&s, 3, &rng).unwrap();
        let b = sample_scene(&s, 3, &rng).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.morph, b.morph);
        assert_eq!(a.rdr, b.rdr);
        assert_eq!(a.camera, b.camera);
        let c = sample_scene(&s, 4, &rng).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn zero_morph_anchors_on_template() {
        let s = sampler(8);
        let zero = MorphParams::zeros(s.model.dims());
        let scene = s.scene(&zero, 11).unwrap();
        let app = Appearance::sample(11, s.cfg.n_blobs, s.model.template().vertex_count());
        for (c, &i) in scene.centers.iter().zip(&app.anchors) {
            assert_eq!(*c, s.model.template().vertices()[i]);
        }
    }

    #[test]
    fn flip_matches_mirrored_extrinsics() {
        let s = sampler(16);
        let rng = RngStream::new(2, 0);
        let rec = (0..40)
            .map(|id| sample_scene(&s, id, &rng).unwrap())
            .find(|r| r.flipped)
            .expect("some record is flipped");
        let scene = s.scene(&rec.morph, rec.appearance_seed).unwrap();
        let original_cam = rec.camera.mirrored();
        let unflipped = s.render(&scene, &original_cam).unwrap();
        assert_eq!(rec.image, unflipped.mirror_horizontal());
        // the mirrored scene seen through the record camera is the flipped image
        let oracle = s.render(&scene.mirrored_x(), &rec.camera).unwrap();
        for (a, b) in oracle.pixels.iter().zip(&rec.image.pixels) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn images_have_content_and_background() {
        let s = sampler(16);
        let rec = sample_scene(&s, 0, &RngStream::new(1, 0)).unwrap();
        let max = rec.image.pixels.iter().cloned().fold(0.0f32, f32::max);
        assert!(max > 0.3);
        assert!(rec.image.get(0, 0, 0) < 1e-4);
        assert!(rec.rdr.pixels.iter().any(|&v| v != crate::render::BACKGROUND_SENTINEL));
    }
}
