use serde_json::json;

use crate::assets::{Checkpoint, RngStream};
use crate::condition::{AlignmentNet, AlignmentTrace};
use crate::error::{validate, Error, Result};
use crate::field::{export_params, import_params, Activation, Mlp, MlpTrace, Parametric};

use super::conv::{ConvStem, StemTrace};
use super::generator::round_params;
use super::model::ModelConfig;

/// Image stem `S_D` over (image ‖ mesh coordinates), camera mapping `M_D` and
/// the discriminator alignment network `T_D`. The score is `u · v_r` with
/// `u = S_D(x)`, `v = M_D(c)` and `v_r = v + α·T_D(v, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorBundle {
    pub cfg: ModelConfig,
    pub stem: ConvStem,
    pub camera: Mlp,
    pub align: AlignmentNet,
}

#[derive(Clone, Debug)]
pub struct DiscTrace {
    stem: StemTrace,
    camera: MlpTrace,
    align: Option<AlignmentTrace>,
    alpha: f64,
    pub u: Vec<f64>,
    pub v_r: Vec<f64>,
    pub score: f64,
}

pub const CAMERA_CONDITION_DIM: usize = 12;
pub const INPUT_CHANNELS: usize = 6;

impl DiscriminatorBundle {
    pub fn new(cfg: &ModelConfig, rng: &RngStream) -> Result<Self> {
        Self::with_activation(cfg, Activation::LeakyRelu, rng)
    }

    pub fn with_activation(cfg: &ModelConfig, act: Activation, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng.substream(0x646973);
        let stem = ConvStem::new(cfg.image_size, cfg.image_size, INPUT_CHANNELS, &cfg.stem_widths, cfg.u_dim, act, &mut r);
        let camera = Mlp::random(&[CAMERA_CONDITION_DIM, cfg.camera_hidden, cfg.u_dim], Activation::LeakyRelu, &mut r);
        let align = AlignmentNet::new(cfg.u_dim, cfg.r_dim, cfg.align_width, cfg.align_blocks, &mut r);
        let mut d = Self {
            cfg: cfg.clone(),
            stem,
            camera,
            align,
        };
        round_params(&mut d);
        Ok(d)
    }

    pub fn input_len(&self) -> usize {
        self.cfg.image_size * self.cfg.image_size * INPUT_CHANNELS
    }

    /// Interleaves a 3-channel image and a 3-channel coordinate map (HWC).
    pub fn assemble(image: &[f64], coords: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(image.len() * 2);
        for (a, b) in image.chunks_exact(3).zip(coords.chunks_exact(3)) {
            x.extend_from_slice(a);
            x.extend_from_slice(b);
        }
        x
    }

    /// Extracts the image channels of an input-shaped gradient.
    pub fn image_part(dx: &[f64]) -> Vec<f64> {
        dx.chunks_exact(INPUT_CHANNELS).flat_map(|p| p[..3].iter().copied()).collect()
    }

    pub fn forward_trace(&self, x: &[f64], cam: &[f64], r: &[f64], alpha: f64) -> Result<DiscTrace> {
        validate(x.len() == self.input_len(), || {
            format!("discriminator expects {} inputs, got {}", self.input_len(), x.len())
        })?;
        self.camera.check_input(cam)?;
        let stem = self.stem.forward_trace(x);
        let camera = self.camera.forward_trace(cam, 1);
        let v = camera.output.clone();
        let (align, v_r) = if alpha == 0.0 {
            (None, v)
        } else {
            let t = self.align.forward_trace(&v, r, 1)?;
            let v_r = v.iter().zip(&t.output).map(|(a, b)| a + alpha * b).collect();
            (Some(t), v_r)
        };
        let u = stem.output.clone();
        let score = u.iter().zip(&v_r).map(|(a, b)| a * b).sum();
        Ok(DiscTrace {
            stem,
            camera,
            align,
            alpha,
            u,
            v_r,
            score,
        })
    }

    pub fn score(&self, x: &[f64], cam: &[f64], r: &[f64], alpha: f64) -> Result<f64> {
        Ok(self.forward_trace(x, cam, r, alpha)?.score)
    }

    pub fn grad_split<'a>(&self, grad: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        let (s, rest) = grad.split_at_mut(self.stem.num_params());
        let (c, a) = rest.split_at_mut(self.camera.num_params());
        (s, c, a)
    }

    /// Adds `dscore · ∇θ score` into `grad` and returns `dscore · ∇ₓ score`.
    pub fn backward(&self, trace: &DiscTrace, dscore: f64, grad: &mut [f64]) -> Vec<f64> {
        let (gs, gc, ga) = self.grad_split(grad);
        let du: Vec<f64> = trace.v_r.iter().map(|v| dscore * v).collect();
        let dx = self.stem.backward(&trace.stem, &du, gs);
        let dv_r: Vec<f64> = trace.u.iter().map(|u| dscore * u).collect();
        let mut dv = dv_r.clone();
        if let Some(t) = &trace.align {
            let dt: Vec<f64> = dv_r.iter().map(|v| trace.alpha * v).collect();
            let (dmain, _) = self.align.backward(t, &dt, ga);
            for (a, b) in dv.iter_mut().zip(&dmain) {
                *a += b;
            }
        }
        self.camera.backward(&trace.camera, &dv, gc);
        dx
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(json!({ "kind": "discriminator", "model": self.cfg, "activation": self.stem.act }));
        export_params(self, "d", &mut ck)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| Error::Format(format!("discriminator manifest: {e}")))?;
        let act: Activation = serde_json::from_value(ck.meta["activation"].clone())
            .map_err(|e| Error::Format(format!("discriminator manifest: {e}")))?;
        let mut d = Self::with_activation(&cfg, act, &RngStream::new(0, 0))?;
        import_params(&mut d, "d", ck)?;
        Ok(d)
    }
}

impl Parametric for DiscriminatorBundle {
    fn num_params(&self) -> usize {
        self.stem.num_params() + self.camera.num_params() + self.align.num_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.stem.visit(&mut |n, s| f(&format!("stem.{n}"), s));
        self.camera.visit(&mut |n, s| f(&format!("camera.{n}"), s));
        self.align.visit(&mut |n, s| f(&format!("align.{n}"), s));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.stem.visit_mut(&mut |n, s| f(&format!("stem.{n}"), s));
        self.camera.visit_mut(&mut |n, s| f(&format!("camera.{n}"), s));
        self.align.visit_mut(&mut |n, s| f(&format!("align.{n}"), s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            r_dim: 3,
            align_width: 6,
            align_blocks: 1,
            u_dim: 4,
            stem_widths: vec![3, 4],
            camera_hidden: 5,
            image_size: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut d = DiscriminatorBundle::with_activation(&tiny(), Activation::Softplus, &RngStream::new(1, 0)).unwrap();
        d.align.randomize_output(0.5, &mut RngStream::new(2, 0));
        let mut rng = RngStream::new(3, 0);
        let x = rng.gaussian_vec(d.input_len());
        let cam = rng.gaussian_vec(12);
        let r = rng.gaussian_vec(3);
        let trace = d.forward_trace(&x, &cam, &r, 0.7).unwrap();
        let mut grad = vec![0.0; d.num_params()];
        let dx = d.backward(&trace, 1.5, &mut grad);
        let h = 1e-6;
        for i in (0..x.len()).step_by(17) {
            let mut p = x.clone();
            p[i] += h;
            let a = d.score(&p, &cam, &r, 0.7).unwrap();
            p[i] -= 2.0 * h;
            let b = d.score(&p, &cam, &r, 0.7).unwrap();
            assert!((1.5 * (a - b) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
        let flat = d.flat_params();
        for i in (0..flat.len()).step_by(29) {
            let mut e = d.clone();
            let mut p = flat.clone();
            p[i] += h;
            e.set_flat_params(&p);
            let a = e.score(&x, &cam, &r, 0.7).unwrap();
            p[i] -= 2.0 * h;
            e.set_flat_params(&p);
            let b = e.score(&x, &cam, &r, 0.7).unwrap();
            let fd = 1.5 * (a - b) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_init_alignment_is_unconditional() {
        let d = DiscriminatorBundle::new(&tiny(), &RngStream::new(1, 0)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let x = rng.gaussian_vec(d.input_len());
        let cam = rng.gaussian_vec(12);
        let r = rng.gaussian_vec(3);
        assert_eq!(d.score(&x, &cam, &r, 1.0).unwrap(), d.score(&x, &cam, &r, 0.0).unwrap());
    }

    #[test]
    fn assemble_and_split() {
        let img = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let rdr = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let x = DiscriminatorBundle::assemble(&img, &rdr);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 7.0, 8.0, 9.0, 4.0, 5.0, 6.0, 10.0, 11.0, 12.0]);
        assert_eq!(DiscriminatorBundle::image_part(&x), img.to_vec());
    }
}
