use serde_json::json;

use crate::assets::{Checkpoint, RngStream};
use crate::condition::{AlignmentNet, AlignmentTrace};
use crate::error::{Error, Result};
use crate::field::{export_params, import_params, Activation, DecoderNet, Dense, Mlp, MlpTrace, Parametric, TriPlaneField};
use crate::geometry::{MorphParams, SurfaceField, ToyMorphModel, Vec3};
use crate::render::{Camera, QuadratureSpec, RaySamples, VolumeTrace};

use super::model::ModelConfig;

/// Mapping network, linear style-to-tri-plane synthesis, feature decoder and
/// the generator alignment network.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBundle {
    pub cfg: ModelConfig,
    pub mapping: Mlp,
    pub synthesis: Dense,
    pub decoder: DecoderNet,
    pub align: AlignmentNet,
}

/// Forward intermediates of one generated sample.
#[derive(Clone, Debug)]
pub struct GenTrace {
    pub map: MlpTrace,
    pub w: Vec<f64>,
    pub align: Option<AlignmentTrace>,
    pub alpha: f64,
    pub w_r: Vec<f64>,
    pub planes: TriPlaneField,
    pub volume: VolumeTrace,
    pub image: Vec<f64>,
}

/// Flat gradient with the bundle's parameter layout.
pub struct GenGradView<'a> {
    pub mapping: &'a mut [f64],
    pub synthesis: &'a mut [f64],
    pub decoder: &'a mut [f64],
    pub align: &'a mut [f64],
}

/// Adjoints flowing into a generated sample. Only `image` is required.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenAdjoint<'a> {
    pub image: &'a [f64],
    pub w_r: Option<&'a [f64]>,
    pub w: Option<&'a [f64]>,
    /// Adjoint on the alignment network output `T_G(w, r)`.
    pub align_out: Option<&'a [f64]>,
    pub planes: Option<&'a [f64]>,
    pub decoder: Option<&'a [f64]>,
}

fn add_into(dst: &mut [f64], src: Option<&[f64]>) {
    if let Some(s) = src {
        for (a, b) in dst.iter_mut().zip(s) {
            *a += b;
        }
    }
}

pub(crate) fn round_params(p: &mut dyn Parametric) {
    p.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v = super::adam::round_f32(*v)));
}

impl GeneratorBundle {
    pub fn new(cfg: &ModelConfig, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng.substream(0x67656e);
        let mapping = Mlp::random(&[cfg.z_dim, cfg.mapping_hidden, cfg.w_dim], Activation::LeakyRelu, &mut r);
        let synthesis = Dense::random(cfg.w_dim, cfg.plane_len(), cfg.synthesis_gain, &mut r);
        let mut decoder = DecoderNet::random(
            cfg.plane_channels,
            &[cfg.decoder_hidden],
            cfg.feature_dim,
            Activation::LeakyRelu,
            &mut r,
        );
        let last = decoder.mlp.layers.last_mut().unwrap();
        last.bias[cfg.feature_dim] = cfg.decoder_density_bias;
        let align = AlignmentNet::new(cfg.w_dim, cfg.r_dim, cfg.align_width, cfg.align_blocks, &mut r);
        let mut g = Self {
            cfg: cfg.clone(),
            mapping,
            synthesis,
            decoder,
            align,
        };
        round_params(&mut g);
        Ok(g)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let b = self.cfg.bounds;
        (Vec3::new(-b, -b, -b), Vec3::new(b, b, b))
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::midpoint(self.cfg.n_samples)
    }

    /// Deformed sample positions for a camera and morph configuration.
    pub fn ray_samples(&self, model: &ToyMorphModel, cam: &Camera, geo: &MorphParams) -> Result<RaySamples> {
        let sf = SurfaceField::new(model.morph(geo)?, model.canonical_mesh()?)?;
        RaySamples::prepare(cam, Some(&sf), &self.quadrature())
    }

    pub fn style(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.mapping.forward(z)
    }

    /// Tri-plane produced by the synthesis map for style `w`.
    pub fn planes(&self, w: &[f64]) -> Result<TriPlaneField> {
        let (lo, hi) = self.bounds();
        TriPlaneField::new(
            self.cfg.plane_resolution,
            self.cfg.plane_channels,
            lo,
            hi,
            self.synthesis.forward(w),
        )
    }

    /// Aligned style `w + α·T_G(w, r)`; `α = 0` returns `w` unchanged.
    pub fn aligned(&self, w: &[f64], r: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if alpha == 0.0 {
            return Ok(w.to_vec());
        }
        let d = self.align.forward(w, r, 1)?;
        Ok(w.iter().zip(&d).map(|(a, b)| a + alpha * b).collect())
    }

    /// Feature image for style `w` (already aligned).
    pub fn render_style(&self, w: &[f64], samples: &RaySamples) -> Result<Vec<f64>> {
        samples.render_forward(&self.planes(w)?, &self.decoder)
    }

    pub fn generate(&self, z: &[f64], r: &[f64], alpha: f64, samples: &RaySamples) -> Result<Vec<f64>> {
        let w = self.style(z)?;
        self.render_style(&self.aligned(&w, r, alpha)?, samples)
    }

    pub fn forward_trace(&self, z: &[f64], r: &[f64], alpha: f64, samples: &RaySamples) -> Result<GenTrace> {
        self.mapping.check_input(z)?;
        let map = self.mapping.forward_trace(z, 1);
        let w = map.output.clone();
        let (align, w_r) = if alpha == 0.0 {
            (None, w.clone())
        } else {
            let t = self.align.forward_trace(&w, r, 1)?;
            let w_r = w.iter().zip(&t.output).map(|(a, b)| a + alpha * b).collect();
            (Some(t), w_r)
        };
        let planes = self.planes(&w_r)?;
        let (image, volume) = samples.render(&planes, &self.decoder)?;
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("generated image has non-finite values".into()));
        }
        Ok(GenTrace {
            map,
            w,
            align,
            alpha,
            w_r,
            planes,
            volume,
            image,
        })
    }

    pub fn grad_view<'a>(&self, grad: &'a mut [f64]) -> GenGradView<'a> {
        let (mapping, rest) = grad.split_at_mut(self.mapping.num_params());
        let (synthesis, rest) = rest.split_at_mut(self.synthesis.num_params());
        let (decoder, align) = rest.split_at_mut(self.decoder.num_params());
        GenGradView {
            mapping,
            synthesis,
            decoder,
            align,
        }
    }

    /// Backpropagates the adjoints in `adj` into `grad` (bundle layout).
    pub fn backward(&self, trace: &GenTrace, samples: &RaySamples, adj: &GenAdjoint, grad: &mut [f64]) {
        let g = self.grad_view(grad);
        let mut dplanes = vec![0.0; trace.planes.len()];
        if let Some(p) = adj.planes {
            dplanes.copy_from_slice(p);
        }
        if let Some(d) = adj.decoder {
            for (a, b) in g.decoder.iter_mut().zip(d) {
                *a += b;
            }
        }
        samples.backward(&trace.planes, &self.decoder, &trace.volume, adj.image, &mut dplanes, g.decoder);
        let mut dw_r = self.synthesis.backward_batch(&trace.w_r, &dplanes, 1, g.synthesis);
        add_into(&mut dw_r, adj.w_r);
        let mut dw = dw_r.clone();
        if let Some(t) = &trace.align {
            let mut dt: Vec<f64> = dw_r.iter().map(|v| trace.alpha * v).collect();
            add_into(&mut dt, adj.align_out);
            let (dmain, _) = self.align.backward(t, &dt, g.align);
            add_into(&mut dw, Some(&dmain));
        }
        add_into(&mut dw, adj.w);
        self.mapping.backward(&trace.map, &dw, g.mapping);
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(json!({ "kind": "generator", "model": self.cfg }));
        export_params(self, "g", &mut ck)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| Error::Format(format!("generator manifest: {e}")))?;
        let mut g = Self::new(&cfg, &RngStream::new(0, 0))?;
        import_params(&mut g, "g", ck)?;
        Ok(g)
    }
}

impl Parametric for GeneratorBundle {
    fn num_params(&self) -> usize {
        self.mapping.num_params() + self.synthesis.num_params() + self.decoder.num_params() + self.align.num_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.mapping.visit(&mut |n, s| f(&format!("mapping.{n}"), s));
        self.synthesis.visit(&mut |n, s| f(&format!("synthesis.{n}"), s));
        self.decoder.visit(&mut |n, s| f(&format!("decoder.{n}"), s));
        self.align.visit(&mut |n, s| f(&format!("align.{n}"), s));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.mapping.visit_mut(&mut |n, s| f(&format!("mapping.{n}"), s));
        self.synthesis.visit_mut(&mut |n, s| f(&format!("synthesis.{n}"), s));
        self.decoder.visit_mut(&mut |n, s| f(&format!("decoder.{n}"), s));
        self.align.visit_mut(&mut |n, s| f(&format!("align.{n}"), s));
    }
}
