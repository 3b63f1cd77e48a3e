use crate::error::{validate, Result};
use crate::field::{sigmoid, softplus, DecoderNet, MlpTrace, Parametric, PlaneTaps, TriPlaneField};
use crate::geometry::{SurfaceField, Vec3};

use super::camera::Camera;
use super::volume::{sample_depths, QuadratureSpec};

/// Sample geometry for every ray of a camera: query positions already mapped
/// into canonical space. Depends only on camera, deformation and quadrature,
/// so it is computed once and reused across parameter updates.
#[derive(Clone, Debug)]
pub struct RaySamples {
    pub width: usize,
    pub height: usize,
    pub n_samples: usize,
    pub delta: f64,
    pub depths: Vec<f64>,
    pub points: Vec<Vec3>,
}

/// Intermediates of [`RaySamples::render`] needed for the backward pass.
#[derive(Clone, Debug)]
pub struct VolumeTrace {
    taps: Vec<Option<PlaneTaps>>,
    mlp: MlpTrace,
    /// Transmittance before each sample plus the final one: `n_samples + 1` per ray.
    transmittance: Vec<f64>,
    weights: Vec<f64>,
}

impl VolumeTrace {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl RaySamples {
    pub fn prepare(cam: &Camera, sf: Option<&SurfaceField>, quad: &QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        let rays = cam.make_rays();
        let n = quad.n_samples;
        let mut depths = Vec::with_capacity(rays.rays.len() * n);
        let mut points = Vec::with_capacity(rays.rays.len() * n);
        let mut delta = 0.0;
        for r in &rays.rays {
            let (ts, d) = sample_depths(quad, r.t_near, r.t_far, r.index);
            delta = d;
            for t in ts {
                let mut x = r.at(t);
                if let Some(sf) = sf {
                    x = sf.deform(x)?;
                }
                depths.push(t);
                points.push(x);
            }
        }
        Ok(Self {
            width: cam.width,
            height: cam.height,
            n_samples: n,
            delta,
            depths,
            points,
        })
    }

    pub fn n_rays(&self) -> usize {
        self.width * self.height
    }

    fn check(&self, tp: &TriPlaneField, dec: &DecoderNet) -> Result<()> {
        validate(tp.channels == dec.in_dim(), || {
            format!("tri-plane has {} channels, decoder expects {}", tp.channels, dec.in_dim())
        })
    }

    fn gather_features(&self, tp: &TriPlaneField) -> (Vec<Option<PlaneTaps>>, Vec<f64>) {
        let c = tp.channels;
        let mut feats = vec![0.0; self.points.len() * c];
        let taps: Vec<Option<PlaneTaps>> = self.points.iter().map(|&p| tp.taps(p)).collect();
        for (t, f) in taps.iter().zip(feats.chunks_exact_mut(c)) {
            if let Some(t) = t {
                tp.gather(t, f);
            }
        }
        (taps, feats)
    }

    /// Feature image (`n_rays × feature_dim`, row-major pixels) and trace.
    pub fn render(&self, tp: &TriPlaneField, dec: &DecoderNet) -> Result<(Vec<f64>, VolumeTrace)> {
        self.check(tp, dec)?;
        let (taps, feats) = self.gather_features(tp);
        let mlp = dec.mlp.forward_trace(&feats, self.points.len());
        let (image, transmittance, weights) = self.composite_outputs(&mlp.output, dec.feature_dim);
        Ok((
            image,
            VolumeTrace {
                taps,
                mlp,
                transmittance,
                weights,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn render_forward(&self, tp: &TriPlaneField, dec: &DecoderNet) -> Result<Vec<f64>> {
        self.check(tp, dec)?;
        let (_, feats) = self.gather_features(tp);
        let out = dec.mlp.forward_unchecked(&feats, self.points.len());
        Ok(self.composite_outputs(&out, dec.feature_dim).0)
    }

    fn composite_outputs(&self, out: &[f64], fdim: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_samples;
        let odim = fdim + 1;
        let n_rays = self.n_rays();
        let mut image = vec![0.0; n_rays * fdim];
        let mut trans = vec![0.0; n_rays * (n + 1)];
        let mut weights = vec![0.0; n_rays * n];
        for r in 0..n_rays {
            let mut log_t = 0.0;
            let mut t = 1.0;
            let px = &mut image[r * fdim..(r + 1) * fdim];
            for i in 0..n {
                let row = &out[(r * n + i) * odim..(r * n + i + 1) * odim];
                let tau = softplus(row[fdim]) * self.delta;
                let w = t * (-(-tau).exp_m1());
                trans[r * (n + 1) + i] = t;
                weights[r * n + i] = w;
                for (p, v) in px.iter_mut().zip(&row[..fdim]) {
                    *p += w * v;
                }
                log_t -= tau;
                t = log_t.exp();
            }
            trans[r * (n + 1) + n] = t;
        }
        (image, trans, weights)
    }

    /// Reverse pass for `Σ dimage·image`: accumulates tri-plane and decoder
    /// parameter gradients.
    pub fn backward(
        &self,
        tp: &TriPlaneField,
        dec: &DecoderNet,
        trace: &VolumeTrace,
        dimage: &[f64],
        grad_planes: &mut [f64],
        grad_decoder: &mut [f64],
    ) {
        debug_assert_eq!(grad_planes.len(), tp.len());
        debug_assert_eq!(grad_decoder.len(), dec.num_params());
        let n = self.n_samples;
        let fdim = dec.feature_dim;
        let odim = fdim + 1;
        let out = &trace.mlp.output;
        let mut dout = vec![0.0; out.len()];
        let mut g = vec![0.0; n];
        for r in 0..self.n_rays() {
            let dpx = &dimage[r * fdim..(r + 1) * fdim];
            if dpx.iter().all(|&v| v == 0.0) {
                continue;
            }
            for i in 0..n {
                let k = r * n + i;
                let row = &out[k * odim..(k + 1) * odim];
                g[i] = dpx.iter().zip(&row[..fdim]).map(|(a, b)| a * b).sum();
                let w = trace.weights[k];
                for (d, &dp) in dout[k * odim..k * odim + fdim].iter_mut().zip(dpx) {
                    *d = w * dp;
                }
            }
            // dF/dσ_k = δ (T_{k+1} g_k − Σ_{i>k} w_i g_i)
            let mut suffix = 0.0;
            for i in (0..n).rev() {
                let k = r * n + i;
                let t_next = trace.transmittance[r * (n + 1) + i + 1];
                let dsigma = self.delta * (t_next * g[i] - suffix);
                suffix += trace.weights[k] * g[i];
                dout[k * odim + fdim] = dsigma * sigmoid(out[k * odim + fdim]);
            }
        }
        let dfeat = dec.mlp.backward(&trace.mlp, &dout, grad_decoder);
        let c = tp.channels;
        for (t, df) in trace.taps.iter().zip(dfeat.chunks_exact(c)) {
            if let Some(t) = t {
                tp.scatter(t, df, grad_planes);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::RngStream;
    use crate::field::{Activation, NeuralField};
    use crate::render::render_image;

    fn scene(seed: u64) -> (TriPlaneField, DecoderNet) {
        let mut rng = RngStream::new(seed, 0);
        let (r, c) = (6, 3);
        let tp = TriPlaneField::new(
            r,
            c,
            Vec3::new(-1.0, -1.0, -1.0),
            Vec3::new(1.0, 1.0, 1.0),
            rng.gaussian_vec(3 * r * r * c).iter().map(|v| v * 0.5).collect(),
        )
        .unwrap();
        let dec = DecoderNet::random(c, &[8], 2, Activation::Softplus, &mut rng);
        (tp, dec)
    }

    #[test]
    fn matches_generic_renderer() {
        let (tp, dec) = scene(1);
        let cam = Camera::orbit(0.2, 0.1, 2.5, 6.0, 6, 5, 1.4, 3.6).unwrap();
        let q = QuadratureSpec::midpoint(12);
        let samples = RaySamples::prepare(&cam, None, &q).unwrap();
        let (img, _) = samples.render(&tp, &dec).unwrap();
        let (reference, _) = render_image(&NeuralField::new(&tp, &dec).unwrap(), None, &cam, &q).unwrap();
        for (a, b) in img.iter().zip(&reference.pixels) {
            assert!((*a as f32 - b).abs() < 1e-6);
        }
        assert_eq!(img, samples.render_forward(&tp, &dec).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (tp, dec) = scene(2);
        let cam = Camera::orbit(0.4, -0.2, 2.5, 4.0, 4, 4, 1.4, 3.6).unwrap();
        let samples = RaySamples::prepare(&cam, None, &QuadratureSpec::midpoint(10)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let (img, trace) = samples.render(&tp, &dec).unwrap();
        let dimg = rng.gaussian_vec(img.len());
        let mut gp = vec![0.0; tp.len()];
        let mut gd = vec![0.0; dec.num_params()];
        samples.backward(&tp, &dec, &trace, &dimg, &mut gp, &mut gd);
        let loss = |tp: &TriPlaneField, dec: &DecoderNet| -> f64 {
            let (im, _) = samples.render(tp, dec).unwrap();
            im.iter().zip(&dimg).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in (0..tp.len()).step_by(7) {
            let mut p = tp.clone();
            p.planes[i] += h;
            let lp = loss(&p, &dec);
            p.planes[i] -= 2.0 * h;
            let lm = loss(&p, &dec);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-5 * (1.0 + fd.abs()), "plane {i}: {fd} vs {}", gp[i]);
        }
        let base = dec.flat_params();
        for i in 0..base.len() {
            let mut d = dec.clone();
            let mut p = base.clone();
            p[i] += h;
            d.set_flat_params(&p);
            let lp = loss(&tp, &d);
            p[i] -= 2.0 * h;
            d.set_flat_params(&p);
            let lm = loss(&tp, &d);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gd[i]).abs() < 1e-5 * (1.0 + fd.abs()), "decoder {i}: {fd} vs {}", gd[i]);
        }
    }
}
