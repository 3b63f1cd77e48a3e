use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::RngStream;
use crate::error::{validate, Error, Result};
use crate::field::{sigmoid, softplus, DecoderNet, Parametric, TriPlaneField};
use crate::geometry::{ToyMorphModel, Vec3};
use crate::regularize::RegWeights;
use crate::render::{RaySamples, BACKGROUND_SENTINEL};

use super::adam::Adam;
use super::discriminator::DiscriminatorBundle;
use super::generator::{GenAdjoint, GeneratorBundle};
use super::scene::SceneRecord;

/// Optimization settings for adversarial training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub reg: RegWeights,
    pub r1_weight: f64,
    pub density_weight: f64,
    pub density_points: usize,
    pub density_delta: f64,
    pub probe_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 4,
            steps: 1000,
            reg: RegWeights::default(),
            r1_weight: 1.0,
            density_weight: 0.25,
            density_points: 64,
            density_delta: 0.02,
            probe_sigma: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), || {
            format!("learning rate must be non-negative, got {}", self.learning_rate)
        })?;
        validate(self.batch_size >= 1, || "batch size must be at least 1".into())?;
        validate((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), || {
            "Adam betas must lie in [0, 1)".into()
        })?;
        validate(self.r1_weight >= 0.0 && self.density_weight >= 0.0, || "penalty weights must be non-negative".into())?;
        validate(self.density_delta > 0.0, || "density_delta must be positive".into())?;
        validate(self.probe_sigma > 0.0, || "probe_sigma must be positive".into())?;
        self.reg.validate()
    }
}

/// Which networks train and whether conditioning is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Unconditional pretraining: `α ≡ 0`.
    One,
    /// Conditional fine-tuning with α-dropout.
    Two,
}

/// A real sample prepared for training.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub id: u64,
    pub image: Vec<f64>,
    /// Mesh coordinates with background pixels mapped to 0.
    pub coords: Vec<f64>,
    pub camera: Vec<f64>,
    pub samples: RaySamples,
    pub embedding: Vec<f64>,
}

impl TrainItem {
    pub fn from_record(rec: &SceneRecord, g: &GeneratorBundle, model: &ToyMorphModel, embedding: Vec<f64>) -> Result<Self> {
        validate(embedding.len() == g.cfg.r_dim, || {
            format!("embedding has {} entries, model expects {}", embedding.len(), g.cfg.r_dim)
        })?;
        validate(rec.image.width == g.cfg.image_size && rec.image.height == g.cfg.image_size, || {
            format!("record is {}x{}, model renders {}", rec.image.width, rec.image.height, g.cfg.image_size)
        })?;
        let coords = rec
            .rdr
            .pixels
            .iter()
            .map(|&v| if v == BACKGROUND_SENTINEL { 0.0 } else { v as f64 })
            .collect();
        Ok(Self {
            id: rec.id,
            image: rec.image.to_f64(),
            coords,
            camera: rec.camera.condition_vector(),
            samples: g.ray_samples(model, &rec.camera, &rec.morph)?,
            embedding,
        })
    }
}

/// Optimizer state for both players.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub g: Adam,
    pub d: Adam,
}

impl Optimizers {
    pub fn new(g: &GeneratorBundle, d: &DiscriminatorBundle, cfg: &TrainConfig) -> Self {
        Self {
            g: Adam::new(g.num_params(), cfg.learning_rate, cfg.beta1, cfg.beta2),
            d: Adam::new(d.num_params(), cfg.learning_rate, cfg.beta1, cfg.beta2),
        }
    }
}

/// Loss components of one step (batch means).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub alpha: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub adv_d: f64,
    pub adv_g: f64,
    pub r1: f64,
    pub r_jac: f64,
    pub r_norm: f64,
    pub density: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Mean `‖w‖` of the generated batch.
    pub w_norm: f64,
}

// Substream ids for each random purpose within a step.
const RNG_ALPHA: u64 = 1;
const RNG_BATCH: u64 = 2;
const RNG_LATENT: u64 = 3;
const RNG_PROBE: u64 = 4;
const RNG_DENSITY: u64 = 5;

/// Perturbation length for the finite-difference R1 gradient, in image units.
const R1_STEP: f64 = 1e-3;

/// α for a step: 0 with probability `alpha_dropout`, otherwise `weights.alpha`.
pub fn draw_alpha(weights: &RegWeights, stage: Stage, rng: &RngStream) -> f64 {
    match stage {
        Stage::One => 0.0,
        Stage::Two => {
            if rng.substream(RNG_ALPHA).bernoulli(weights.alpha_dropout) {
                0.0
            } else {
                weights.alpha
            }
        }
    }
}

/// Record indices of a step's batch (with replacement).
pub fn draw_batch(n_items: usize, batch: usize, rng: &RngStream) -> Vec<usize> {
    let mut r = rng.substream(RNG_BATCH);
    (0..batch).map(|_| r.below(n_items)).collect()
}

pub fn draw_latent(dim: usize, slot: usize, rng: &RngStream) -> Vec<f64> {
    rng.substream(RNG_LATENT).substream(slot as u64).gaussian_vec(dim)
}

fn uniform_point(rng: &mut RngStream, lo: Vec3, hi: Vec3) -> Vec3 {
    Vec3::new(
        lo.x + (hi.x - lo.x) * rng.uniform(),
        lo.y + (hi.y - lo.y) * rng.uniform(),
        lo.z + (hi.z - lo.z) * rng.uniform(),
    )
}

fn density_pairs(lo: Vec3, hi: Vec3, rng: &RngStream, n: usize, delta: f64) -> Vec<(Vec3, Vec3)> {
    let mut r = rng.clone();
    (0..n)
        .map(|_| {
            let x = uniform_point(&mut r, lo, hi);
            let u = r.unit3();
            (x, x + Vec3::new(u[0], u[1], u[2]) * delta)
        })
        .collect()
}

/// Smoothness surrogate for an arbitrary density: mean of
/// `(σ(x) − σ(x + δu))²` over uniform points in the box and random unit `u`.
pub fn density_reg_fn(density: impl Fn(Vec3) -> f64, lo: Vec3, hi: Vec3, rng: &RngStream, n_points: usize, delta: f64) -> Result<f64> {
    validate(delta > 0.0, || "density regularization needs delta > 0".into())?;
    if n_points == 0 {
        return Ok(0.0);
    }
    let pairs = density_pairs(lo, hi, rng, n_points, delta);
    Ok(pairs.iter().map(|&(x, y)| (density(x) - density(y)).powi(2)).sum::<f64>() / n_points as f64)
}

/// Density smoothness penalty of a neural volume over its tri-plane bounds.
pub fn density_reg(tp: &TriPlaneField, dec: &DecoderNet, rng: &RngStream, n_points: usize, delta: f64) -> Result<f64> {
    density_reg_backward(tp, dec, rng, n_points, delta, 0.0, None)
}

/// Value of [`density_reg`]; with `grads`, adds `scale ·` its gradient into
/// `(tri-plane, decoder)` buffers.
pub fn density_reg_backward(
    tp: &TriPlaneField,
    dec: &DecoderNet,
    rng: &RngStream,
    n_points: usize,
    delta: f64,
    scale: f64,
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<f64> {
    validate(delta > 0.0, || "density regularization needs delta > 0".into())?;
    if n_points == 0 {
        return Ok(0.0);
    }
    let pairs = density_pairs(tp.bounds_min, tp.bounds_max, rng, n_points, delta);
    let c = tp.channels;
    let mut taps = Vec::with_capacity(2 * n_points);
    let mut feats = vec![0.0; 2 * n_points * c];
    for (k, p) in pairs.iter().flat_map(|&(x, y)| [x, y]).enumerate() {
        let t = tp.taps(p);
        if let Some(t) = &t {
            tp.gather(t, &mut feats[k * c..(k + 1) * c]);
        }
        taps.push(t);
    }
    let trace = dec.mlp.forward_trace(&feats, 2 * n_points);
    let odim = dec.feature_dim + 1;
    let raw = |k: usize| trace.output[k * odim + dec.feature_dim];
    let mut value = 0.0;
    let mut dout = vec![0.0; trace.output.len()];
    for i in 0..n_points {
        let diff = softplus(raw(2 * i)) - softplus(raw(2 * i + 1));
        value += diff * diff;
        let g = scale * 2.0 * diff / n_points as f64;
        dout[2 * i * odim + dec.feature_dim] = g * sigmoid(raw(2 * i));
        dout[(2 * i + 1) * odim + dec.feature_dim] = -g * sigmoid(raw(2 * i + 1));
    }
    value /= n_points as f64;
    if let Some((gp, gd)) = grads {
        let dfeat = dec.mlp.backward(&trace, &dout, gd);
        for (t, df) in taps.iter().zip(dfeat.chunks_exact(c)) {
            if let Some(t) = t {
                tp.scatter(t, df, gp);
            }
        }
    }
    Ok(value)
}

/// R1 penalty `‖∇ₓD(x)‖²` over the image channels. With `grad`, adds
/// `weight · ∇θ‖∇ₓD‖²` using a central difference of parameter gradients
/// along `∇ₓD` (a Hessian-vector product).
pub fn r1_penalty(
    d: &DiscriminatorBundle,
    x: &[f64],
    cam: &[f64],
    r: &[f64],
    alpha: f64,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let trace = d.forward_trace(x, cam, r, alpha)?;
    let mut scratch = vec![0.0; d.num_params()];
    let dx = d.backward(&trace, 1.0, &mut scratch);
    let g = DiscriminatorBundle::image_part(&dx);
    let pen: f64 = g.iter().map(|v| v * v).sum();
    if let Some(grad) = grad {
        let norm = pen.sqrt();
        if weight != 0.0 && norm > 0.0 {
            let h = R1_STEP / norm;
            let shifted = |sign: f64| -> Result<Vec<f64>> {
                let mut xs = x.to_vec();
                for (p, gv) in xs.chunks_exact_mut(6).zip(g.chunks_exact(3)) {
                    for c in 0..3 {
                        p[c] += sign * h * gv[c];
                    }
                }
                let t = d.forward_trace(&xs, cam, r, alpha)?;
                let mut gp = vec![0.0; d.num_params()];
                d.backward(&t, 1.0, &mut gp);
                Ok(gp)
            };
            let gp = shifted(1.0)?;
            let gm = shifted(-1.0)?;
            let s = weight / h;
            for ((o, a), b) in grad.iter_mut().zip(&gp).zip(&gm) {
                *o += s * (a - b);
            }
        }
    }
    Ok(pen)
}

fn check_finite(m: &StepMetrics) -> Result<()> {
    let vals = [m.loss_d, m.loss_g, m.r1, m.r_jac, m.r_norm, m.density, m.d_real, m.d_fake];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite loss at step {}: {}",
            m.step,
            serde_json::to_string(m).unwrap_or_default()
        )))
    }
}

fn sum_ordered(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for p in parts {
        for (o, v) in out.iter_mut().zip(&p) {
            *o += v;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One alternating update: a discriminator step on the current fakes, then a
/// generator step against the updated discriminator. Per-sample work runs in
/// parallel and is reduced in batch order.
#[allow(clippy::too_many_arguments)]
pub fn gan_step(
    g: &mut GeneratorBundle,
    d: &mut DiscriminatorBundle,
    opt: &mut Optimizers,
    data: &[TrainItem],
    cfg: &TrainConfig,
    stage: Stage,
    step: u64,
    rng: &RngStream,
) -> Result<StepMetrics> {
    validate(!data.is_empty(), || "training set is empty".into())?;
    let rng = rng.substream(step);
    let alpha = draw_alpha(&cfg.reg, stage, &rng);
    let batch = draw_batch(data.len(), cfg.batch_size, &rng);
    let bsz = batch.len() as f64;

    let fakes: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let it = &data[i];
            let z = draw_latent(g.cfg.z_dim, slot, &rng);
            g.forward_trace(&z, &it.embedding, alpha, &it.samples)
        })
        .collect::<Result<Vec<_>>>()?;

    // discriminator
    let d_ref = &*d;
    let d_parts: Vec<(Vec<f64>, [f64; 4])> = batch
        .par_iter()
        .zip(&fakes)
        .map(|(&i, fake)| -> Result<_> {
            let it = &data[i];
            let mut grad = vec![0.0; d_ref.num_params()];
            let xf = DiscriminatorBundle::assemble(&fake.image, &it.coords);
            let tf = d_ref.forward_trace(&xf, &it.camera, &it.embedding, alpha)?;
            d_ref.backward(&tf, sigmoid(tf.score) / bsz, &mut grad);
            let xr = DiscriminatorBundle::assemble(&it.image, &it.coords);
            let tr = d_ref.forward_trace(&xr, &it.camera, &it.embedding, alpha)?;
            d_ref.backward(&tr, -sigmoid(-tr.score) / bsz, &mut grad);
            let r1 = r1_penalty(d_ref, &xr, &it.camera, &it.embedding, alpha, cfg.r1_weight / bsz, Some(&mut grad))?;
            let adv = softplus(tf.score) + softplus(-tr.score);
            Ok((grad, [adv, r1, tr.score, tf.score]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = StepMetrics {
        step,
        alpha,
        ..StepMetrics::default()
    };
    let mut d_grads = Vec::with_capacity(d_parts.len());
    for (gr, [adv, r1, sr, sf]) in d_parts {
        m.adv_d += adv / bsz;
        m.r1 += r1 / bsz;
        m.d_real += sr / bsz;
        m.d_fake += sf / bsz;
        d_grads.push(gr);
    }
    m.loss_d = m.adv_d + cfg.r1_weight * m.r1;
    let d_grad = sum_ordered(d_grads, d.num_params());

    // generator terms that do not depend on D
    let sigma = cfg.probe_sigma;
    let g_ref = &*g;
    let g_pre: Vec<_> = batch
        .par_iter()
        .zip(&fakes)
        .enumerate()
        .map(|(slot, (&i, fake))| -> Result<_> {
            let it = &data[i];
            let mut dw_r = vec![0.0; g_ref.cfg.w_dim];
            let mut dw = vec![0.0; g_ref.cfg.w_dim];
            let mut grad = vec![0.0; g_ref.num_params()];
            let mut align_out = None;
            let mut rjac = 0.0;
            if let Some(t0) = &fake.align {
                let eps: Vec<f64> = rng
                    .substream(RNG_PROBE)
                    .substream(slot as u64)
                    .gaussian_vec(g_ref.cfg.r_dim)
                    .into_iter()
                    .map(|e| e * sigma)
                    .collect();
                let rp: Vec<f64> = it.embedding.iter().zip(&eps).map(|(a, b)| a + b).collect();
                let t1 = g_ref.align.forward_trace(&fake.w, &rp, 1)?;
                let a2 = alpha * alpha;
                let diff: Vec<f64> = t1.output.iter().zip(&t0.output).map(|(a, b)| a - b).collect();
                rjac = a2 * diff.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma);
                if cfg.reg.lambda_jac > 0.0 {
                    let s = cfg.reg.lambda_jac / bsz * 2.0 * a2 / (sigma * sigma);
                    let d1: Vec<f64> = diff.iter().map(|v| s * v).collect();
                    let mut ga = vec![0.0; g_ref.align.num_params()];
                    let (dm, _) = g_ref.align.backward(&t1, &d1, &mut ga);
                    for (a, b) in dw.iter_mut().zip(&dm) {
                        *a += b;
                    }
                    let view = g_ref.grad_view(&mut grad);
                    for (a, b) in view.align.iter_mut().zip(&ga) {
                        *a += b;
                    }
                    align_out = Some(d1.iter().map(|v| -v).collect::<Vec<f64>>());
                }
            }
            let (nr, nw) = (norm(&fake.w_r), norm(&fake.w));
            let rnorm = (nr - nw).powi(2);
            if cfg.reg.lambda_norm > 0.0 && rnorm > 0.0 {
                let s = cfg.reg.lambda_norm / bsz * 2.0 * (nr - nw);
                for k in 0..dw_r.len() {
                    if nr > 0.0 {
                        dw_r[k] += s * fake.w_r[k] / nr;
                    }
                    if nw > 0.0 {
                        dw[k] -= s * fake.w[k] / nw;
                    }
                }
            }
            let mut dplanes = vec![0.0; fake.planes.len()];
            let mut ddec = vec![0.0; g_ref.decoder.num_params()];
            let dens = density_reg_backward(
                &fake.planes,
                &g_ref.decoder,
                &rng.substream(RNG_DENSITY).substream(slot as u64),
                cfg.density_points,
                cfg.density_delta,
                cfg.density_weight / bsz,
                Some((&mut dplanes, &mut ddec)),
            )?;
            Ok((grad, dw_r, dw, align_out, dplanes, ddec, [rjac, rnorm, dens]))
        })
        .collect::<Result<Vec<_>>>()?;

    for f in &fakes {
        m.w_norm += norm(&f.w) / bsz;
    }
    for p in &g_pre {
        let [rjac, rnorm, dens] = p.6;
        m.r_jac += rjac / bsz;
        m.r_norm += rnorm / bsz;
        m.density += dens / bsz;
    }

    let mut dp = d.flat_params();
    opt.d.update(&mut dp, &d_grad);
    d.set_flat_params(&dp);

    // generator against the updated discriminator
    let d_ref = &*d;
    let g_parts: Vec<(Vec<f64>, f64)> = batch
        .par_iter()
        .zip(&fakes)
        .zip(g_pre)
        .map(|((&i, fake), pre)| -> Result<_> {
            let (mut grad, dw_r, dw, align_out, dplanes, ddec, _) = pre;
            let it = &data[i];
            let xf = DiscriminatorBundle::assemble(&fake.image, &it.coords);
            let tf = d_ref.forward_trace(&xf, &it.camera, &it.embedding, alpha)?;
            let mut scratch = vec![0.0; d_ref.num_params()];
            let dx = d_ref.backward(&tf, -sigmoid(-tf.score) / bsz, &mut scratch);
            let dimage = DiscriminatorBundle::image_part(&dx);
            let adj = GenAdjoint {
                image: &dimage,
                w_r: Some(&dw_r),
                w: Some(&dw),
                align_out: align_out.as_deref(),
                planes: Some(&dplanes),
                decoder: Some(&ddec),
            };
            g_ref.backward(fake, &it.samples, &adj, &mut grad);
            Ok((grad, softplus(-tf.score)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g_grads = Vec::with_capacity(g_parts.len());
    for (gr, adv) in g_parts {
        m.adv_g += adv / bsz;
        g_grads.push(gr);
    }
    let g_grad = sum_ordered(g_grads, g.num_params());
    m.loss_g = m.adv_g + cfg.reg.lambda_jac * m.r_jac + cfg.reg.lambda_norm * m.r_norm + cfg.density_weight * m.density;
    check_finite(&m)?;
    let mut gp = g.flat_params();
    opt.g.update(&mut gp, &g_grad);
    g.set_flat_params(&gp);
    Ok(m)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::field::Activation;
    use crate::geometry::{MorphDims, ToyMorphModel};
    use crate::train::model::ModelConfig;
    use crate::train::scene::{sample_scene, SceneConfig, SceneSampler};

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            z_dim: 6,
            w_dim: 5,
            r_dim: 3,
            mapping_hidden: 7,
            plane_resolution: 4,
            plane_channels: 2,
            decoder_hidden: 5,
            align_width: 6,
            align_blocks: 1,
            u_dim: 4,
            stem_widths: vec![3, 4],
            camera_hidden: 5,
            image_size: 8,
            n_samples: 6,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_items(g: &GeneratorBundle, n: usize) -> Vec<TrainItem> {
        let model = ToyMorphModel::synthetic(1, 1, MorphDims { shape: 2, pose: 3, expression: 2 });
        let sampler = SceneSampler::new(
            model.clone(),
            SceneConfig {
                resolution: g.cfg.image_size,
                n_samples: 8,
                ..SceneConfig::default()
            },
        )
        .unwrap();
        let rng = RngStream::new(9, 0);
        (0..n as u64)
            .map(|id| {
                let rec = sample_scene(&sampler, id, &rng).unwrap();
                let e = RngStream::new(10, id).gaussian_vec(g.cfg.r_dim);
                TrainItem::from_record(&rec, g, &model, e).unwrap()
            })
            .collect()
    }

    fn setup(stage_two_jitter: bool) -> (GeneratorBundle, DiscriminatorBundle, Vec<TrainItem>) {
        let cfg = tiny_model();
        let mut g = GeneratorBundle::new(&cfg, &RngStream::new(1, 0)).unwrap();
        let mut d = DiscriminatorBundle::new(&cfg, &RngStream::new(2, 0)).unwrap();
        if stage_two_jitter {
            g.align.randomize_output(0.3, &mut RngStream::new(3, 0));
            d.align.randomize_output(0.3, &mut RngStream::new(4, 0));
            crate::train::generator::round_params(&mut g);
            crate::train::generator::round_params(&mut d);
        }
        let items = tiny_items(&g, 5);
        (g, d, items)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (mut g, mut d, items) = setup(true);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (g0, d0) = (g.clone(), d.clone());
        let mut opt = Optimizers::new(&g, &d, &cfg);
        for step in 0..3 {
            let m = gan_step(&mut g, &mut d, &mut opt, &items, &cfg, Stage::Two, step, &RngStream::new(5, 0)).unwrap();
            assert!(m.loss_d.is_finite() && m.loss_g.is_finite());
        }
        assert_eq!(g, g0);
        assert_eq!(d, d0);
    }

    #[test]
    fn step_changes_parameters_and_reports_components() {
        let (mut g, mut d, items) = setup(true);
        let cfg = TrainConfig {
            batch_size: 2,
            reg: RegWeights {
                alpha_dropout: 0.0,
                ..RegWeights::default()
            },
            ..TrainConfig::default()
        };
        let (g0, d0) = (g.clone(), d.clone());
        let mut opt = Optimizers::new(&g, &d, &cfg);
        let m = gan_step(&mut g, &mut d, &mut opt, &items, &cfg, Stage::Two, 0, &RngStream::new(5, 0)).unwrap();
        assert_eq!(m.alpha, 1.0);
        assert!(m.r1 > 0.0 && m.r_jac > 0.0 && m.density > 0.0);
        assert_ne!(g.flat_params(), g0.flat_params());
        assert_ne!(d.flat_params(), d0.flat_params());
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (mut g, mut d, items) = setup(true);
                let cfg = TrainConfig {
                    batch_size: 4,
                    ..TrainConfig::default()
                };
                let mut opt = Optimizers::new(&g, &d, &cfg);
                let ms: Vec<_> = (0..2)
                    .map(|s| gan_step(&mut g, &mut d, &mut opt, &items, &cfg, Stage::Two, s, &RngStream::new(5, 0)).unwrap())
                    .collect();
                (g, d, ms)
            })
        };
        let (g1, d1, m1) = run(1);
        let (g4, d4, m4) = run(4);
        assert_eq!(g1, g4);
        assert_eq!(d1, d4);
        assert_eq!(m1, m4);
    }

    #[test]
    fn non_finite_parameters_abort() {
        let (mut g, mut d, items) = setup(false);
        g.synthesis.bias[0] = f64::NAN;
        let cfg = TrainConfig::default();
        let mut opt = Optimizers::new(&g, &d, &cfg);
        let err = gan_step(&mut g, &mut d, &mut opt, &items, &cfg, Stage::One, 0, &RngStream::new(5, 0)).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }

    #[test]
    fn alpha_dropout_rate() {
        let w = RegWeights::default();
        let root = RngStream::new(21, 0);
        let n = 10_000;
        let zeros = (0..n).filter(|&s| draw_alpha(&w, Stage::Two, &root.substream(s)) == 0.0).count();
        let rate = zeros as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
        assert!((0..100).all(|s| draw_alpha(&w, Stage::One, &root.substream(s)) == 0.0));
    }

    fn linear_disc() -> (DiscriminatorBundle, Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = tiny_model();
        let d = DiscriminatorBundle::with_activation(&cfg, Activation::Linear, &RngStream::new(7, 0)).unwrap();
        let mut rng = RngStream::new(8, 0);
        let x = rng.gaussian_vec(d.input_len());
        let cam = rng.gaussian_vec(12);
        let r = rng.gaussian_vec(cfg.r_dim);
        (d, x, cam, r)
    }

    #[test]
    fn r1_of_linear_discriminator_is_weight_norm() {
        let (d, x, cam, r) = linear_disc();
        let base = d.score(&x, &cam, &r, 0.0).unwrap();
        let mut a2 = 0.0;
        for i in 0..x.len() {
            if i % crate::train::INPUT_CHANNELS >= 3 {
                continue;
            }
            let mut e = x.clone();
            e[i] += 1.0;
            let a = d.score(&e, &cam, &r, 0.0).unwrap() - base;
            a2 += a * a;
        }
        let pen = r1_penalty(&d, &x, &cam, &r, 0.0, 1.0, None).unwrap();
        assert!((pen - a2).abs() < 1e-9 * (1.0 + a2), "{pen} vs {a2}");
        let other = RngStream::new(11, 0).gaussian_vec(x.len());
        let pen2 = r1_penalty(&d, &other, &cam, &r, 0.0, 1.0, None).unwrap();
        assert!((pen - pen2).abs() < 1e-9 * (1.0 + a2));
    }

    #[test]
    fn r1_parameter_gradient_matches_finite_differences() {
        let cfg = tiny_model();
        let mut d = DiscriminatorBundle::with_activation(&cfg, Activation::Softplus, &RngStream::new(7, 0)).unwrap();
        d.align.randomize_output(0.5, &mut RngStream::new(3, 0));
        let mut rng = RngStream::new(8, 0);
        let x = rng.gaussian_vec(d.input_len());
        let cam = rng.gaussian_vec(12);
        let r = rng.gaussian_vec(cfg.r_dim);
        let mut grad = vec![0.0; d.num_params()];
        r1_penalty(&d, &x, &cam, &r, 1.0, 1.0, Some(&mut grad)).unwrap();
        let flat = d.flat_params();
        let h = 1e-5;
        for i in (0..flat.len()).step_by(17) {
            let mut e = d.clone();
            let mut p = flat.clone();
            p[i] += h;
            e.set_flat_params(&p);
            let a = r1_penalty(&e, &x, &cam, &r, 1.0, 1.0, None).unwrap();
            p[i] -= 2.0 * h;
            e.set_flat_params(&p);
            let b = r1_penalty(&e, &x, &cam, &r, 1.0, 1.0, None).unwrap();
            let fd = (a - b) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-4 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn density_reg_conventions() {
        let lo = Vec3::new(-1.0, -1.0, -1.0);
        let hi = Vec3::new(1.0, 1.0, 1.0);
        let rng = RngStream::new(1, 0);
        assert_eq!(density_reg_fn(|_| 3.5, lo, hi, &rng, 1000, 0.1).unwrap(), 0.0);
        assert_eq!(density_reg_fn(|p| p.x, lo, hi, &rng, 0, 0.1).unwrap(), 0.0);
        assert!(density_reg_fn(|p| p.x, lo, hi, &rng, 10, 0.0).is_err());
    }

    #[test]
    fn density_reg_of_linear_ramp() {
        let lo = Vec3::new(-1.0, -1.0, -1.0);
        let hi = Vec3::new(1.0, 1.0, 1.0);
        let (s, delta) = (3.0, 0.05);
        let v = density_reg_fn(|p| s * p.y, lo, hi, &RngStream::new(2, 0), 100_000, delta).unwrap();
        let expect = (s * delta).powi(2) / 3.0;
        assert!((v - expect).abs() < 0.05 * expect, "{v} vs {expect}");
    }

    #[test]
    fn density_reg_gradient_matches_finite_differences() {
        let cfg = tiny_model();
        let g = GeneratorBundle::new(&cfg, &RngStream::new(1, 0)).unwrap();
        let tp = g.planes(&RngStream::new(2, 0).gaussian_vec(cfg.w_dim)).unwrap();
        let rng = RngStream::new(3, 0);
        let mut gp = vec![0.0; tp.len()];
        let mut gd = vec![0.0; g.decoder.num_params()];
        let v = density_reg_backward(&tp, &g.decoder, &rng, 40, 0.1, 1.0, Some((&mut gp, &mut gd))).unwrap();
        assert_eq!(v, density_reg(&tp, &g.decoder, &rng, 40, 0.1).unwrap());
        let h = 1e-6;
        for i in (0..tp.len()).step_by(5) {
            let mut p = tp.clone();
            p.planes[i] += h;
            let a = density_reg(&p, &g.decoder, &rng, 40, 0.1).unwrap();
            p.planes[i] -= 2.0 * h;
            let b = density_reg(&p, &g.decoder, &rng, 40, 0.1).unwrap();
            let fd = (a - b) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", gp[i]);
        }
    }
}
