use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::{ImageBuffer, RngStream};
use crate::condition::StyleVector;
use crate::error::{validate, Error, Result};
use crate::field::Parametric;
use crate::geometry::{MorphParams, ToyMorphModel};
use crate::render::{Camera, RaySamples};
use crate::train::GeneratorBundle;

/// How the inversion obtains `∂loss/∂w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Central differences over every coordinate of `w`.
    FiniteDifference,
    /// Adjoint pass through the renderer and synthesis layer.
    Reverse,
}

/// Image distance minimized by the inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageDistance {
    pub pixel_weight: f64,
    /// Weight on the difference of horizontal and vertical image gradients.
    pub gradient_weight: f64,
}

impl Default for ImageDistance {
    fn default() -> Self {
        Self {
            pixel_weight: 1.0,
            gradient_weight: 0.5,
        }
    }
}

impl ImageDistance {
    /// Distance between HWC images and its gradient with respect to `x`.
    pub fn eval(&self, x: &[f64], target: &[f64], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
        let n = x.len() as f64;
        let diff: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
        let mut loss = self.pixel_weight * diff.iter().map(|d| d * d).sum::<f64>() / n;
        let mut grad: Vec<f64> = diff.iter().map(|d| 2.0 * self.pixel_weight * d / n).collect();
        if self.gradient_weight != 0.0 {
            let idx = |x: usize, y: usize, c: usize| (y * width + x) * channels + c;
            let nx = (height * (width.saturating_sub(1)) * channels).max(1) as f64;
            let ny = ((height.saturating_sub(1)) * width * channels).max(1) as f64;
            for y in 0..height {
                for xi in 0..width {
                    for c in 0..channels {
                        let i = idx(xi, y, c);
                        if xi + 1 < width {
                            let j = idx(xi + 1, y, c);
                            let g = diff[j] - diff[i];
                            loss += self.gradient_weight * g * g / nx;
                            let s = 2.0 * self.gradient_weight * g / nx;
                            grad[j] += s;
                            grad[i] -= s;
                        }
                        if y + 1 < height {
                            let j = idx(xi, y + 1, c);
                            let g = diff[j] - diff[i];
                            loss += self.gradient_weight * g * g / ny;
                            let s = 2.0 * self.gradient_weight * g / ny;
                            grad[j] += s;
                            grad[i] -= s;
                        }
                    }
                }
            }
        }
        (loss, grad)
    }
}

/// Latent-optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub max_steps: usize,
    /// Initial Adam step size; decays linearly to `final_step_fraction` of it.
    pub step_size: f64,
    pub final_step_fraction: f64,
    pub gradient: GradientMode,
    /// Stop once the loss falls below this value.
    pub tolerance: f64,
    pub distance: ImageDistance,
    /// Coordinate step of the finite-difference gradient.
    pub fd_step: f64,
    /// Number of mapped latents averaged for the starting point.
    pub init_samples: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_steps: 600,
            step_size: 0.05,
            final_step_fraction: 0.05,
            gradient: GradientMode::Reverse,
            tolerance: 1e-7,
            distance: ImageDistance::default(),
            fd_step: 1e-4,
            init_samples: 64,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.max_steps >= 1, || "inversion needs max_steps >= 1".into())?;
        validate(self.step_size > 0.0 && self.step_size.is_finite(), || {
            format!("inversion step size must be positive, got {}", self.step_size)
        })?;
        validate((0.0..=1.0).contains(&self.final_step_fraction), || "final_step_fraction must lie in [0, 1]".into())?;
        validate(self.tolerance >= 0.0, || "tolerance must be non-negative".into())?;
        validate(self.fd_step > 0.0, || "fd_step must be positive".into())
    }
}

/// Outcome of an inversion: the best style found and its loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub w: StyleVector,
    pub residual: f64,
    pub steps: usize,
    pub converged: bool,
    /// Loss of the iterate before each update (plus the final iterate).
    pub history: Vec<f64>,
}

struct Objective<'a> {
    g: &'a GeneratorBundle,
    samples: &'a RaySamples,
    target: Vec<f64>,
    dist: ImageDistance,
    channels: usize,
}

impl Objective<'_> {
    fn loss(&self, w: &[f64]) -> Result<f64> {
        let img = self.g.render_style(w, self.samples)?;
        Ok(self.dist.eval(&img, &self.target, self.samples.width, self.samples.height, self.channels).0)
    }

    fn reverse(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let planes = self.g.planes(w)?;
        let (img, trace) = self.samples.render(&planes, &self.g.decoder)?;
        let (loss, dimg) = self.dist.eval(&img, &self.target, self.samples.width, self.samples.height, self.channels);
        let mut dplanes = vec![0.0; planes.len()];
        let mut scratch_dec = vec![0.0; self.g.decoder.num_params()];
        self.samples.backward(&planes, &self.g.decoder, &trace, &dimg, &mut dplanes, &mut scratch_dec);
        Ok((loss, self.g.synthesis.backward_input(&dplanes, 1)))
    }

    fn finite_difference(&self, w: &[f64], h: f64) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss(w)?;
        let grad = (0..w.len())
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut p = w.to_vec();
                p[i] = w[i] + h;
                let a = self.loss(&p)?;
                p[i] = w[i] - h;
                let b = self.loss(&p)?;
                Ok((a - b) / (2.0 * h))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, grad))
    }
}

/// Starting style: the average of `n` mapped standard-normal latents.
pub fn mean_style(g: &GeneratorBundle, n: usize, seed: u64) -> Result<Vec<f64>> {
    let root = RngStream::new(seed, 0x696e76);
    let mut acc = vec![0.0; g.cfg.w_dim];
    let n = n.max(1);
    for k in 0..n {
        let w = g.style(&root.substream(k as u64).gaussian_vec(g.cfg.z_dim))?;
        for (a, b) in acc.iter_mut().zip(&w) {
            *a += b / n as f64;
        }
    }
    Ok(acc)
}

/// Minimizes the image distance between the render of `w` and `target` over
/// precomputed ray samples, starting from `w0`. Returns the best iterate.
pub fn invert_from(
    g: &GeneratorBundle,
    target: &ImageBuffer,
    samples: &RaySamples,
    w0: &[f64],
    cfg: &InversionConfig,
) -> Result<Inversion> {
    cfg.validate()?;
    validate(target.width == samples.width && target.height == samples.height, || {
        format!(
            "target is {}x{}, render is {}x{}",
            target.width, target.height, samples.width, samples.height
        )
    })?;
    validate(target.channels == g.cfg.feature_dim, || {
        format!("target has {} channels, generator renders {}", target.channels, g.cfg.feature_dim)
    })?;
    validate(w0.len() == g.cfg.w_dim, || format!("initial style has {} entries, expected {}", w0.len(), g.cfg.w_dim))?;
    let obj = Objective {
        g,
        samples,
        target: target.to_f64(),
        dist: cfg.distance,
        channels: target.channels,
    };
    let mut w = w0.to_vec();
    let mut best = (f64::INFINITY, w.clone());
    let mut history = Vec::new();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    let mut steps = 0;
    loop {
        let need_grad = steps < cfg.max_steps;
        let (loss, grad) = if !need_grad {
            (obj.loss(&w)?, Vec::new())
        } else {
            match cfg.gradient {
                GradientMode::Reverse => obj.reverse(&w)?,
                GradientMode::FiniteDifference => obj.finite_difference(&w, cfg.fd_step)?,
            }
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("inversion loss became non-finite at step {steps}")));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, w.clone());
        }
        if loss <= cfg.tolerance || !need_grad {
            break;
        }
        steps += 1;
        let frac = (steps - 1) as f64 / cfg.max_steps as f64;
        let lr = cfg.step_size * (1.0 - (1.0 - cfg.final_step_fraction) * frac);
        let t = steps as i32;
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(Inversion {
        w: StyleVector::new(best.1)?,
        residual: best.0,
        steps,
        converged: best.0 <= cfg.tolerance,
        history,
    })
}

/// Recovers the style of `target` seen through `cam` with geometry `geo`,
/// starting from the generator's mean style.
pub fn invert(
    g: &GeneratorBundle,
    model: &ToyMorphModel,
    target: &ImageBuffer,
    cam: &Camera,
    geo: &MorphParams,
    cfg: &InversionConfig,
) -> Result<Inversion> {
    cfg.validate()?;
    validate(target.width == cam.width && target.height == cam.height, || {
        format!("target is {}x{}, camera is {}x{}", target.width, target.height, cam.width, cam.height)
    })?;
    let samples = g.ray_samples(model, cam, geo)?;
    let w0 = mean_style(g, cfg.init_samples, cfg.seed)?;
    invert_from(g, target, &samples, &w0, cfg)
}
