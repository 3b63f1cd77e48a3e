use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::RngStream;
use crate::error::{validate, Error, Result};

use super::matrix::Matrix;

/// Probe configuration shared by the stochastic estimators. Probe `k` draws
/// from `rng.substream(k)`, so results do not depend on evaluation order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub sigma: f64,
    pub n_probes: usize,
    pub rng: RngStream,
}

impl ProbeSpec {
    pub const DEFAULT_SIGMA: f64 = 0.1;

    pub fn new(rng: RngStream) -> Self {
        Self {
            sigma: Self::DEFAULT_SIGMA,
            n_probes: 1,
            rng,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_probes(mut self, n: usize) -> Self {
        self.n_probes = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate(self.sigma > 0.0 && self.sigma.is_finite(), || {
            format!("probe sigma must be positive, got {}", self.sigma)
        })?;
        validate(self.n_probes >= 1, || "need at least one probe".into())
    }

    /// Standard-normal direction for probe `k`.
    pub fn direction(&self, k: usize, dim: usize) -> Vec<f64> {
        self.rng.substream(k as u64).gaussian_vec(dim)
    }
}

/// Sample mean of per-probe values with their unbiased sample variance
/// (zero for a single probe).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub variance: f64,
    pub n_probes: usize,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        if !mean.is_finite() {
            return Err(Error::Numeric("non-finite Jacobian-norm estimate".into()));
        }
        Ok(Self {
            mean,
            variance,
            n_probes: n,
        })
    }

    pub fn std_error(&self) -> f64 {
        (self.variance / self.n_probes as f64).sqrt()
    }
}

#[inline]
fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn exact_frob_sq(j: &Matrix) -> f64 {
    sq_norm(&j.data)
}

/// Unbiased estimate of `‖J‖²_F` as the mean of `‖J v‖²` over Gaussian probes,
/// using an exact Jacobian-vector product.
pub fn hutchinson_frob_sq(
    jvp: impl Fn(&[f64]) -> Vec<f64> + Sync,
    in_dim: usize,
    probes: &ProbeSpec,
) -> Result<Estimate> {
    probes.validate()?;
    let samples: Vec<f64> = (0..probes.n_probes)
        .into_par_iter()
        .map(|k| sq_norm(&jvp(&probes.direction(k, in_dim))))
        .collect();
    Estimate::from_samples(&samples)
}

/// Finite-difference estimate: mean of `‖f(x + ε) − f(x)‖² / σ²` with
/// `ε ~ N(0, σ² I)`. Needs only forward evaluations; biased by `O(σ²)` for
/// nonlinear `f`.
pub fn fd_frob_sq(
    f: impl Fn(&[f64]) -> Vec<f64> + Sync,
    x: &[f64],
    probes: &ProbeSpec,
) -> Result<Estimate> {
    probes.validate()?;
    let fx = f(x);
    let s = probes.sigma;
    let samples: Vec<f64> = (0..probes.n_probes)
        .into_par_iter()
        .map(|k| {
            let xp: Vec<f64> = probes
                .direction(k, x.len())
                .iter()
                .zip(x)
                .map(|(e, xi)| xi + s * e)
                .collect();
            let fp = f(&xp);
            fp.iter().zip(&fx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (s * s)
        })
        .collect();
    Estimate::from_samples(&samples)
}

/// Alignment smoothness penalty: the finite-difference Frobenius estimate of
/// the alignment map's Jacobian with respect to the embedding.
pub fn r_jac(align: impl Fn(&[f64]) -> Vec<f64> + Sync, r: &[f64], probes: &ProbeSpec) -> Result<f64> {
    Ok(fd_frob_sq(align, r, probes)?.mean)
}
