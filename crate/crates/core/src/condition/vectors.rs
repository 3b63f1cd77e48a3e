use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::field::Mlp;

use super::align::AlignmentNet;

/// Latent code `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub values: Vec<f64>,
}

/// Style code `w` (output of the mapping network).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub values: Vec<f64>,
}

/// Image or text embedding used as conditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl StyleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("style vector has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Embedding {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// Unit-norm copy; zero vectors are rejected.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateInput("cannot normalize a zero-norm embedding".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    validate((0.0..=1.0).contains(&alpha), || format!("alpha must lie in [0, 1], got {alpha}"))
}

pub fn map_latent(m_g: &Mlp, z: &LatentVector) -> Result<StyleVector> {
    StyleVector::new(m_g.forward(&z.values)?)
}

/// `w + α·T_G(w, r)`. For `α = 0` the input is returned unchanged, bit for bit.
pub fn align_style(w: &StyleVector, r: &Embedding, alpha: f64, t_g: &AlignmentNet) -> Result<StyleVector> {
    check_alpha(alpha)?;
    validate(w.values.len() == t_g.main_dim && r.dim() == t_g.cond_dim, || {
        format!(
            "alignment net expects ({}, {}), got ({}, {})",
            t_g.main_dim,
            t_g.cond_dim,
            w.values.len(),
            r.dim()
        )
    })?;
    if alpha == 0.0 {
        return Ok(w.clone());
    }
    let d = t_g.forward(&w.values, &r.values, 1)?;
    StyleVector::new(w.values.iter().zip(&d).map(|(a, b)| a + alpha * b).collect())
}

/// Projection score `u · (v + α·T_D(v, r))`.
pub fn discriminate(u: &[f64], v: &[f64], r: &Embedding, alpha: f64, t_d: &AlignmentNet) -> Result<f64> {
    check_alpha(alpha)?;
    validate(u.len() == v.len() && v.len() == t_d.main_dim && r.dim() == t_d.cond_dim, || {
        format!(
            "discriminator dims do not chain: u {}, v {}, r {}, T_D ({}, {})",
            u.len(),
            v.len(),
            r.dim(),
            t_d.main_dim,
            t_d.cond_dim
        )
    })?;
    let v_r: Vec<f64> = if alpha == 0.0 {
        v.to_vec()
    } else {
        let d = t_d.forward(v, &r.values, 1)?;
        v.iter().zip(&d).map(|(a, b)| a + alpha * b).collect()
    };
    Ok(u.iter().zip(&v_r).map(|(a, b)| a * b).sum())
}

/// Editing direction `w + α·E_t(w)` from a condition-free alignment network.
pub fn edit_style(w: &StyleVector, e_t: &AlignmentNet, alpha: f64) -> Result<StyleVector> {
    validate(e_t.cond_dim == 0, || "editing network must not take a condition".into())?;
    align_style(w, &Embedding::raw(Vec::new()), alpha, e_t)
}

/// Copy of `net` with its output layer zeroed, so it emits exactly 0.
pub fn zero_init(net: &AlignmentNet) -> AlignmentNet {
    let mut out = net.clone();
    out.zero_output();
    out
}
