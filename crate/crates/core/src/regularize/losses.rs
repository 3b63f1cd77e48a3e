use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};

/// Loss weights for alignment training and editing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegWeights {
    pub alpha: f64,
    pub lambda_jac: f64,
    pub lambda_norm: f64,
    pub eta: f64,
    pub alpha_dropout: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_jac: 0.01,
            lambda_norm: 10.0,
            eta: 10.0,
            alpha_dropout: 0.5,
        }
    }
}

impl RegWeights {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        validate(unit(self.alpha), || format!("alpha must lie in [0, 1], got {}", self.alpha))?;
        validate(unit(self.alpha_dropout), || {
            format!("alpha_dropout must lie in [0, 1], got {}", self.alpha_dropout)
        })?;
        for (name, v) in [
            ("lambda_jac", self.lambda_jac),
            ("lambda_norm", self.lambda_norm),
            ("eta", self.eta),
        ] {
            validate(v >= 0.0 && v.is_finite(), || format!("{name} must be non-negative, got {v}"))?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-preservation penalty `(‖w_r‖ − ‖w‖)²`.
pub fn r_norm(w_r: &[f64], w: &[f64]) -> Result<f64> {
    validate(w_r.len() == w.len(), || {
        format!("style vectors differ in length: {} vs {}", w_r.len(), w.len())
    })?;
    let d = norm(w_r) - norm(w);
    Ok(d * d)
}

/// Cosine similarity; zero-norm inputs are rejected.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    validate(a.len() == b.len(), || {
        format!("vectors differ in length: {} vs {}", a.len(), b.len())
    })?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero-norm vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Editing objective `1 − cos(Δx, Δt) + η·(‖w_t‖ − ‖w‖)²`.
pub fn edit_loss(delta_x: &[f64], delta_t: &[f64], w_t: &[f64], w: &[f64], eta: f64) -> Result<f64> {
    Ok(1.0 - cosine(delta_x, delta_t)? + eta * r_norm(w_t, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_norm_values() {
        assert_eq!(r_norm(&[6.0, 8.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(r_norm(&[0.0, 5.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(r_norm(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn edit_loss_cases() {
        let w = [3.0, 4.0];
        let wt = [5.0, 0.0];
        let d = [1.0, 2.0, -1.0];
        assert!(edit_loss(&d, &d, &wt, &w, 10.0).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        assert!((edit_loss(&neg, &d, &wt, &w, 10.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((edit_loss(&[1.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &wt, &w, 10.0).unwrap() - 1.0).abs() < 1e-12);
        let wt2 = [6.0, 8.0];
        assert!((edit_loss(&d, &d, &wt2, &w, 10.0).unwrap() - 250.0).abs() < 1e-9);
    }

    #[test]
    fn zero_delta_rejected() {
        let e = edit_loss(&[0.0, 0.0], &[1.0, 0.0], &[1.0], &[1.0], 10.0).unwrap_err();
        assert!(matches!(e, Error::DegenerateInput(_)));
    }

    #[test]
    fn weights_defaults_and_validation() {
        let w = RegWeights::default();
        assert_eq!((w.lambda_jac, w.lambda_norm, w.eta, w.alpha_dropout), (0.01, 10.0, 10.0, 0.5));
        assert!(w.validate().is_ok());
        assert!(RegWeights { alpha: 1.5, ..w.clone() }.validate().is_err());
        assert!(RegWeights { lambda_jac: -1.0, ..w }.validate().is_err());
    }
}
