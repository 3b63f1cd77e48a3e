use serde::{Deserialize, Serialize};

use crate::assets::RngStream;
use crate::error::{validate, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        validate(data.len() == rows * cols, || {
            format!("matrix {rows}x{cols} needs {} entries, got {}", rows * cols, data.len())
        })?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Entries drawn i.i.d. from N(0, scale^2).
    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Self {
        let data = rng.gaussian_vec(rows * cols).into_iter().map(|v| v * scale).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &s) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *o += a * s;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        validate(self.cols == other.rows, || {
            format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(&other.data[k * other.cols..(k + 1) * other.cols]) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest singular value by power iteration on `JᵀJ`.
///
/// The start vector is all ones plus a small index-dependent tilt, so the
/// result is deterministic and avoids the exact-orthogonality trap on
/// symmetric inputs.
pub fn spectral_norm(j: &Matrix, iters: usize) -> Result<f64> {
    validate(iters >= 1, || "spectral_norm needs at least one iteration".into())?;
    if j.cols == 0 || j.rows == 0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = (0..j.cols).map(|i| 1.0 + 0.1 * ((i as f64) * 0.7548776662).fract()).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let u = j.matvec(&v);
        let mut w = j.matvec_t(&u);
        let n = normalize(&mut w);
        if n == 0.0 {
            return Ok(0.0);
        }
        sigma = n.sqrt();
        v = w;
    }
    Ok(sigma)
}
