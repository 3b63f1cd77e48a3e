use serde::{Deserialize, Serialize};

/// Adam with single-precision state: parameters and moments are rounded to
/// `f32` after every update so checkpoints (stored as `f32`) resume exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[inline]
pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = round_f32(self.beta1 * self.m[i] + (1.0 - self.beta1) * g);
            self.v[i] = round_f32(self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g);
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = round_f32(params[i] - self.lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}
