use serde::{Deserialize, Serialize};

use crate::assets::{Checkpoint, RngStream};
use crate::error::{validate, Result};

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Anything with trainable parameters laid out as a flat sequence of named
/// slices. Gradients use the same flat layout.
pub trait Parametric {
    fn num_params(&self) -> usize;
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, s| out.extend_from_slice(s));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        self.visit_mut(&mut |_, s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
    }
}

pub fn export_params(net: &dyn Parametric, prefix: &str, ck: &mut Checkpoint) -> Result<()> {
    let mut res = Ok(());
    net.visit(&mut |name, s| {
        if res.is_ok() {
            res = ck.put(format!("{prefix}/{name}"), vec![s.len()], s);
        }
    });
    res
}

pub fn import_params(net: &mut dyn Parametric, prefix: &str, ck: &Checkpoint) -> Result<()> {
    let mut res = Ok(());
    net.visit_mut(&mut |name, s| {
        if res.is_ok() {
            match ck.get_f64(&format!("{prefix}/{name}"), s.len()) {
                Ok(v) => s.copy_from_slice(&v),
                Err(e) => res = Err(e),
            }
        }
    });
    res
}

/// Fully connected layer `y = W x + b`, weight row-major `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(in_dim)`, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, gain: f64, rng: &mut RngStream) -> Self {
        let scale = gain / (in_dim.max(1) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: rng.gaussian_vec(in_dim * out_dim).into_iter().map(|v| v * scale).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut d = Self::zeros(dim, dim);
        for i in 0..dim {
            d.weight[i * dim + i] = 1.0;
        }
        d
    }

    /// Row-wise `y = W x + b` for `n` stacked inputs.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.in_dim);
        let mut y = vec![0.0; n * self.out_dim];
        for (xi, yi) in x.chunks_exact(self.in_dim).zip(y.chunks_exact_mut(self.out_dim)) {
            for (o, (w, b)) in self.weight.chunks_exact(self.in_dim).zip(&self.bias).enumerate() {
                yi[o] = b + dot(w, xi);
            }
        }
        y
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    /// Tangent of the output for input tangent `dx` (bias drops out).
    pub fn tangent(&self, dx: &[f64]) -> Vec<f64> {
        self.weight.chunks_exact(self.in_dim).map(|w| dot(w, dx)).collect()
    }

    /// Accumulates parameter gradients into `grad` (`[W | b]` layout) and
    /// returns the input gradient.
    pub fn backward_batch(&self, x: &[f64], dy: &[f64], n: usize, grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), n * self.out_dim);
        debug_assert_eq!(grad.len(), self.num_params());
        let (gw, gb) = grad.split_at_mut(self.in_dim * self.out_dim);
        let mut dx = vec![0.0; n * self.in_dim];
        for ((xi, dyi), dxi) in x
            .chunks_exact(self.in_dim)
            .zip(dy.chunks_exact(self.out_dim))
            .zip(dx.chunks_exact_mut(self.in_dim))
        {
            for (o, &g) in dyi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let gwo = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for k in 0..self.in_dim {
                    gwo[k] += g * xi[k];
                    dxi[k] += g * w[k];
                }
            }
        }
        dx
    }

    /// Input gradient only.
    pub fn backward_input(&self, dy: &[f64], n: usize) -> Vec<f64> {
        let mut dx = vec![0.0; n * self.in_dim];
        for (dyi, dxi) in dy.chunks_exact(self.out_dim).zip(dx.chunks_exact_mut(self.in_dim)) {
            for (o, &g) in dyi.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &self.weight[o * self.in_dim..(o + 1) * self.in_dim], dxi);
                }
            }
        }
        dx
    }
}

impl Parametric for Dense {
    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    for k in 4 * chunks..a.len() {
        s0 += a[k] * b[k];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Plain dense network: hidden activation after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
}

/// Intermediate values of a batched forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub n: usize,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>, hidden: Activation) -> Result<Self> {
        validate(!layers.is_empty(), || "network needs at least one layer".into())?;
        for w in layers.windows(2) {
            validate(w[0].out_dim == w[1].in_dim, || {
                format!("layer dims do not chain: {} -> {}", w[0].out_dim, w[1].in_dim)
            })?;
        }
        Ok(Self { layers, hidden })
    }

    /// Random network through `sizes` (input, hidden..., output).
    pub fn random(sizes: &[usize], hidden: Activation, rng: &mut RngStream) -> Self {
        let gain = match hidden {
            Activation::Relu | Activation::LeakyRelu => 2f64.sqrt(),
            _ => 1.0,
        };
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::random(w[0], w[1], if i + 2 == sizes.len() { 1.0 } else { gain }, rng))
            .collect();
        Self::new(layers, hidden).expect("sizes chain by construction")
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        validate(x.len() == self.in_dim(), || {
            format!("network expects {} inputs, got {}", self.in_dim(), x.len())
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x, 1))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64], n: usize) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_batch(&h, n);
            if i < last {
                for v in h.iter_mut() {
                    *v = self.hidden.apply(*v);
                }
            }
        }
        h
    }

    /// Batched forward pass over `n` row-stacked inputs, keeping intermediates.
    pub fn forward_trace(&self, x: &[f64], n: usize) -> MlpTrace {
        debug_assert_eq!(x.len(), n * self.in_dim());
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward_batch(&h, n);
            inputs.push(h);
            if i < last {
                h = z.iter().map(|&v| self.hidden.apply(v)).collect();
                pre.push(z);
            } else {
                h = z;
            }
        }
        MlpTrace {
            n,
            inputs,
            pre,
            output: h,
        }
    }

    /// Reverse accumulation: adds parameter gradients of `Σ dout·output` into
    /// `grad` and returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }
        let mut g = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < self.layers.len() - 1 {
                for (gv, &z) in g.iter_mut().zip(&trace.pre[i]) {
                    *gv *= self.hidden.derivative(z);
                }
            }
            let slot = &mut grad[offsets[i]..offsets[i] + layer.num_params()];
            g = layer.backward_batch(&trace.inputs[i], &g, trace.n, slot);
        }
        g
    }

    /// Input gradient of `Σ dout·output` without parameter gradients.
    pub fn backward_input(&self, trace: &MlpTrace, dout: &[f64]) -> Vec<f64> {
        let mut g = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (gv, &z) in g.iter_mut().zip(&trace.pre[i]) {
                    *gv *= self.hidden.derivative(z);
                }
            }
            g = self.layers[i].backward_input(&g, trace.n);
        }
        g
    }

    /// Parameter gradients for a single input and output adjoint.
    pub fn param_grad(&self, x: &[f64], adjoint: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        validate(adjoint.len() == self.out_dim(), || {
            format!("adjoint has {} entries, network outputs {}", adjoint.len(), self.out_dim())
        })?;
        let trace = self.forward_trace(x, 1);
        let mut grad = vec![0.0; self.num_params()];
        self.backward(&trace, adjoint, &mut grad);
        Ok(grad)
    }

    /// Exact Jacobian-vector product by forward tangent propagation.
    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        validate(v.len() == x.len(), || format!("direction has {} entries, input {}", v.len(), x.len()))?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut t = v.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let dz = layer.tangent(&t);
            if i < last {
                h = z.iter().map(|&zv| self.hidden.apply(zv)).collect();
                t = dz.iter().zip(&z).map(|(&d, &zv)| d * self.hidden.derivative(zv)).collect();
            } else {
                h = z;
                t = dz;
            }
        }
        Ok(t)
    }
}

impl Parametric for Mlp {
    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&mut |name, s| f(&format!("layer{i}.{name}"), s));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&mut |name, s| f(&format!("layer{i}.{name}"), s));
        }
    }
}

/// Dense Jacobian (`out × in`, row-major) assembled column by column from a
/// Jacobian-vector product.
pub fn jacobian_by_jvp(
    in_dim: usize,
    out_dim: usize,
    mut jvp: impl FnMut(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut j = vec![0.0; out_dim * in_dim];
    let mut e = vec![0.0; in_dim];
    for c in 0..in_dim {
        e[c] = 1.0;
        let col = jvp(&e);
        for r in 0..out_dim {
            j[r * in_dim + c] = col[r];
        }
        e[c] = 0.0;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent per-entry evaluation of the network.
    fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut acc = l.bias[o];
                for k in 0..l.in_dim {
                    acc += l.weight[o * l.in_dim + k] * h[k];
                }
                z[o] = if i + 1 < net.layers.len() { net.hidden.apply(acc) } else { acc };
            }
            h = z;
        }
        h
    }

    fn central_fd(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        f(&xp).iter().zip(f(&xm)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    #[test]
    fn batched_forward_matches_oracle() {
        let mut rng = RngStream::new(1, 0);
        let net = Mlp::random(&[5, 16, 16, 3], Activation::Softplus, &mut rng);
        let xs = rng.gaussian_vec(5 * 7);
        let trace = net.forward_trace(&xs, 7);
        for i in 0..7 {
            let expected = oracle_forward(&net, &xs[5 * i..5 * i + 5]);
            for (a, b) in trace.output[3 * i..3 * i + 3].iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn jvp_of_linear_map_is_exact() {
        let mut rng = RngStream::new(2, 0);
        let net = Mlp::new(vec![Dense::random(4, 3, 1.0, &mut rng)], Activation::Relu).unwrap();
        let x = rng.gaussian_vec(4);
        let v = rng.gaussian_vec(4);
        let j = net.jvp(&x, &v).unwrap();
        let l = &net.layers[0];
        for o in 0..3 {
            let expected: f64 = (0..4).map(|k| l.weight[o * 4 + k] * v[k]).sum();
            assert!((j[o] - expected).abs() < 1e-12);
        }
        assert!(net.jvp(&x, &[0.0; 4]).unwrap().iter().all(|&t| t == 0.0));
        assert!(net.jvp(&x, &[0.0; 3]).is_err());
    }

    #[test]
    fn jvp_matches_central_difference() {
        let mut rng = RngStream::new(3, 0);
        for trial in 0..5 {
            let net = Mlp::random(&[6, 24, 24, 4], Activation::Softplus, &mut rng);
            let x = rng.gaussian_vec(6);
            let v = rng.gaussian_vec(6);
            let j = net.jvp(&x, &v).unwrap();
            let fd = central_fd(|p| net.forward(p).unwrap(), &x, &v, 1e-4);
            let scale = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            let err = j.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err / scale < 1e-4, "trial {trial}: rel err {}", err / scale);
        }
    }

    #[test]
    fn jacobian_by_jvp_matches_fd_jacobian() {
        let mut rng = RngStream::new(4, 0);
        let net = Mlp::random(&[8, 64, 5], Activation::Softplus, &mut rng);
        let x = rng.gaussian_vec(8);
        let j = jacobian_by_jvp(8, 5, |e| net.jvp(&x, e).unwrap());
        let fd = jacobian_by_jvp(8, 5, |e| central_fd(|p| net.forward(p).unwrap(), &x, e, 1e-5));
        let scale = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        let err = j.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / scale < 1e-3);
    }

    #[test]
    fn param_grad_single_linear_layer() {
        let mut rng = RngStream::new(5, 0);
        let net = Mlp::new(vec![Dense::random(3, 2, 1.0, &mut rng)], Activation::Relu).unwrap();
        let x = [0.5, -1.0, 2.0];
        let a = [3.0, -2.0];
        let g = net.param_grad(&x, &a).unwrap();
        for o in 0..2 {
            for k in 0..3 {
                assert_eq!(g[o * 3 + k], a[o] * x[k]);
            }
            assert_eq!(g[6 + o], a[o]);
        }
        assert!(net.param_grad(&x, &[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(net.param_grad(&x, &[1.0]).is_err());
    }

    #[test]
    fn param_grad_matches_central_difference() {
        let mut rng = RngStream::new(6, 0);
        let net = Mlp::random(&[4, 12, 12, 3], Activation::Softplus, &mut rng);
        let x = rng.gaussian_vec(4);
        let a = rng.gaussian_vec(3);
        let g = net.param_grad(&x, &a).unwrap();
        let base = net.flat_params();
        let loss = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat_params(p);
            n.forward(&x).unwrap().iter().zip(&a).map(|(o, w)| o * w).sum::<f64>()
        };
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let lp = loss(&p);
            p[i] -= 2.0 * h;
            let lm = loss(&p);
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-3 * fd.abs().max(1e-4);
            assert!((g[i] - fd).abs() <= tol, "param {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn input_gradient_matches_backward() {
        let mut rng = RngStream::new(7, 0);
        let net = Mlp::random(&[4, 10, 2], Activation::LeakyRelu, &mut rng);
        let x = rng.gaussian_vec(8);
        let dy = rng.gaussian_vec(4);
        let trace = net.forward_trace(&x, 2);
        let mut g = vec![0.0; net.num_params()];
        let a = net.backward(&trace, &dy, &mut g);
        let b = net.backward_input(&trace, &dy);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        assert!(Mlp::new(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)], Activation::Relu).is_err());
        assert!(Mlp::new(vec![], Activation::Relu).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let mut rng = RngStream::new(8, 0);
        let net = Mlp::random(&[3, 5, 2], Activation::Relu, &mut rng);
        let mut ck = Checkpoint::default();
        export_params(&net, "m", &mut ck).unwrap();
        let mut other = Mlp::random(&[3, 5, 2], Activation::Relu, &mut rng);
        import_params(&mut other, "m", &ck).unwrap();
        for (a, b) in net.flat_params().iter().zip(other.flat_params()) {
            assert_eq!(*a as f32, b as f32);
        }
    }
}
