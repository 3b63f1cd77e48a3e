use serde::{Deserialize, Serialize};

use crate::assets::{Checkpoint, RngStream};
use crate::error::{validate, Error, Result};
use crate::field::{export_params, import_params, Activation, Dense, Parametric};

/// Residual dense network mapping `(main ‖ cond)` to a direction in the main
/// space: an input projection, residual blocks `h + W₂ φ(W₁ φ(h))` and a final
/// linear layer. Zero-initializing the final layer makes the output exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentNet {
    pub main_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub act: Activation,
    pub input: Dense,
    pub blocks: Vec<[Dense; 2]>,
    pub output: Dense,
}

/// Activations kept by [`AlignmentNet::forward_trace`].
#[derive(Clone, Debug)]
pub struct AlignmentTrace {
    n: usize,
    x: Vec<f64>,
    /// Residual stream entering each block, plus the final one.
    h: Vec<Vec<f64>>,
    /// Pre-activation of each block's first layer.
    mid: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignMeta {
    kind: String,
    main_dim: usize,
    cond_dim: usize,
    width: usize,
    blocks: usize,
    act: Activation,
}

impl AlignmentNet {
    pub const DEFAULT_WIDTH: usize = 64;
    pub const DEFAULT_BLOCKS: usize = 2;

    /// Standard-initialized hidden layers with a zero output layer.
    pub fn new(main_dim: usize, cond_dim: usize, width: usize, n_blocks: usize, rng: &mut RngStream) -> Self {
        let gain = 2f64.sqrt();
        let input = Dense::random(main_dim + cond_dim, width, 1.0, rng);
        let blocks = (0..n_blocks)
            .map(|_| {
                [
                    Dense::random(width, width, gain, rng),
                    Dense::random(width, width, gain * 0.5, rng),
                ]
            })
            .collect();
        Self {
            main_dim,
            cond_dim,
            width,
            act: Activation::LeakyRelu,
            input,
            blocks,
            output: Dense::zeros(width, main_dim),
        }
    }

    /// Default architecture: two residual blocks of width 64.
    pub fn standard(main_dim: usize, cond_dim: usize, rng: &mut RngStream) -> Self {
        Self::new(main_dim, cond_dim, Self::DEFAULT_WIDTH, Self::DEFAULT_BLOCKS, rng)
    }

    /// Replaces the output layer with a random one (used by tests and toys).
    pub fn randomize_output(&mut self, gain: f64, rng: &mut RngStream) {
        self.output = Dense::random(self.width, self.main_dim, gain, rng);
    }

    pub fn zero_output(&mut self) {
        self.output = Dense::zeros(self.width, self.main_dim);
    }

    pub fn is_zero_init(&self) -> bool {
        self.output.weight.iter().chain(&self.output.bias).all(|&v| v == 0.0)
    }

    pub fn in_dim(&self) -> usize {
        self.main_dim + self.cond_dim
    }

    fn concat(&self, main: &[f64], cond: &[f64], n: usize) -> Result<Vec<f64>> {
        validate(main.len() == n * self.main_dim && cond.len() == n * self.cond_dim, || {
            format!(
                "alignment net expects {}x({} + {}) inputs, got {} + {}",
                n,
                self.main_dim,
                self.cond_dim,
                main.len(),
                cond.len()
            )
        })?;
        let mut x = Vec::with_capacity(n * self.in_dim());
        for i in 0..n {
            x.extend_from_slice(&main[i * self.main_dim..(i + 1) * self.main_dim]);
            x.extend_from_slice(&cond[i * self.cond_dim..(i + 1) * self.cond_dim]);
        }
        Ok(x)
    }

    fn activate(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.act.apply(x)).collect()
    }

    /// Batched forward over `n` rows of `main` (`n × main_dim`) and `cond`.
    pub fn forward_trace(&self, main: &[f64], cond: &[f64], n: usize) -> Result<AlignmentTrace> {
        let x = self.concat(main, cond, n)?;
        let mut h = vec![self.input.forward_batch(&x, n)];
        let mut mid = Vec::with_capacity(self.blocks.len());
        for [l1, l2] in &self.blocks {
            let cur = h.last().unwrap();
            let b = l1.forward_batch(&self.activate(cur), n);
            let c = l2.forward_batch(&self.activate(&b), n);
            let next: Vec<f64> = cur.iter().zip(&c).map(|(a, d)| a + d).collect();
            mid.push(b);
            h.push(next);
        }
        let output = self.output.forward_batch(&self.activate(h.last().unwrap()), n);
        Ok(AlignmentTrace { n, x, h, mid, output })
    }

    pub fn forward(&self, main: &[f64], cond: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.forward_trace(main, cond, n)?.output)
    }

    fn act_grad(&self, g: &mut [f64], pre: &[f64]) {
        for (gv, &z) in g.iter_mut().zip(pre) {
            *gv *= self.act.derivative(z);
        }
    }

    /// Adds parameter gradients of `Σ dout·output` into `grad` and returns the
    /// input gradients `(dmain, dcond)`.
    pub fn backward(&self, trace: &AlignmentTrace, dout: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(grad.len(), self.num_params());
        let n = trace.n;
        let n_in = self.input.num_params();
        let n_blk: Vec<[usize; 2]> = self.blocks.iter().map(|[a, b]| [a.num_params(), b.num_params()]).collect();
        let (g_in, rest) = grad.split_at_mut(n_in);
        let blk_total: usize = n_blk.iter().map(|[a, b]| a + b).sum();
        let (g_blk, g_out) = rest.split_at_mut(blk_total);

        let last_h = trace.h.last().unwrap();
        let mut dh = self.output.backward_batch(&self.activate(last_h), dout, n, g_out);
        self.act_grad(&mut dh, last_h);

        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for [a, b] in &n_blk {
            offsets.push(off);
            off += a + b;
        }
        for k in (0..self.blocks.len()).rev() {
            let [l1, l2] = &self.blocks[k];
            let slot = &mut g_blk[offsets[k]..offsets[k] + n_blk[k][0] + n_blk[k][1]];
            let (s1, s2) = slot.split_at_mut(n_blk[k][0]);
            let b = &trace.mid[k];
            let mut dc = l2.backward_batch(&self.activate(b), &dh, n, s2);
            self.act_grad(&mut dc, b);
            let h_in = &trace.h[k];
            let mut da = l1.backward_batch(&self.activate(h_in), &dc, n, s1);
            self.act_grad(&mut da, h_in);
            for (d, a) in dh.iter_mut().zip(&da) {
                *d += a;
            }
        }
        let dx = self.input.backward_batch(&trace.x, &dh, n, g_in);
        let mut dmain = Vec::with_capacity(n * self.main_dim);
        let mut dcond = Vec::with_capacity(n * self.cond_dim);
        for row in dx.chunks_exact(self.in_dim()) {
            dmain.extend_from_slice(&row[..self.main_dim]);
            dcond.extend_from_slice(&row[self.main_dim..]);
        }
        (dmain, dcond)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = AlignMeta {
            kind: "alignment".into(),
            main_dim: self.main_dim,
            cond_dim: self.cond_dim,
            width: self.width,
            blocks: self.blocks.len(),
            act: self.act,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?);
        export_params(self, "net", &mut ck)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let m: AlignMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Format(format!("alignment manifest: {e}")))?;
        let mut net = Self {
            main_dim: m.main_dim,
            cond_dim: m.cond_dim,
            width: m.width,
            act: m.act,
            input: Dense::zeros(m.main_dim + m.cond_dim, m.width),
            blocks: (0..m.blocks)
                .map(|_| [Dense::zeros(m.width, m.width), Dense::zeros(m.width, m.width)])
                .collect(),
            output: Dense::zeros(m.width, m.main_dim),
        };
        import_params(&mut net, "net", ck)?;
        Ok(net)
    }
}

impl Parametric for AlignmentNet {
    fn num_params(&self) -> usize {
        self.input.num_params()
            + self.blocks.iter().map(|[a, b]| a.num_params() + b.num_params()).sum::<usize>()
            + self.output.num_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.input.visit(&mut |n, s| f(&format!("input.{n}"), s));
        for (k, [a, b]) in self.blocks.iter().enumerate() {
            a.visit(&mut |n, s| f(&format!("block{k}.fc1.{n}"), s));
            b.visit(&mut |n, s| f(&format!("block{k}.fc2.{n}"), s));
        }
        self.output.visit(&mut |n, s| f(&format!("output.{n}"), s));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.input.visit_mut(&mut |n, s| f(&format!("input.{n}"), s));
        for (k, [a, b]) in self.blocks.iter_mut().enumerate() {
            a.visit_mut(&mut |n, s| f(&format!("block{k}.fc1.{n}"), s));
            b.visit_mut(&mut |n, s| f(&format!("block{k}.fc2.{n}"), s));
        }
        self.output.visit_mut(&mut |n, s| f(&format!("output.{n}"), s));
    }
}
