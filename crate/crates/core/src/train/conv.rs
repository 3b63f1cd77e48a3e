use crate::assets::RngStream;
use crate::field::{Activation, Dense, Parametric};

/// 3×3 convolution with stride 2 and zero padding 1 over HWC images,
/// evaluated as a dense layer on extracted patches (patch order: ky, kx, c).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: Dense,
}

const K: usize = 3;
const STRIDE: usize = 2;
const PAD: isize = 1;

impl Conv2d {
    pub fn random(in_ch: usize, out_ch: usize, gain: f64, rng: &mut RngStream) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: Dense::random(K * K * in_ch, out_ch, gain, rng),
        }
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: Dense::zeros(K * K * in_ch, out_ch),
        }
    }

    pub fn out_size(size: usize) -> usize {
        (size + 1) / STRIDE
    }

    /// Patch matrix `(oh·ow) × (9·in_ch)`.
    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (Self::out_size(h), Self::out_size(w));
        let c = self.in_ch;
        let mut cols = vec![0.0; oh * ow * K * K * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * K * K * c..(oy * ow + ox + 1) * K * K * c];
                for ky in 0..K {
                    let iy = (oy * STRIDE + ky) as isize - PAD;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..K {
                        let ix = (ox * STRIDE + kx) as isize - PAD;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * c;
                        let dst = (ky * K + kx) * c;
                        row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (Self::out_size(h), Self::out_size(w));
        let c = self.in_ch;
        let mut dx = vec![0.0; h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcols[(oy * ow + ox) * K * K * c..(oy * ow + ox + 1) * K * K * c];
                for ky in 0..K {
                    let iy = (oy * STRIDE + ky) as isize - PAD;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..K {
                        let ix = (ox * STRIDE + kx) as isize - PAD;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let src = (ky * K + kx) * c;
                        for k in 0..c {
                            dx[dst + k] += row[src + k];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Strided convolution stem followed by a dense projection of the flattened
/// final feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStem {
    pub height: usize,
    pub width: usize,
    pub convs: Vec<Conv2d>,
    pub head: Dense,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub struct StemTrace {
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    flat: Vec<f64>,
    pub output: Vec<f64>,
}

impl ConvStem {
    pub fn new(
        height: usize,
        width: usize,
        in_ch: usize,
        widths: &[usize],
        out_dim: usize,
        act: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let gain = match act {
            Activation::Linear => 1.0,
            _ => 2f64.sqrt(),
        };
        let mut convs = Vec::with_capacity(widths.len());
        let mut c = in_ch;
        for &wd in widths {
            convs.push(Conv2d::random(c, wd, gain, rng));
            c = wd;
        }
        let (fh, fw) = Self::final_size(height, width, widths.len());
        Self {
            height,
            width,
            convs,
            head: Dense::random(fh * fw * c, out_dim, 1.0, rng),
            act,
        }
    }

    fn final_size(h: usize, w: usize, layers: usize) -> (usize, usize) {
        (0..layers).fold((h, w), |(h, w), _| (Conv2d::out_size(h), Conv2d::out_size(w)))
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().map_or(self.head.in_dim / (self.height * self.width), |c| c.in_ch)
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim
    }

    pub fn forward_trace(&self, x: &[f64]) -> StemTrace {
        debug_assert_eq!(x.len(), self.height * self.width * self.in_channels());
        let (mut h, mut w) = (self.height, self.width);
        let mut cur = x.to_vec();
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let c = conv.im2col(&cur, h, w);
            h = Conv2d::out_size(h);
            w = Conv2d::out_size(w);
            let z = conv.kernel.forward_batch(&c, h * w);
            cur = z.iter().map(|&v| self.act.apply(v)).collect();
            cols.push(c);
            pre.push(z);
        }
        let output = self.head.forward(&cur);
        StemTrace {
            cols,
            pre,
            flat: cur,
            output,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    /// Adds parameter gradients of `Σ dout·output` into `grad`; returns the
    /// input gradient (HWC).
    pub fn backward(&self, trace: &StemTrace, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut sizes = vec![(self.height, self.width)];
        for _ in &self.convs {
            let &(h, w) = sizes.last().unwrap();
            sizes.push((Conv2d::out_size(h), Conv2d::out_size(w)));
        }
        let conv_params: usize = self.convs.iter().map(|c| c.kernel.num_params()).sum();
        let (gc, gh) = grad.split_at_mut(conv_params);
        let mut g = self.head.backward_batch(&trace.flat, dout, 1, gh);
        let mut offsets = Vec::with_capacity(self.convs.len());
        let mut off = 0;
        for c in &self.convs {
            offsets.push(off);
            off += c.kernel.num_params();
        }
        for i in (0..self.convs.len()).rev() {
            let conv = &self.convs[i];
            for (gv, &z) in g.iter_mut().zip(&trace.pre[i]) {
                *gv *= self.act.derivative(z);
            }
            let (oh, ow) = sizes[i + 1];
            let slot = &mut gc[offsets[i]..offsets[i] + conv.kernel.num_params()];
            let dcols = conv.kernel.backward_batch(&trace.cols[i], &g, oh * ow, slot);
            let (h, w) = sizes[i];
            g = conv.col2im(&dcols, h, w);
        }
        g
    }
}

impl Parametric for ConvStem {
    fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.kernel.num_params()).sum::<usize>() + self.head.num_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, c) in self.convs.iter().enumerate() {
            c.kernel.visit(&mut |n, s| f(&format!("conv{i}.{n}"), s));
        }
        self.head.visit(&mut |n, s| f(&format!("head.{n}"), s));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.kernel.visit_mut(&mut |n, s| f(&format!("conv{i}.{n}"), s));
        }
        self.head.visit_mut(&mut |n, s| f(&format!("head.{n}"), s));
    }
}
