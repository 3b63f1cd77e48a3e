use tridef::assets::RngStream;
use tridef::condition::{edit_style, AlignmentNet, StyleVector};
use tridef::field::Parametric;
use tridef::regularize::{cosine, edit_loss};
use tridef::train::Adam;

const W_DIM: usize = 8;
const E_DIM: usize = 6;
const ETA: f64 = 10.0;

/// Fixed nonlinear stand-in for "embed the image generated from w".
struct Proxy {
    p: Vec<f64>,
}

impl Proxy {
    fn embed(&self, w: &[f64]) -> Vec<f64> {
        (0..E_DIM)
            .map(|i| (0..W_DIM).map(|j| self.p[i * W_DIM + j] * w[j]).sum::<f64>().tanh())
            .collect()
    }

    /// Gradient of `1 − cos(E(w_t) − E(w), t)` with respect to `w_t`.
    fn direction_grad(&self, w_t: &[f64], w: &[f64], t: &[f64]) -> Vec<f64> {
        let (et, e0) = (self.embed(w_t), self.embed(w));
        let dx: Vec<f64> = et.iter().zip(&e0).map(|(a, b)| a - b).collect();
        let nx = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = cosine(&dx, t).unwrap();
        let d_dx: Vec<f64> = dx.iter().zip(t).map(|(x, tv)| -(tv / (nx * nt) - c * x / (nx * nx))).collect();
        (0..W_DIM)
            .map(|j| (0..E_DIM).map(|i| d_dx[i] * (1.0 - et[i] * et[i]) * self.p[i * W_DIM + j]).sum())
            .collect()
    }
}

fn direction_loss(proxy: &Proxy, net: &AlignmentNet, w: &[f64], t: &[f64], alpha: f64) -> f64 {
    let w_t = edit_style(&StyleVector::new(w.to_vec()).unwrap(), net, alpha).unwrap().values;
    let dx: Vec<f64> = proxy.embed(&w_t).iter().zip(proxy.embed(w)).map(|(a, b)| a - b).collect();
    // No edit means no direction: counted as orthogonal.
    if dx.iter().all(|&v| v == 0.0) {
        return 1.0;
    }
    1.0 - cosine(&dx, t).unwrap()
}

#[test]
fn trained_editor_moves_monotonically_toward_the_target() {
    let mut rng = RngStream::new(21, 0);
    let proxy = Proxy {
        p: rng.gaussian_vec(E_DIM * W_DIM).iter().map(|v| v / (W_DIM as f64).sqrt()).collect(),
    };
    let t = rng.gaussian_vec(E_DIM);
    let train: Vec<Vec<f64>> = (0..16).map(|_| rng.gaussian_vec(W_DIM)).collect();

    let mut net = AlignmentNet::new(W_DIM, 0, 16, 2, &mut rng);
    // A zero edit has no direction to score, so training starts from a tiny one.
    net.randomize_output(1e-3, &mut rng);
    let mut params = net.flat_params();
    let mut adam = Adam::new(params.len(), 0.01, 0.9, 0.999);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..2000 {
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for w in &train {
            let trace = net.forward_trace(w, &[], 1).unwrap();
            let w_t: Vec<f64> = w.iter().zip(&trace.output).map(|(a, b)| a + b).collect();
            let dx: Vec<f64> = proxy.embed(&w_t).iter().zip(proxy.embed(w)).map(|(a, b)| a - b).collect();
            total += edit_loss(&dx, &t, &w_t, w, ETA).unwrap();
            let mut dout = proxy.direction_grad(&w_t, w, &t);
            let (nt, n0) = (norm(&w_t), norm(w));
            for (d, v) in dout.iter_mut().zip(&w_t) {
                *d += 2.0 * ETA * (nt - n0) * v / nt;
            }
            net.backward(&trace, &dout, &mut grad);
        }
        let scale = 1.0 / train.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        adam.update(&mut params, &grad);
        net.set_flat_params(&params);
        first.get_or_insert(total * scale);
        last = total * scale;
    }
    assert!(last < 0.5 * first.unwrap(), "training loss {last} vs initial {}", first.unwrap());

    // Measured on the fixtures the editor was trained on.
    let mean = |alpha: f64| train.iter().map(|w| direction_loss(&proxy, &net, w, &t, alpha)).sum::<f64>() / train.len() as f64;
    let (l0, l5, l1) = (mean(0.0), mean(0.5), mean(1.0));
    assert_eq!(l0, 1.0);
    assert!(l5 <= l0 && l1 <= l5 + 1e-12, "losses {l0} {l5} {l1}");
    assert!(l1 < 0.01, "loss at full strength {l1}");
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
