use rayon::prelude::*;

use crate::assets::RngStream;
use crate::error::{validate, Result};
use crate::regularize::{fd_frob_sq, ProbeSpec};
use crate::render::RaySamples;

use super::generator::GeneratorBundle;

/// Mean L2 distance over all unordered pairs.
pub fn mean_pairwise_distance(outputs: &[Vec<f64>]) -> Result<f64> {
    let n = outputs.len();
    validate(n >= 2, || format!("pairwise distance needs at least 2 outputs, got {n}"))?;
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = outputs[i].iter().zip(&outputs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += d2.sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Latents used by the diversity diagnostic: `z_k` comes from `rng.substream(k)`.
pub fn diversity_latents(z_dim: usize, n_z: usize, rng: &RngStream) -> Vec<Vec<f64>> {
    (0..n_z).map(|k| rng.substream(k as u64).gaussian_vec(z_dim)).collect()
}

/// Mean pairwise output distance of `gen` over `n_z` latent draws.
pub fn diversity_fn(gen: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync, z_dim: usize, n_z: usize, rng: &RngStream) -> Result<f64> {
    validate(n_z >= 2, || format!("diversity needs n_z >= 2, got {n_z}"))?;
    let outs = diversity_latents(z_dim, n_z, rng)
        .par_iter()
        .map(|z| gen(z))
        .collect::<Result<Vec<_>>>()?;
    mean_pairwise_distance(&outs)
}

/// Image diversity of a generator for a fixed embedding, strength, camera and
/// geometry (baked into `samples`), varying only `z`.
pub fn diversity(g: &GeneratorBundle, r: &[f64], alpha: f64, n_z: usize, samples: &RaySamples, rng: &RngStream) -> Result<f64> {
    diversity_fn(|z| g.generate(z, r, alpha, samples), g.cfg.z_dim, n_z, rng)
}

/// `‖∂G/∂r‖_F / ‖∂G/∂z‖_F` from finite-difference Frobenius estimates; `+∞`
/// when the output does not move with `z`.
pub fn sensitivity_ratio(
    gen: impl Fn(&[f64], &[f64]) -> Vec<f64> + Sync,
    z: &[f64],
    r: &[f64],
    probes: &ProbeSpec,
) -> Result<f64> {
    probes.validate()?;
    let pz = ProbeSpec {
        rng: probes.rng.substream(0),
        ..probes.clone()
    };
    let pr = ProbeSpec {
        rng: probes.rng.substream(1),
        ..probes.clone()
    };
    let num = fd_frob_sq(|rr| gen(z, rr), r, &pr)?.mean;
    let den = fd_frob_sq(|zz| gen(zz, r), z, &pz)?.mean;
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((num / den).sqrt())
}

/// [`sensitivity_ratio`] of a generator bundle's rendered image.
pub fn bundle_sensitivity(
    g: &GeneratorBundle,
    z: &[f64],
    r: &[f64],
    alpha: f64,
    samples: &RaySamples,
    probes: &ProbeSpec,
) -> Result<f64> {
    g.mapping.check_input(z)?;
    validate(r.len() == g.cfg.r_dim, || format!("embedding has {} entries, expected {}", r.len(), g.cfg.r_dim))?;
    sensitivity_ratio(
        |zz, rr| g.generate(zz, rr, alpha, samples).unwrap_or_else(|_| vec![f64::NAN; samples.n_rays() * 3]),
        z,
        r,
        probes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_outputs_match_enumeration() {
        let a = vec![1.0, 2.0, -1.0];
        let b = vec![-2.0, 0.0, 3.0];
        let dist = a.iter().zip(&b).map(|(x, y): (&f64, &f64)| (x - y).powi(2)).sum::<f64>().sqrt();
        // every equally likely assignment of {A, B} to 4 draws
        let mut total = 0.0;
        for mask in 0..16u32 {
            let outs: Vec<Vec<f64>> = (0..4).map(|k| if mask >> k & 1 == 1 { a.clone() } else { b.clone() }).collect();
            total += mean_pairwise_distance(&outs).unwrap();
        }
        let expected_unequal = 0.5;
        assert!((total / 16.0 - dist * expected_unequal).abs() < 1e-12);

        let pick = |z: &[f64]| -> Result<Vec<f64>> { Ok(if z[0] > 0.0 { a.clone() } else { b.clone() }) };
        let v = diversity_fn(pick, 2, 4, &RngStream::new(3, 0)).unwrap();
        let outs: Vec<_> = diversity_latents(2, 4, &RngStream::new(3, 0)).iter().map(|z| pick(z).unwrap()).collect();
        let unequal = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).filter(|&(i, j)| outs[i] != outs[j]).count();
        assert!((v - dist * unequal as f64 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_generator_has_zero_diversity() {
        let v = diversity_fn(|_| Ok(vec![0.5; 10]), 4, 5, &RngStream::new(1, 0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(diversity_fn(|_| Ok(vec![0.0]), 4, 1, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn concatenation_ratio_is_one() {
        let probes = ProbeSpec::new(RngStream::new(4, 0)).with_probes(10_000);
        let z = RngStream::new(5, 0).gaussian_vec(8);
        let r = RngStream::new(6, 0).gaussian_vec(8);
        let ratio = sensitivity_ratio(|z, r| [z, r].concat(), &z, &r, &probes).unwrap();
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn degenerate_generators() {
        let probes = ProbeSpec::new(RngStream::new(4, 0)).with_probes(10);
        let z = vec![0.1; 4];
        let r = vec![0.2; 3];
        assert_eq!(sensitivity_ratio(|_, r| r.to_vec(), &z, &r, &probes).unwrap(), f64::INFINITY);
        assert_eq!(sensitivity_ratio(|z, _| z.to_vec(), &z, &r, &probes).unwrap(), 0.0);
    }
}
