use serde::{Deserialize, Serialize};

use crate::assets::{Checkpoint, RngStream};
use crate::error::{validate, Error, Result};
use crate::geometry::Vec3;

use super::nn::{export_params, import_params, softplus, Activation, Dense, Mlp, Parametric};
use super::triplane::TriPlaneField;

/// Per-point output of the neural volume.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub feature: Vec<f64>,
    /// Non-negative, units of inverse length.
    pub density: f64,
}

/// Small dense network mapping a tri-plane feature to `(feature, density)`.
/// The first `feature_dim` outputs are the feature, the last one is a raw
/// density passed through softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet {
    pub mlp: Mlp,
    pub feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderMeta {
    kind: String,
    sizes: Vec<usize>,
    hidden: Activation,
    feature_dim: usize,
}

impl DecoderNet {
    pub fn new(mlp: Mlp, feature_dim: usize) -> Result<Self> {
        validate(mlp.out_dim() == feature_dim + 1, || {
            format!(
                "decoder outputs {} values, needs feature_dim + 1 = {}",
                mlp.out_dim(),
                feature_dim + 1
            )
        })?;
        Ok(Self { mlp, feature_dim })
    }

    pub fn random(in_dim: usize, hidden: &[usize], feature_dim: usize, act: Activation, rng: &mut RngStream) -> Self {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(feature_dim + 1);
        Self {
            mlp: Mlp::random(&sizes, act, rng),
            feature_dim,
        }
    }

    /// Decoder whose output ignores its input: constant feature and raw density.
    pub fn constant(in_dim: usize, feature: &[f64], raw_density: f64) -> Self {
        let mut layer = Dense::zeros(in_dim, feature.len() + 1);
        layer.bias[..feature.len()].copy_from_slice(feature);
        layer.bias[feature.len()] = raw_density;
        Self {
            mlp: Mlp::new(vec![layer], Activation::Relu).expect("single layer"),
            feature_dim: feature.len(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn decode(&self, fprime: &[f64]) -> Result<FieldSample> {
        let out = self.mlp.forward(fprime)?;
        Ok(self.split(&out))
    }

    #[inline]
    pub(crate) fn split(&self, out: &[f64]) -> FieldSample {
        FieldSample {
            feature: out[..self.feature_dim].to_vec(),
            density: softplus(out[self.feature_dim]),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = DecoderMeta {
            kind: "decoder".into(),
            sizes: self.mlp.sizes(),
            hidden: self.mlp.hidden,
            feature_dim: self.feature_dim,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?);
        export_params(&self.mlp, "mlp", &mut ck)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: DecoderMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Format(format!("decoder manifest: {e}")))?;
        let layers = meta.sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let mut mlp = Mlp::new(layers, meta.hidden)?;
        import_params(&mut mlp, "mlp", ck)?;
        Self::new(mlp, meta.feature_dim)
    }
}

impl Parametric for DecoderNet {
    fn num_params(&self) -> usize {
        self.mlp.num_params()
    }
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.mlp.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.mlp.visit_mut(f)
    }
}

/// A tri-plane paired with its decoder: the queryable neural volume.
#[derive(Clone, Copy, Debug)]
pub struct NeuralField<'a> {
    pub triplane: &'a TriPlaneField,
    pub decoder: &'a DecoderNet,
}

impl<'a> NeuralField<'a> {
    pub fn new(triplane: &'a TriPlaneField, decoder: &'a DecoderNet) -> Result<Self> {
        validate(triplane.channels == decoder.in_dim(), || {
            format!(
                "tri-plane has {} channels, decoder expects {}",
                triplane.channels,
                decoder.in_dim()
            )
        })?;
        Ok(Self { triplane, decoder })
    }

    pub fn query(&self, x: Vec3) -> FieldSample {
        let f = self.triplane.sample(x);
        let out = self.decoder.mlp.forward_unchecked(&f, 1);
        self.decoder.split(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_ln2_density() {
        let net = DecoderNet::new(
            Mlp::new(vec![Dense::zeros(4, 8), Dense::zeros(8, 4)], Activation::Relu).unwrap(),
            3,
        )
        .unwrap();
        let s = net.decode(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(s.feature, vec![0.0; 3]);
        assert!((s.density - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_layer_splits_input() {
        let net = DecoderNet::new(Mlp::new(vec![Dense::identity(4)], Activation::Relu).unwrap(), 3).unwrap();
        let s = net.decode(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(s.feature, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.density, softplus(0.5));
    }

    #[test]
    fn random_net_matches_oracle() {
        let mut rng = RngStream::new(9, 0);
        let net = DecoderNet::random(8, &[16, 16], 3, Activation::Softplus, &mut rng);
        let x = rng.gaussian_vec(8);
        let s = net.decode(&x).unwrap();
        let mut h = x.clone();
        for (i, l) in net.mlp.layers.iter().enumerate() {
            let mut z = l.bias.clone();
            for o in 0..l.out_dim {
                for k in 0..l.in_dim {
                    z[o] += l.weight[o * l.in_dim + k] * h[k];
                }
            }
            if i + 1 < net.mlp.layers.len() {
                z = z.iter().map(|&v| (1.0 + v.exp()).ln()).collect();
            }
            h = z;
        }
        for c in 0..3 {
            assert!((s.feature[c] - h[c]).abs() < 1e-6);
        }
        assert!((s.density - (1.0 + h[3].exp()).ln()).abs() < 1e-6);
    }

    #[test]
    fn density_non_negative() {
        let mut rng = RngStream::new(10, 0);
        let net = DecoderNet::random(4, &[8], 2, Activation::Relu, &mut rng);
        for _ in 0..200 {
            let x: Vec<f64> = rng.gaussian_vec(4).iter().map(|v| v * 50.0).collect();
            assert!(net.decode(&x).unwrap().density >= 0.0);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = RngStream::new(11, 0);
        let net = DecoderNet::random(4, &[8], 2, Activation::Relu, &mut rng);
        assert!(matches!(net.decode(&[1.0]), Err(Error::Validation(_))));
        assert!(DecoderNet::new(Mlp::new(vec![Dense::zeros(4, 4)], Activation::Relu).unwrap(), 2).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngStream::new(12, 0);
        let net = DecoderNet::random(4, &[8], 2, Activation::Softplus, &mut rng);
        let back = DecoderNet::from_checkpoint(&net.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.feature_dim, 2);
        assert_eq!(back.mlp.sizes(), net.mlp.sizes());
    }
}
