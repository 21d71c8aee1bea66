//! The two-cell temporal capsule network and its reconstruction decoder.

mod config;
mod forward;
mod params;

pub use config::{Activation, DeconvSpec, ModelConfig};
pub use forward::{
    argmax, cell_a_forward, cell_b_forward, classification_forward, concat_weighted, decoder_forward, front_conv,
    model_forward, model_forward_graph, CellVars, ClassVars, ForwardOutput, ForwardVars, Mask,
};
pub use params::{count_parameters, param_layout, DeconvParams, ModelParams, ParamSet};

use crate::error::Result;
use crate::{Scalar, Tensor};

/// A configuration together with matching parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, x: &Tensor<T>, mask: Mask) -> Result<ForwardOutput<T>> {
        model_forward(x, &self.params, &self.config, mask)
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn signal(len: usize, seed: u64) -> Tensor<f64> {
        Tensor::uniform([len], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn max_norm(t: &Tensor<f64>) -> f64 {
        let d = *t.shape().last().unwrap();
        t.data().chunks(d).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    #[test]
    fn toy_forward_shapes() {
        let cfg = ModelConfig { cell_a_channels: 2, ..ModelConfig::toy() };
        let model = Model::<f64>::new(cfg, 1).unwrap();
        let out = model.forward(&signal(64, 2), Mask::Predicted).unwrap();
        assert_eq!(out.primary_a.shape(), &[64, 4, 8]);
        assert_eq!(out.omega_a.shape(), &[128, 16]);
        assert_eq!(out.primary_b.shape(), &[8, 8, 16]);
        assert_eq!(out.omega_b.shape(), &[32, 16]);
        assert_eq!(out.omega_cc.shape(), &[160, 16]);
        assert_eq!(out.class_capsules.shape(), &[3, 16]);
        assert_eq!(out.class_lengths.shape(), &[3]);
        assert_eq!(out.reconstruction.shape(), &[64]);
        assert_eq!(out.mask_class, out.predicted_class);
    }

    #[test]
    fn capsule_norms_below_one() {
        let model = Model::<f64>::new(ModelConfig::toy(), 5).unwrap();
        let x = signal(64, 6).map(|v| 10.0 * v);
        let out = model.forward(&x, Mask::Class(0)).unwrap();
        for t in [&out.primary_a, &out.primary_b, &out.omega_a, &out.omega_b, &out.class_capsules] {
            assert!(max_norm(t) < 1.0);
        }
        assert!(out.class_lengths.data().iter().all(|&l| (0.0..1.0).contains(&l)));
    }

    #[test]
    fn front_conv_identity_kernel() {
        let cfg = ModelConfig { front_channels: 1, front_width: 1, ..ModelConfig::toy() };
        let mut params = ModelParams::<f64>::init(&cfg, 0).unwrap();
        params.front = Tensor::scalar(1.0).reshape([1, 1, 1]).unwrap();
        let mut g = Graph::new();
        let p = params.register(&mut g, false);
        let x = signal(64, 3);
        let xv = g.constant(x.clone());
        let phi = front_conv(&mut g, xv, &p, &cfg).unwrap();
        assert_eq!(g.shape(phi), &[64, 1]);
        assert_eq!(g.value(phi).data(), x.data());
        let short = g.constant(signal(63, 0));
        assert!(front_conv(&mut g, short, &p, &cfg).is_err());
    }

    #[test]
    fn concat_weights() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::uniform([4, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
        let b = g.constant(Tensor::uniform([2, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let one = g.constant(Tensor::scalar(1.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let cc = concat_weighted(&mut g, a, b, one, zero).unwrap();
        let v = g.value(cc).data();
        assert_eq!(&v[..12], g.value(a).data());
        assert!(v[12..].iter().all(|&x| x == 0.0));
        let plain = concat_weighted(&mut g, a, b, one, one).unwrap();
        let expect: Vec<f64> = g.value(a).data().iter().chain(g.value(b).data()).copied().collect();
        assert_eq!(g.value(plain).data(), expect.as_slice());
        let c = g.constant(Tensor::zeros([2, 4]));
        assert!(concat_weighted(&mut g, a, c, one, one).is_err());
    }

    #[test]
    fn zero_capsules_classify_to_zero() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        let p = params.register(&mut g, false);
        let zero = g.constant(Tensor::zeros([96, 16]));
        let class = classification_forward(&mut g, zero, &p, &cfg).unwrap();
        assert_eq!(g.shape(class.votes), &[1, 3, 96, 16]);
        assert!(g.value(class.capsules).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masking_selects_one_row() {
        let model = Model::<f64>::new(ModelConfig::toy(), 9).unwrap();
        let x = signal(64, 10);
        let r0 = model.forward(&x, Mask::Class(0)).unwrap().reconstruction;
        let r1 = model.forward(&x, Mask::Class(1)).unwrap().reconstruction;
        assert_ne!(r0, r1);
        assert!(model.forward(&x, Mask::Class(3)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::<f64>::new(ModelConfig::toy(), 4).unwrap();
        let x = signal(64, 4);
        let a = model.forward(&x, Mask::Predicted).unwrap();
        let b = model.forward(&x, Mask::Predicted).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f32_forward_runs() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 4).unwrap();
        let x = Tensor::<f32>::uniform([32], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let out = model.forward(&x, Mask::Predicted).unwrap();
        assert!(out.reconstruction.is_finite());
    }

    #[test]
    fn parameter_count_closed_form() {
        let cfg = ModelConfig::toy();
        let n = cfg.concat_rows();
        let fc_in = cfg.num_classes * cfg.class_dim;
        let expected = 16 * 9 // front
            + 32 * 9 * 16 // cell A conv
            + 16 * 5 * 8 // cell A votes
            + 16 * 16 // cell B 1×1
            + 16 * 3 * 16 // cell B conv
            + 64 * 5 * 16 // cell B votes
            + 2 // α, β
            + 3 * n * 16 * 16
            + (128 * fc_in + 128)
            + (256 * 128 + 256)
            + (32 * 2 * 64 + 32)
            + (16 * 2 * 32 + 16)
            + (8 * 2 * 16 + 8)
            + (8 * 2 * 8 + 8)
            + (8 + 1);
        let model = Model::<f64>::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.count_parameters(), expected);

        let more = ModelConfig { num_classes: 4, ..cfg };
        let bigger = Model::<f64>::new(more, 0).unwrap();
        assert_eq!(bigger.count_parameters() - expected, n * 16 * 16 + 128 * 16);
    }
}
