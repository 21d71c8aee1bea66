use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Var};
use crate::{Scalar, Tensor};

/// Weight and bias of one decoder stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DeconvParams<P> {
    pub weight: P,
    pub bias: P,
}

/// The network's trainable tensors, generic over what is stored per slot:
/// tensors for a model, [`Var`]s for one recorded pass, shapes for a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<P> {
    /// `front_channels × front_width × 1`
    pub front: P,
    /// `primary_features × primary_width × front_channels`
    pub cell_a_conv: P,
    /// `(cell_a_channels·cell_a_dim) × vote_width × primary_dim`
    pub cell_a_votes: P,
    /// `reduced_features × 1 × front_channels`
    pub cell_b_reduce: P,
    /// `reduced_features × cell_b_width × reduced_features`
    pub cell_b_conv: P,
    /// `(cell_b_channels·cell_b_dim) × vote_width × reduced_features`
    pub cell_b_votes: P,
    pub alpha: P,
    pub beta: P,
    /// `num_classes × concat_rows × class_dim × capsule_dim`
    pub class_weights: P,
    pub fc1_weight: P,
    pub fc1_bias: P,
    pub fc2_weight: P,
    pub fc2_bias: P,
    pub deconv: Vec<DeconvParams<P>>,
}

pub type ModelParams<T> = ParamSet<Tensor<T>>;

impl<P> ParamSet<P> {
    /// Applies `f` to every slot in canonical order.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ParamSet<Q> {
        ParamSet {
            front: f("front", &self.front),
            cell_a_conv: f("cell_a.conv", &self.cell_a_conv),
            cell_a_votes: f("cell_a.votes", &self.cell_a_votes),
            cell_b_reduce: f("cell_b.reduce", &self.cell_b_reduce),
            cell_b_conv: f("cell_b.conv", &self.cell_b_conv),
            cell_b_votes: f("cell_b.votes", &self.cell_b_votes),
            alpha: f("concat.alpha", &self.alpha),
            beta: f("concat.beta", &self.beta),
            class_weights: f("class.weights", &self.class_weights),
            fc1_weight: f("decoder.fc1.weight", &self.fc1_weight),
            fc1_bias: f("decoder.fc1.bias", &self.fc1_bias),
            fc2_weight: f("decoder.fc2.weight", &self.fc2_weight),
            fc2_bias: f("decoder.fc2.bias", &self.fc2_bias),
            deconv: self
                .deconv
                .iter()
                .enumerate()
                .map(|(i, d)| DeconvParams {
                    weight: f(&format!("decoder.deconv{i}.weight"), &d.weight),
                    bias: f(&format!("decoder.deconv{i}.bias"), &d.bias),
                })
                .collect(),
        }
    }

    /// Slots in canonical order with their names.
    pub fn entries(&self) -> Vec<(String, &P)> {
        let names = self.map(|name, _| name.to_string()).into_flat();
        names.into_iter().zip(self.flat_refs()).collect()
    }

    pub fn flat_refs(&self) -> Vec<&P> {
        let mut v = vec![
            &self.front,
            &self.cell_a_conv,
            &self.cell_a_votes,
            &self.cell_b_reduce,
            &self.cell_b_conv,
            &self.cell_b_votes,
            &self.alpha,
            &self.beta,
            &self.class_weights,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ];
        for d in &self.deconv {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn flat_mut(&mut self) -> Vec<&mut P> {
        let mut v = vec![
            &mut self.front,
            &mut self.cell_a_conv,
            &mut self.cell_a_votes,
            &mut self.cell_b_reduce,
            &mut self.cell_b_conv,
            &mut self.cell_b_votes,
            &mut self.alpha,
            &mut self.beta,
            &mut self.class_weights,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ];
        for d in &mut self.deconv {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    pub fn into_flat(self) -> Vec<P> {
        let mut v = vec![
            self.front,
            self.cell_a_conv,
            self.cell_a_votes,
            self.cell_b_reduce,
            self.cell_b_conv,
            self.cell_b_votes,
            self.alpha,
            self.beta,
            self.class_weights,
            self.fc1_weight,
            self.fc1_bias,
            self.fc2_weight,
            self.fc2_bias,
        ];
        for d in self.deconv {
            v.push(d.weight);
            v.push(d.bias);
        }
        v
    }

    /// Rebuilds a set from slots in canonical order, using `self` only
    /// for its layout.
    pub fn with_flat<Q>(&self, slots: Vec<Q>) -> Result<ParamSet<Q>> {
        let expected = self.flat_refs().len();
        if slots.len() != expected {
            return Err(shape_err!("expected {expected} parameter tensors, got {}", slots.len()));
        }
        let mut it = slots.into_iter();
        Ok(self.map(|_, _| it.next().expect("length checked")))
    }
}

/// Parameter shapes, a pure function of the configuration.
pub fn param_layout(cfg: &ModelConfig) -> ParamSet<Vec<usize>> {
    let k = cfg.front_channels;
    let rf = cfg.reduced_features();
    let mut c_in = cfg.decoder_base_channels();
    let deconv = cfg
        .decoder_deconv
        .iter()
        .map(|d| {
            let weight = vec![d.channels, d.width, c_in];
            c_in = d.channels;
            DeconvParams { weight, bias: vec![d.channels] }
        })
        .collect();
    ParamSet {
        front: vec![k, cfg.front_width, 1],
        cell_a_conv: vec![cfg.primary_features(), cfg.primary_width, k],
        cell_a_votes: vec![cfg.cell_a_channels * cfg.cell_a_dim, cfg.vote_width, cfg.primary_dim],
        cell_b_reduce: vec![rf, 1, k],
        cell_b_conv: vec![rf, cfg.cell_b_width, rf],
        cell_b_votes: vec![cfg.cell_b_channels * cfg.cell_b_dim, cfg.vote_width, rf],
        alpha: vec![1],
        beta: vec![1],
        class_weights: vec![cfg.num_classes, cfg.concat_rows(), cfg.class_dim, cfg.capsule_dim()],
        fc1_weight: vec![cfg.decoder_fc[0], cfg.num_classes * cfg.class_dim],
        fc1_bias: vec![cfg.decoder_fc[0]],
        fc2_weight: vec![cfg.decoder_fc[1], cfg.decoder_fc[0]],
        fc2_bias: vec![cfg.decoder_fc[1]],
        deconv,
    }
}

/// Fan-in and fan-out used for Glorot initialisation of a weight slot.
fn fans(name: &str, shape: &[usize]) -> (usize, usize) {
    match (name, shape) {
        ("class.weights", [_, _, out, inp]) => (*inp, *out),
        (_, [out, inp]) => (*inp, *out),
        // conv1d / deconv kernels: Cout × g × Cin
        (_, [out, g, inp]) if !name.ends_with(".votes") => (g * inp, g * out),
        // conv2d vote kernels: Cout × gh × gw over one input channel
        (_, [out, gh, gw]) => (gh * gw, gh * gw * out),
        _ => (1, 1),
    }
}

impl<T: Scalar> ParamSet<Tensor<T>> {
    /// Glorot-uniform weights, zero biases and unit concatenation weights,
    /// drawn from a seeded stream in canonical slot order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(param_layout(cfg).map(|name, shape| {
            if name.starts_with("concat.") {
                Tensor::filled(shape.clone(), T::one())
            } else if name.ends_with(".bias") {
                Tensor::zeros(shape.clone())
            } else {
                let (fan_in, fan_out) = fans(name, shape);
                Tensor::glorot_uniform(shape.clone(), fan_in, fan_out, &mut rng)
            }
        }))
    }

    /// Total trainable scalars, the two concatenation weights included.
    pub fn count(&self) -> usize {
        self.flat_refs().iter().map(|t| t.numel()).sum()
    }

    /// Checks every slot against the layout of `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg);
        if layout.deconv.len() != self.deconv.len() {
            return Err(shape_err!("expected {} decoder stages, got {}", layout.deconv.len(), self.deconv.len()));
        }
        for ((name, expect), t) in layout.entries().into_iter().zip(self.flat_refs()) {
            if t.shape() != expect.as_slice() {
                return Err(shape_err!("parameter `{name}` has shape {:?}, expected {expect:?}", t.shape()));
            }
        }
        Ok(())
    }

    pub fn shared(&self) -> ParamSet<Arc<Tensor<T>>> {
        self.map(|_, t| Arc::new(t.clone()))
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn register(&self, g: &mut Graph<T>, requires_grad: bool) -> ParamSet<Var> {
        self.map(|_, t| g.shared(Arc::new(t.clone()), requires_grad))
    }
}

impl<T: Scalar> ParamSet<Arc<Tensor<T>>> {
    pub fn register(&self, g: &mut Graph<T>, requires_grad: bool) -> ParamSet<Var> {
        self.map(|_, t| g.shared(Arc::clone(t), requires_grad))
    }
}

/// Total trainable scalars of `params`.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> usize {
    params.count()
}
