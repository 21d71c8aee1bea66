//! Finite-difference verification of every differentiable component, from
//! single operations up to the full network with its combined loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capsule::dynamic_routing;
use crate::error::{arg_err, Result};
use crate::model::{
    cell_a_forward, cell_b_forward, classification_forward, decoder_forward, front_conv, ModelConfig, ModelParams,
    ParamSet,
};
use crate::tensor::{analytic_gradients, compare_gradients, Graph, Padding, ReduceOp, Var};
use crate::train::{loss_graph, TrainConfig};
use crate::Tensor;

/// Default finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest relative error accepted by [`SuiteReport::passed`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub components: Vec<ComponentCheck>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&ComponentCheck> {
        self.components.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.components.iter().all(|c| c.max_rel_error < tolerance)
    }
}

type Loss = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: Loss,
}

/// Reduces any node to a scalar through a fixed random projection, so that
/// every output coordinate contributes a distinct weight.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let w = Tensor::uniform(g.shape(v).to_vec(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37));
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn rand(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

fn model_inputs(params: &ModelParams<f64>) -> Vec<Tensor<f64>> {
    params.flat_refs().into_iter().cloned().collect()
}

fn as_params(layout: &ModelParams<f64>, vars: &[Var]) -> Result<ParamSet<Var>> {
    layout.with_flat(vars.to_vec())
}

fn cases(cfg: &ModelConfig, seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name, inputs, f: Loss| out.push(Case { name, inputs, f });

    push(
        "conv1d",
        vec![rand(&[9, 3], &mut rng), rand(&[4, 3, 3], &mut rng)],
        Box::new(move |g, v| {
            let same = g.conv1d(v[0], v[1], 2, Padding::Same)?;
            let valid = g.conv1d(v[0], v[1], 1, Padding::Valid)?;
            let a = project(g, same, seed)?;
            let b = project(g, valid, seed + 1)?;
            g.add(a, b)
        }),
    );
    push(
        "conv2d",
        vec![rand(&[5, 12, 1], &mut rng), rand(&[3, 3, 4], &mut rng)],
        Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], 1, 4)?;
            project(g, y, seed)
        }),
    );
    push(
        "deconv1d",
        vec![rand(&[4, 3], &mut rng), rand(&[2, 3, 3], &mut rng)],
        Box::new(move |g, v| {
            let y = g.deconv1d(v[0], v[1], 2)?;
            project(g, y, seed)
        }),
    );
    push(
        "elementwise",
        vec![rand(&[3, 4], &mut rng), rand(&[3, 4], &mut rng), rand(&[1], &mut rng)],
        Box::new(move |g, v| {
            let s = g.sigmoid(v[0]);
            let m = g.mul(s, v[1])?;
            let d = g.sub(m, v[0])?;
            let r = g.relu(d);
            let c = g.scale(r, 1.5);
            let sc = g.scale_by(c, v[2])?;
            let y = g.add(sc, v[1])?;
            project(g, y, seed)
        }),
    );
    push(
        "softmax",
        vec![rand(&[2, 3, 4], &mut rng)],
        Box::new(move |g, v| {
            let a = g.softmax(v[0], &[2])?;
            let b = g.softmax(v[0], &[0, 1])?;
            let a = project(g, a, seed)?;
            let b = project(g, b, seed + 1)?;
            g.add(a, b)
        }),
    );
    push(
        "reduce",
        vec![rand(&[3, 4, 2], &mut rng)],
        Box::new(move |g, v| {
            let s = g.reduce(ReduceOp::Sum, v[0], &[1], false)?;
            let m = g.reduce(ReduceOp::Max, v[0], &[0, 2], true)?;
            let a = project(g, s, seed)?;
            let b = project(g, m, seed + 1)?;
            g.add(a, b)
        }),
    );
    push(
        "squash",
        vec![rand(&[4, 5], &mut rng).map(|x| 3.0 * x)],
        Box::new(move |g, v| {
            let y = g.squash(v[0], 1)?;
            let n = g.norm(y, 0)?;
            let a = project(g, y, seed)?;
            let b = project(g, n, seed + 1)?;
            g.add(a, b)
        }),
    );
    push(
        "routing",
        vec![rand(&[2, 3, 4, 5], &mut rng).map(|x| 2.0 * x)],
        Box::new(move |g, v| {
            let y = dynamic_routing(g, v[0], 3)?;
            project(g, y, seed)
        }),
    );
    push(
        "capsule_transform",
        vec![rand(&[5, 3], &mut rng), rand(&[2, 5, 4, 3], &mut rng)],
        Box::new(move |g, v| {
            let y = g.capsule_transform(v[0], v[1])?;
            project(g, y, seed)
        }),
    );
    push(
        "linear",
        vec![rand(&[5], &mut rng), rand(&[3, 5], &mut rng), rand(&[3], &mut rng), rand(&[4, 3], &mut rng)],
        Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            let x = g.reshape(v[0], &[1, 5])?;
            let x = g.concat_rows(x, x)?;
            let x = g.permute(x, &[1, 0])?;
            let x = g.reshape(x, &[2, 5])?;
            let z = g.add_bias(v[3], v[2])?;
            let a = project(g, y, seed)?;
            let b = project(g, x, seed + 1)?;
            let c = project(g, z, seed + 2)?;
            let ab = g.add(a, b)?;
            g.add(ab, c)
        }),
    );
    push(
        "margin_loss",
        vec![Tensor::uniform([4], 0.0, 1.0, &mut rng)],
        Box::new(|g, v| g.margin_loss(v[0], 2, 0.9, 0.1, 0.5)),
    );
    push("mse", vec![rand(&[6], &mut rng), rand(&[6], &mut rng)], Box::new(|g, v| g.mse(v[0], v[1])));

    // Freshly initialised biases are zero, which can leave ReLU inputs
    // exactly on the kink where central differences are meaningless.
    let mut params = ModelParams::<f64>::init(cfg, seed)?;
    for b in
        [&mut params.fc1_bias, &mut params.fc2_bias].into_iter().chain(params.deconv.iter_mut().map(|d| &mut d.bias))
    {
        *b = Tensor::uniform(b.shape().to_vec(), -0.1, 0.1, &mut rng);
    }
    let signal = Tensor::uniform([cfg.signal_len], -1.0, 1.0, &mut rng);
    let phi_shape = [cfg.signal_len, cfg.front_channels];
    let cc_shape = [cfg.concat_rows(), cfg.capsule_dim()];
    let caps_shape = [cfg.num_classes, cfg.class_dim];

    let c = cfg.clone();
    let p = params.clone();
    push(
        "cell_a",
        std::iter::once(rand(&phi_shape, &mut rng)).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            let out = cell_a_forward(g, v[0], &ps, &c)?;
            project(g, out.capsules, seed)
        }),
    );
    let c = cfg.clone();
    let p = params.clone();
    push(
        "cell_b",
        std::iter::once(rand(&phi_shape, &mut rng)).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            let out = cell_b_forward(g, v[0], &ps, &c)?;
            project(g, out.capsules, seed)
        }),
    );
    let c = cfg.clone();
    let p = params.clone();
    push(
        "classification",
        std::iter::once(rand(&cc_shape, &mut rng).map(|x| 0.3 * x)).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            let out = classification_forward(g, v[0], &ps, &c)?;
            let a = project(g, out.capsules, seed)?;
            let b = project(g, out.lengths, seed + 1)?;
            g.add(a, b)
        }),
    );
    let c = cfg.clone();
    let p = params.clone();
    push(
        "decoder",
        std::iter::once(rand(&caps_shape, &mut rng).map(|x| 0.3 * x)).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            let y = decoder_forward(g, v[0], 1 % c.num_classes, &ps, &c)?;
            project(g, y, seed)
        }),
    );
    let c = cfg.clone();
    let p = params.clone();
    push(
        "front_conv",
        std::iter::once(signal.clone()).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            let y = front_conv(g, v[0], &ps, &c)?;
            project(g, y, seed)
        }),
    );
    let c = cfg.clone();
    let p = params.clone();
    let tc = TrainConfig::default();
    let label = (seed as usize) % cfg.num_classes;
    push(
        "full_model",
        std::iter::once(signal).chain(model_inputs(&params)).collect(),
        Box::new(move |g, v| {
            let ps = as_params(&p, &v[1..])?;
            // the input also feeds the reconstruction target
            Ok(loss_graph(g, v[0], label, &ps, &c, &tc)?.0)
        }),
    );
    Ok(out)
}

/// Names of the components checked by [`gradcheck_suite`], in order.
pub fn component_names() -> Vec<&'static str> {
    cases(&ModelConfig::tiny(), 0).expect("tiny config is valid").into_iter().map(|c| c.name).collect()
}

/// Checks every component at step `h`. When `corrupt` names a component,
/// its tape gradient is perturbed before comparison, which must make that
/// component fail.
pub fn gradcheck_suite(cfg: &ModelConfig, seed: u64, h: f64, corrupt: Option<&str>) -> Result<SuiteReport> {
    cfg.validate()?;
    let cases = cases(cfg, seed)?;
    if let Some(name) = corrupt {
        if !cases.iter().any(|c| c.name == name) {
            return Err(arg_err!("unknown component `{name}`"));
        }
    }
    let mut components = Vec::with_capacity(cases.len());
    for case in cases {
        let mut analytic = analytic_gradients(&case.f, &case.inputs)?;
        if corrupt == Some(case.name) {
            let last = analytic.last_mut().expect("every case has inputs");
            last.data_mut()[0] += 0.5;
        }
        let report = compare_gradients(&case.f, &case.inputs, &analytic, h)?;
        log::debug!("{}: {:.3e} over {} coordinates", case.name, report.max_rel_error, report.coordinates);
        components.push(ComponentCheck {
            name: case.name,
            max_rel_error: report.max_rel_error,
            coordinates: report.coordinates,
        });
    }
    Ok(SuiteReport { components })
}
