use super::{ModelConfig, ModelParams, ParamSet};
use crate::capsule::dynamic_routing;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Graph, Padding, Var};
use crate::{Scalar, Tensor};

/// Which class capsule survives masking before the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    /// A given class, typically the label during training.
    Class(usize),
    /// The class with the longest capsule.
    Predicted,
}

/// Nodes produced by one capsule cell.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    /// Squashed primary capsules.
    pub primary: Var,
    /// Votes laid out for routing, `P × R × S × D`.
    pub votes: Var,
    /// Routed capsules flattened to `rows × D`.
    pub capsules: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassVars {
    pub votes: Var,
    pub capsules: Var,
    pub lengths: Var,
}

/// Every node of interest in one recorded pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub phi: Var,
    pub cell_a: CellVars,
    pub cell_b: CellVars,
    pub concat: Var,
    pub class: ClassVars,
    pub mask_class: usize,
    pub reconstruction: Var,
}

/// Forward pass result detached from its graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub class_capsules: Tensor<T>,
    pub class_lengths: Tensor<T>,
    pub reconstruction: Tensor<T>,
    pub primary_a: Tensor<T>,
    pub primary_b: Tensor<T>,
    pub omega_a: Tensor<T>,
    pub omega_b: Tensor<T>,
    pub omega_cc: Tensor<T>,
    pub predicted_class: usize,
    pub mask_class: usize,
}

/// Index of the longest class capsule; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    values.iter().enumerate().fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0
}

/// Shared same-padded convolution of the raw signal: `L → L × front_channels`.
pub fn front_conv<T: Scalar>(g: &mut Graph<T>, x: Var, p: &ParamSet<Var>, cfg: &ModelConfig) -> Result<Var> {
    let n = g.value(x).numel();
    if n != cfg.signal_len {
        return Err(shape_err!("signal has {n} samples, model expects {}", cfg.signal_len));
    }
    let col = g.reshape(x, &[cfg.signal_len, 1])?;
    g.conv1d(col, p.front, 1, Padding::Same)
}

/// Cell A: per-step primary capsules whose votes are predicted by a
/// channel-strided 2D convolution and routed over the primary channels.
pub fn cell_a_forward<T: Scalar>(g: &mut Graph<T>, phi: Var, p: &ParamSet<Var>, cfg: &ModelConfig) -> Result<CellVars> {
    let l = cfg.signal_len;
    let (cp, ap) = (cfg.primary_channels, cfg.primary_dim);
    let (cs, asa) = (cfg.cell_a_channels, cfg.cell_a_dim);

    let conv = g.conv1d(phi, p.cell_a_conv, 1, Padding::Same)?;
    let conv = cfg.cell_a_activation.apply(g, conv);
    let caps = g.reshape(conv, &[l, cp, ap])?;
    let primary = g.squash(caps, 2)?;
    let plane = g.reshape(primary, &[l, cp * ap, 1])?;
    // sweep width (cp·ap − ap)/ap + 1 = cp
    let votes = g.conv2d(plane, p.cell_a_votes, 1, ap)?;
    let votes = g.reshape(votes, &[l, cp, cs, asa])?;
    let votes = g.permute(votes, &[0, 2, 1, 3])?;
    let routed = dynamic_routing(g, votes, cfg.routing_iters)?;
    let capsules = g.flatten_leading(routed, 1)?;
    Ok(CellVars { primary, votes, capsules })
}

/// Cell B: segment capsules whose votes for the positions within a segment
/// are routed into per-segment capsules.
pub fn cell_b_forward<T: Scalar>(g: &mut Graph<T>, phi: Var, p: &ParamSet<Var>, cfg: &ModelConfig) -> Result<CellVars> {
    let (n, segs) = (cfg.segment_len, cfg.segments());
    let rf = cfg.reduced_features();
    let (cs, asb) = (cfg.cell_b_channels, cfg.cell_b_dim);

    let reduced = g.conv1d(phi, p.cell_b_reduce, 1, Padding::Same)?;
    let conv = g.conv1d(reduced, p.cell_b_conv, 1, Padding::Same)?;
    let conv = cfg.cell_b_activation.apply(g, conv);
    let segments = g.reshape(conv, &[segs, n, rf])?;
    let primary = g.squash(segments, 2)?;
    let plane = g.reshape(primary, &[segs, n * rf, 1])?;
    let votes = g.conv2d(plane, p.cell_b_votes, 1, rf)?;
    let votes = g.reshape(votes, &[segs, n, cs, asb])?;
    let votes = g.permute(votes, &[0, 2, 1, 3])?;
    let routed = dynamic_routing(g, votes, cfg.routing_iters)?;
    let capsules = g.flatten_leading(routed, 1)?;
    Ok(CellVars { primary, votes, capsules })
}

/// Stacks `α·Ω_A` on top of `β·Ω_B`.
pub fn concat_weighted<T: Scalar>(g: &mut Graph<T>, omega_a: Var, omega_b: Var, alpha: Var, beta: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(omega_a), g.shape(omega_b));
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(shape_err!("cannot concatenate capsules {sa:?} and {sb:?}"));
    }
    let a = g.scale_by(omega_a, alpha)?;
    let b = g.scale_by(omega_b, beta)?;
    g.concat_rows(a, b)
}

/// Class capsules: every input capsule votes for every class through its
/// own transform, and the votes are routed over the input capsules.
pub fn classification_forward<T: Scalar>(
    g: &mut Graph<T>,
    omega_cc: Var,
    p: &ParamSet<Var>,
    cfg: &ModelConfig,
) -> Result<ClassVars> {
    let expect = [cfg.concat_rows(), cfg.capsule_dim()];
    if g.shape(omega_cc) != expect {
        return Err(shape_err!("class layer expects {expect:?}, got {:?}", g.shape(omega_cc)));
    }
    let (j, n, d) = (cfg.num_classes, cfg.concat_rows(), cfg.class_dim);
    let votes = g.capsule_transform(omega_cc, p.class_weights)?;
    let votes = g.reshape(votes, &[1, j, n, d])?;
    let routed = dynamic_routing(g, votes, cfg.routing_iters)?;
    let capsules = g.reshape(routed, &[j, d])?;
    let lengths = g.norm(capsules, 1)?;
    Ok(ClassVars { votes, capsules, lengths })
}

/// Reconstructs the signal from the class capsules with every row but
/// `mask_class` zeroed.
pub fn decoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    class_capsules: Var,
    mask_class: usize,
    p: &ParamSet<Var>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (j, d) = (cfg.num_classes, cfg.class_dim);
    if mask_class >= j {
        return Err(arg_err!("mask class {mask_class} out of range for {j} classes"));
    }
    let mut mask = Tensor::zeros([j, d]);
    mask.data_mut()[mask_class * d..(mask_class + 1) * d].iter_mut().for_each(|m| *m = T::one());
    let mask = g.constant(mask);
    let masked = g.mul(class_capsules, mask)?;
    let flat = g.reshape(masked, &[j * d])?;
    let h = g.linear(flat, p.fc1_weight, p.fc1_bias)?;
    let h = g.relu(h);
    let h = g.linear(h, p.fc2_weight, p.fc2_bias)?;
    let h = g.relu(h);
    let mut x = g.reshape(h, &[cfg.decoder_base_len, cfg.decoder_base_channels()])?;
    let last = p.deconv.len() - 1;
    for (i, (stage, spec)) in p.deconv.iter().zip(&cfg.decoder_deconv).enumerate() {
        x = g.deconv1d(x, stage.weight, spec.stride)?;
        x = g.add_bias(x, stage.bias)?;
        if i < last {
            x = g.relu(x);
        }
    }
    g.reshape(x, &[cfg.signal_len])
}

/// Full network recorded on `g`.
pub fn model_forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &ParamSet<Var>,
    cfg: &ModelConfig,
    mask: Mask,
) -> Result<ForwardVars> {
    let phi = front_conv(g, x, p, cfg)?;
    let cell_a = cell_a_forward(g, phi, p, cfg)?;
    let cell_b = cell_b_forward(g, phi, p, cfg)?;
    let concat = concat_weighted(g, cell_a.capsules, cell_b.capsules, p.alpha, p.beta)?;
    let class = classification_forward(g, concat, p, cfg)?;
    let mask_class = match mask {
        Mask::Class(c) => c,
        Mask::Predicted => argmax(g.value(class.lengths).data()),
    };
    let reconstruction = decoder_forward(g, class.capsules, mask_class, p, cfg)?;
    Ok(ForwardVars { phi, cell_a, cell_b, concat, class, mask_class, reconstruction })
}

/// Inference-only forward pass on a signal of `signal_len` samples.
pub fn model_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    mask: Mask,
) -> Result<ForwardOutput<T>> {
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let fv = model_forward_graph(&mut g, xv, &p, cfg, mask)?;
    Ok(ForwardOutput::collect(&g, &fv))
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn collect(g: &Graph<T>, fv: &ForwardVars) -> Self {
        let lengths = g.value(fv.class.lengths).clone();
        Self {
            class_capsules: g.value(fv.class.capsules).clone(),
            predicted_class: argmax(lengths.data()),
            class_lengths: lengths,
            reconstruction: g.value(fv.reconstruction).clone(),
            primary_a: g.value(fv.cell_a.primary).clone(),
            primary_b: g.value(fv.cell_b.primary).clone(),
            omega_a: g.value(fv.cell_a.capsules).clone(),
            omega_b: g.value(fv.cell_b.capsules).clone(),
            omega_cc: g.value(fv.concat).clone(),
            mask_class: fv.mask_class,
        }
    }
}
