//! Capsule mathematics: squash, block dynamic routing by agreement,
//! capsule lengths and the margin / reconstruction losses.
//!
//! Votes are laid out `P × R × S × D`: `P` outer positions, `R` parent
//! capsules per position, `S` routed child blocks per parent and `D` the
//! capsule dimension. Routing normalises couplings over `S`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, shape_err, Result};
use crate::tensor::{ops, Graph, Var};
use crate::{Scalar, Tensor};

pub const DEFAULT_ROUTING_ITERS: usize = 3;

/// Margin-loss constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { m_plus: 0.9, m_minus: 0.1, lambda: 0.5 }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus <= 1.0) {
            return Err(config_err!("margins must satisfy 0 < m⁻ < m⁺ ≤ 1, got {self:?}"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(config_err!("down-weighting λ must lie in (0, 1], got {}", self.lambda));
        }
        Ok(())
    }
}

/// Squash every capsule vector along `axis`.
pub fn squash<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    ops::squash(t, axis)
}

/// Euclidean capsule lengths along `axis`.
pub fn capsule_length<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    ops::norm(t, axis)
}

fn check_votes(shape: &[usize], iterations: usize) -> Result<()> {
    if iterations < 1 {
        return Err(arg_err!("routing needs at least one iteration"));
    }
    if shape.len() != 4 {
        return Err(shape_err!("votes must be P×R×S×D, got {shape:?}"));
    }
    Ok(())
}

/// Routing recorded on a tape. Returns the squashed parent capsules
/// `P × R × D` together with the coupling node of every iteration.
pub fn dynamic_routing_traced<T: Scalar>(g: &mut Graph<T>, votes: Var, iterations: usize) -> Result<(Var, Vec<Var>)> {
    check_votes(g.shape(votes), iterations)?;
    let [p, r, s, _] = *g.shape(votes) else { unreachable!() };
    let mut logits = g.constant(Tensor::zeros([p, r, s]));
    let mut couplings = Vec::with_capacity(iterations);
    let mut parents = None;
    for it in 0..iterations {
        let k = g.softmax(logits, &[2])?;
        couplings.push(k);
        let weighted = g.routing_weighted_sum(k, votes)?;
        let squashed = g.squash(weighted, 2)?;
        if it + 1 < iterations {
            let agreement = g.routing_agreement(squashed, votes)?;
            logits = g.add(logits, agreement)?;
        }
        parents = Some(squashed);
    }
    Ok((parents.expect("at least one iteration"), couplings))
}

/// Routing recorded on a tape; gradients flow through every iteration.
pub fn dynamic_routing<T: Scalar>(g: &mut Graph<T>, votes: Var, iterations: usize) -> Result<Var> {
    dynamic_routing_traced(g, votes, iterations).map(|(out, _)| out)
}

/// Snapshot of a routing run.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState<T> {
    pub votes: Tensor<T>,
    /// Logits after the final update (the last iteration does not update).
    pub logits: Tensor<T>,
    /// Couplings used at each iteration.
    pub couplings: Vec<Tensor<T>>,
    /// Unsquashed weighted sums of the last iteration.
    pub weighted_sums: Tensor<T>,
    /// Squashed parent capsules.
    pub output: Tensor<T>,
    pub iterations: usize,
}

/// Routes `votes` outside any training graph and returns every
/// intermediate.
pub fn route<T: Scalar>(votes: &Tensor<T>, iterations: usize) -> Result<RoutingState<T>> {
    check_votes(votes.shape(), iterations)?;
    let [p, r, s, _] = *votes.shape() else { unreachable!() };
    let mut logits = Tensor::zeros([p, r, s]);
    let mut couplings = Vec::with_capacity(iterations);
    let mut weighted = None;
    let mut output = None;
    for it in 0..iterations {
        let k = ops::softmax(&logits, &[2])?;
        let sums = ops::routing_weighted_sum(&k, votes)?;
        let squashed = ops::squash(&sums, 2)?;
        if it + 1 < iterations {
            let agreement = ops::routing_agreement(&squashed, votes)?;
            let next = logits.data().iter().zip(agreement.data()).map(|(&b, &a)| b + a).collect();
            logits = Tensor::new(logits.shape().to_vec(), next)?;
        }
        couplings.push(k);
        weighted = Some(sums);
        output = Some(squashed);
    }
    Ok(RoutingState {
        votes: votes.clone(),
        logits,
        couplings,
        weighted_sums: weighted.expect("at least one iteration"),
        output: output.expect("at least one iteration"),
        iterations,
    })
}

/// Reference routing written as explicit scalar loops over
/// `(p, r, s, d)`. Shares no code with [`dynamic_routing`] and exists to
/// cross-check it.
#[allow(clippy::needless_range_loop)]
pub fn routing_oracle<T: Scalar>(votes: &Tensor<T>, iterations: usize) -> Result<Tensor<T>> {
    check_votes(votes.shape(), iterations)?;
    let [np, nr, ns, nd] = *votes.shape() else { unreachable!() };
    let v = |p: usize, r: usize, s: usize, d: usize| votes.data()[((p * nr + r) * ns + s) * nd + d];
    let mut b = vec![vec![vec![T::zero(); ns]; nr]; np];
    let mut out = vec![T::zero(); np * nr * nd];
    for it in 0..iterations {
        for p in 0..np {
            for r in 0..nr {
                // k_prs = exp(b_prs) / Σ_s' exp(b_prs')
                let m = b[p][r].iter().fold(T::neg_infinity(), |a, &x| a.max(x));
                let mut k = vec![T::zero(); ns];
                let mut z = T::zero();
                for s in 0..ns {
                    k[s] = (b[p][r][s] - m).exp();
                    z += k[s];
                }
                for ks in k.iter_mut() {
                    *ks /= z;
                }
                // S_pr = Σ_s k_prs V_prs
                let mut s_pr = vec![T::zero(); nd];
                for s in 0..ns {
                    for d in 0..nd {
                        s_pr[d] += k[s] * v(p, r, s, d);
                    }
                }
                // Ŝ_pr = ‖S‖² / (1 + ‖S‖²) · S / ‖S‖
                let mut sq = T::zero();
                for d in 0..nd {
                    sq += s_pr[d] * s_pr[d];
                }
                let norm = sq.sqrt();
                for d in 0..nd {
                    let hat = if norm == T::zero() { T::zero() } else { sq / (T::one() + sq) * s_pr[d] / norm };
                    s_pr[d] = hat;
                    out[(p * nr + r) * nd + d] = hat;
                }
                // b_prs ← b_prs + Ŝ_pr · V_prs
                if it + 1 < iterations {
                    for s in 0..ns {
                        let mut agree = T::zero();
                        for d in 0..nd {
                            agree += s_pr[d] * v(p, r, s, d);
                        }
                        b[p][r][s] += agree;
                    }
                }
            }
        }
    }
    Tensor::new(vec![np, nr, nd], out)
}

/// Margin loss over class capsule lengths.
pub fn margin_loss<T: Scalar>(lengths: &Tensor<T>, true_class: usize, p: &LossParams) -> Result<T> {
    let mut g = Graph::new();
    let l = g.constant(lengths.clone());
    let loss = margin_loss_var(&mut g, l, true_class, p)?;
    Ok(g.value(loss).item())
}

pub fn margin_loss_var<T: Scalar>(g: &mut Graph<T>, lengths: Var, true_class: usize, p: &LossParams) -> Result<Var> {
    g.margin_loss(lengths, true_class, T::of(p.m_plus), T::of(p.m_minus), T::of(p.lambda))
}

/// Mean squared reconstruction error.
pub fn mse_loss<T: Scalar>(reconstruction: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let a = g.constant(reconstruction.clone());
    let b = g.constant(target.clone());
    let m = g.mse(a, b)?;
    Ok(g.value(m).item())
}
