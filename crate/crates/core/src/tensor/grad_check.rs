//! Central-difference verification of tape gradients.

use super::{Graph, Tensor, Var};
use crate::error::{arg_err, Result};
use crate::Scalar;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over every coordinate.
    pub max_rel_error: f64,
    /// Input tensor and flat coordinate where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Tape gradients of a scalar function of several tensors.
pub fn analytic_gradients<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    Ok(vars.into_iter().map(|v| grads.take(v).expect("grad-enabled leaf")).collect())
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

/// Compares supplied gradients with `(f(x + h·e) − f(x − h·e)) / 2h` at
/// every coordinate of every input.
pub fn compare_gradients<T, F>(f: &F, inputs: &[Tensor<T>], analytic: &[Tensor<T>], h: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if h <= 0.0 || h.is_nan() {
        return Err(arg_err!("finite-difference step must be positive, got {h}"));
    }
    if analytic.len() != inputs.len() {
        return Err(arg_err!("{} gradients supplied for {} inputs", analytic.len(), inputs.len()));
    }
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..inputs[which].numel() {
            let x0 = inputs[which].data()[idx];
            work[which].data_mut()[idx] = x0 + T::of(h);
            let plus = evaluate(f, &work)?;
            work[which].data_mut()[idx] = x0 - T::of(h);
            let minus = evaluate(f, &work)?;
            work[which].data_mut()[idx] = x0;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[idx].as_f64();
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (which, idx);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Gradient check of a scalar function of several tensors.
pub fn grad_check_many<T, F>(f: F, inputs: &[Tensor<T>], h: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    compare_gradients(&f, inputs, &analytic, h)
}

/// Gradient check of a scalar function of one tensor; returns the maximum
/// relative error.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let report = grad_check_many(|g: &mut Graph<T>, v: &[Var]| f(g, v[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}
