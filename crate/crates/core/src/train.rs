//! Mini-batch training with Adam, evaluation and run reports.
//!
//! Per-sample gradients of a batch may be computed on a worker pool but are
//! always summed in sample order, so results do not depend on the number
//! of threads.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capsule::{margin_loss_var, LossParams};
use crate::data::{Dataset, LabeledSignal};
use crate::error::{config_err, Result};
use crate::model::{
    argmax, cell_a_forward, cell_b_forward, classification_forward, concat_weighted, front_conv, model_forward,
    model_forward_graph, Mask, ModelConfig, ModelParams, ParamSet,
};
use crate::optim::AdamState;
use crate::tensor::{Graph, Var};
use crate::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Down-weighting of the absent-class term of the margin loss.
    pub lambda_margin: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    /// Weight of the reconstruction MSE. The MSE is a per-element mean, so
    /// 0.392 matches 0.0005 on a squared-error sum over 784 inputs.
    pub recon_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplies the learning rate after every epoch when set.
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossParams::default();
        Self {
            epochs: 35,
            lr: 0.001,
            lambda_margin: loss.lambda,
            m_plus: loss.m_plus,
            m_minus: loss.m_minus,
            recon_weight: 0.392,
            batch_size: 16,
            seed: 0,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn loss_params(&self) -> LossParams {
        LossParams { m_plus: self.m_plus, m_minus: self.m_minus, lambda: self.lambda_margin }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(config_err!("reconstruction weight must be non-negative, got {}", self.recon_weight));
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(config_err!("learning-rate decay must lie in (0, 1], got {d}"));
            }
        }
        self.loss_params().validate()
    }
}

/// Means over one epoch's training steps plus accuracies measured after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub margin_loss: f64,
    pub recon_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Test-set confusion after the last epoch; `confusion[i][j]` counts
    /// examples of class `i` predicted as `j`.
    pub confusion: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// The report with the timing field cleared, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self { wall_time_secs: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Losses of one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub margin: f64,
    pub recon: f64,
    pub total: f64,
}

/// `margin + recon_weight · mse`.
pub fn total_loss(margin: f64, mse: f64, recon_weight: f64) -> f64 {
    margin + recon_weight * mse
}

/// Records the combined loss of one example on `g`, masking the decoder
/// with the true class. Returns the loss node and the margin and MSE nodes.
pub fn loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    label: usize,
    p: &ParamSet<Var>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(Var, Var, Var)> {
    let fv = model_forward_graph(g, x, p, cfg, Mask::Class(label))?;
    let margin = margin_loss_var(g, fv.class.lengths, label, &tc.loss_params())?;
    let mse = g.mse(fv.reconstruction, x)?;
    let weighted = g.scale(mse, T::of(tc.recon_weight));
    let total = g.add(margin, weighted)?;
    Ok((total, margin, mse))
}

fn signal_tensor<T: Scalar>(s: &LabeledSignal) -> Result<Tensor<T>> {
    Tensor::from_f64([s.samples.len()], &s.samples)
}

/// Loss and parameter gradients of one example, in canonical slot order.
pub fn sample_gradients<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    sample: &LabeledSignal,
) -> Result<(SampleLoss, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let p = params.register(&mut g, true);
    let x = g.constant(signal_tensor(sample)?);
    let (total, margin, mse) = loss_graph(&mut g, x, sample.label, &p, cfg, tc)?;
    let mut grads = g.backward(total)?;
    let loss = SampleLoss {
        margin: g.value(margin).item().as_f64(),
        recon: g.value(mse).item().as_f64(),
        total: g.value(total).item().as_f64(),
    };
    let grads =
        p.into_flat().into_iter().map(|v| grads.take(v).expect("every parameter requires a gradient")).collect();
    Ok((loss, grads))
}

/// Loss of one example without recording gradients.
pub fn sample_loss<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    sample: &LabeledSignal,
) -> Result<SampleLoss> {
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let x = g.constant(signal_tensor(sample)?);
    let (total, margin, mse) = loss_graph(&mut g, x, sample.label, &p, cfg, tc)?;
    Ok(SampleLoss {
        margin: g.value(margin).item().as_f64(),
        recon: g.value(mse).item().as_f64(),
        total: g.value(total).item().as_f64(),
    })
}

/// Class capsule lengths of one signal; the decoder is skipped.
pub fn class_lengths<T: Scalar>(x: &Tensor<T>, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let phi = front_conv(&mut g, xv, &p, cfg)?;
    let a = cell_a_forward(&mut g, phi, &p, cfg)?;
    let b = cell_b_forward(&mut g, phi, &p, cfg)?;
    let cc = concat_weighted(&mut g, a.capsules, b.capsules, p.alpha, p.beta)?;
    let class = classification_forward(&mut g, cc, &p, cfg)?;
    Ok(g.value(class.lengths).clone())
}

pub fn predict<T: Scalar>(x: &Tensor<T>, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<usize> {
    Ok(argmax(class_lengths(x, params, cfg)?.data()))
}

fn check_dataset(d: &Dataset, cfg: &ModelConfig) -> Result<()> {
    if d.signal_len != cfg.signal_len {
        return Err(config_err!("dataset signals have {} samples, model expects {}", d.signal_len, cfg.signal_len));
    }
    if d.num_classes > cfg.num_classes {
        return Err(config_err!("dataset has {} classes, model has {}", d.num_classes, cfg.num_classes));
    }
    Ok(())
}

/// Accuracy and confusion matrix of argmax predictions over `d`.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, d: &Dataset) -> Result<Evaluation> {
    check_dataset(d, cfg)?;
    if d.is_empty() {
        return Err(config_err!("cannot evaluate on an empty dataset"));
    }
    let predictions =
        d.signals.par_iter().map(|s| predict(&signal_tensor(s)?, params, cfg)).collect::<Result<Vec<usize>>>()?;
    let mut confusion = vec![vec![0; cfg.num_classes]; cfg.num_classes];
    let mut correct = 0;
    for (s, &p) in d.signals.iter().zip(&predictions) {
        confusion[s.label][p] += 1;
        correct += usize::from(s.label == p);
    }
    Ok(Evaluation { accuracy: correct as f64 / d.len() as f64, confusion, predictions })
}

/// Mean reconstruction MSE over `d` with predicted-class masking, next to
/// the MSE of predicting each signal's own mean.
pub fn reconstruction_error<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, d: &Dataset) -> Result<(f64, f64)> {
    check_dataset(d, cfg)?;
    if d.is_empty() {
        return Err(config_err!("cannot evaluate on an empty dataset"));
    }
    let per_signal = d
        .signals
        .par_iter()
        .map(|s| {
            let out = model_forward(&signal_tensor::<T>(s)?, params, cfg, Mask::Predicted)?;
            let n = s.samples.len() as f64;
            let mse =
                out.reconstruction.data().iter().zip(&s.samples).map(|(r, x)| (r.as_f64() - x).powi(2)).sum::<f64>()
                    / n;
            let mean = s.samples.iter().sum::<f64>() / n;
            let baseline = s.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            Ok((mse, baseline))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = per_signal.len() as f64;
    let (mse, base) = per_signal.iter().fold((0.0, 0.0), |(a, b), (m, s)| (a + m, b + s));
    Ok((mse / n, base / n))
}

/// Averages per-sample gradients in sample order.
fn mean_gradients<T: Scalar>(per_sample: Vec<Vec<Tensor<T>>>) -> Vec<Tensor<T>> {
    let n = T::of(per_sample.len() as f64);
    let mut it = per_sample.into_iter();
    let mut acc = it.next().expect("batch is nonempty");
    for grads in it {
        for (a, g) in acc.iter_mut().zip(grads) {
            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
        }
    }
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    acc
}

/// One Adam update from the mean gradient over `batch`. Returns the
/// per-example losses measured before the update.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    batch: &[&LabeledSignal],
) -> Result<Vec<SampleLoss>> {
    let results = {
        let shared: &ModelParams<T> = params;
        batch.par_iter().map(|s| sample_gradients(shared, cfg, tc, s)).collect::<Result<Vec<_>>>()?
    };
    let (losses, grads): (Vec<SampleLoss>, Vec<Vec<Tensor<T>>>) = results.into_iter().unzip();
    let mean = mean_gradients(grads);
    let grad_refs: Vec<&Tensor<T>> = mean.iter().collect();
    adam.step(&mut params.flat_mut(), &grad_refs)?;
    Ok(losses)
}

/// Trains `params` in place and reports per-epoch statistics. `on_epoch`
/// sees each epoch's statistics as soon as they are known.
pub fn train_with<T: Scalar>(
    params: &mut ModelParams<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    tc.validate()?;
    params.check_layout(cfg)?;
    check_dataset(train_set, cfg)?;
    check_dataset(test_set, cfg)?;
    if tc.epochs > 0 && (train_set.is_empty() || test_set.is_empty()) {
        return Err(config_err!("training needs nonempty train and test splits"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = AdamState::new(params.flat_refs(), tc.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut confusion = Vec::new();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&LabeledSignal> = chunk.iter().map(|&i| &train_set.signals[i]).collect();
            for l in train_step(params, &mut adam, cfg, tc, &batch)? {
                sums.0 += l.margin;
                sums.1 += l.recon;
                sums.2 += l.total;
            }
        }
        let n = train_set.len() as f64;
        let train_eval = evaluate(params, cfg, train_set)?;
        let test_eval = evaluate(params, cfg, test_set)?;
        let stats = EpochStats {
            epoch,
            margin_loss: sums.0 / n,
            recon_loss: sums.1 / n,
            total_loss: sums.2 / n,
            train_accuracy: train_eval.accuracy,
            test_accuracy: test_eval.accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (margin {:.5}, recon {:.5}) train acc {:.4} test acc {:.4}",
            stats.total_loss,
            stats.margin_loss,
            stats.recon_loss,
            stats.train_accuracy,
            stats.test_accuracy
        );
        on_epoch(&stats);
        epochs.push(stats);
        confusion = test_eval.confusion;
        if let Some(decay) = tc.lr_decay {
            adam.lr *= decay;
        }
    }

    Ok(TrainReport {
        epochs,
        confusion,
        class_names: test_set.class_names.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn train<T: Scalar>(
    params: &mut ModelParams<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainReport> {
    train_with(params, cfg, tc, train_set, test_set, |_| {})
}

/// Confusion matrix as CSV, one row per true class.
pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let mut out = String::new();
    for row in confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    out
}
