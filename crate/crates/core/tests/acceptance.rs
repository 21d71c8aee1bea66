//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use timecaps::capsule::{dynamic_routing_traced, margin_loss, routing_oracle, squash, LossParams};
use timecaps::checkpoint::encode;
use timecaps::data::{
    filter_min_count, load_csv, normalize, save_csv, split, synth_waveforms, Dataset, LabeledSignal, NormalizeMode,
};
use timecaps::model::{model_forward_graph, Mask, ModelConfig, ModelParams};
use timecaps::train::{confusion_csv, evaluate, reconstruction_error, train, TrainConfig, TrainReport};
use timecaps::verify::{gradcheck_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use timecaps::{Graph, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_suite(&ModelConfig::tiny(), 0, GRADCHECK_STEP, None).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    for c in &report.components {
        println!("    {:<18} {:.3e} over {} coordinates", c.name, c.max_rel_error, c.coordinates);
    }
    let required = ["conv1d", "conv2d", "deconv1d", "squash", "routing", "classification", "decoder", "full_model"];
    let missing: Vec<&str> =
        required.iter().copied().filter(|r| !report.components.iter().any(|c| c.name == *r)).collect();
    let worst = report.worst().expect("suite is nonempty");
    check(
        missing.is_empty() && report.passed(GRADCHECK_TOLERANCE) && secs < 120.0,
        format!("worst {} at {:.3e}, {secs:.1}s, missing {missing:?}", worst.name, worst.max_rel_error),
    )
}

/// 100 routing instances with extents in 1..=4 and iterations from
/// {1, 2, 3, 5}, shared by criteria 2 and 3.
fn routing_instances() -> Vec<(Tensor<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|_| {
            let shape: Vec<usize> = (0..4).map(|_| rng.random_range(1..=4)).collect();
            let iters = [1, 2, 3, 5][rng.random_range(0..4)];
            (Tensor::uniform(shape, -2.0, 2.0, &mut rng), iters)
        })
        .collect()
}

fn routing_oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for (votes, iters) in routing_instances() {
        let mut g = Graph::new();
        let v = g.constant(votes.clone());
        let (out, _) = dynamic_routing_traced(&mut g, v, iters).map_err(|e| e.to_string())?;
        let oracle = routing_oracle(&votes, iters).map_err(|e| e.to_string())?;
        worst = worst.max(g.value(out).max_abs_diff(&oracle).map_err(|e| e.to_string())?);
    }
    check(worst <= 1e-10, format!("max elementwise difference {worst:.3e} over 100 instances"))
}

fn routing_normalization() -> Outcome {
    let (mut worst_sum, mut min_coupling, mut checked) = (0.0f64, f64::INFINITY, 0);
    for (votes, iters) in routing_instances() {
        let s = votes.shape()[2];
        let mut g = Graph::new();
        let v = g.constant(votes);
        let (_, couplings) = dynamic_routing_traced(&mut g, v, iters).map_err(|e| e.to_string())?;
        for k in couplings {
            for block in g.value(k).data().chunks(s) {
                worst_sum = worst_sum.max((block.iter().sum::<f64>() - 1.0).abs());
                min_coupling = block.iter().copied().fold(min_coupling, f64::min);
            }
            checked += 1;
        }
    }
    check(
        worst_sum <= 1e-9 && min_coupling >= 0.0,
        format!("{checked} iterations, max |Σk − 1| {worst_sum:.3e}, min k {min_coupling:.3e}"),
    )
}

fn squash_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut max_norm) = (0.0f64, 0.0f64);
    for i in 0..10_000 {
        let dim = [1, 2, 8, 16][i % 4];
        let target = rng.random_range(0.0..=100.0);
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let v: Vec<f64> = raw.iter().map(|x| if len > 0.0 { x / len * target } else { 0.0 }).collect();
        let n2: f64 = v.iter().map(|x| x * x).sum();
        let out = squash(&Tensor::vector(v), 0).map_err(|e| e.to_string())?;
        let norm = out.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((norm - n2 / (1.0 + n2)).abs());
        max_norm = max_norm.max(norm);
    }
    let example = squash(&Tensor::vector(vec![3.0f64, 4.0]), 0).map_err(|e| e.to_string())?;
    let expect = [25.0 / 26.0 * 0.6, 25.0 / 26.0 * 0.8];
    let ex_err = example.data().iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        worst <= 1e-9 && max_norm < 1.0 && ex_err <= 1e-12,
        format!("max norm error {worst:.3e}, largest norm {max_norm:.12}, (3,4) error {ex_err:.3e}"),
    )
}

fn margin_loss_values() -> Outcome {
    let p = LossParams { m_plus: 0.9, m_minus: 0.1, lambda: 0.5 };
    let cases: [(&[f64], usize, f64); 3] = [(&[0.95, 0.05, 0.02], 0, 0.0), (&[0.4], 0, 0.25), (&[0.9, 0.6], 0, 0.125)];
    let mut errs = Vec::new();
    for (lengths, class, expected) in cases {
        let got = margin_loss(&Tensor::vector(lengths.to_vec()), class, &p).map_err(|e| e.to_string())?;
        errs.push((got - expected).abs());
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(worst <= 1e-12, format!("examples 0, 0.25, 0.125 reproduced, max error {worst:.3e}"))
}

fn shape_contract() -> Outcome {
    for seed in 0..50 {
        let cfg = common::random_config(7000 + seed);
        cfg.validate().map_err(|e| format!("config {seed}: {e}"))?;
        let params = ModelParams::<f64>::init(&cfg, seed).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let p = params.register(&mut g, false);
        let x = g.constant(Tensor::uniform([cfg.signal_len], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
        let fv = model_forward_graph(&mut g, x, &p, &cfg, Mask::Predicted).map_err(|e| e.to_string())?;
        let e = common::expected_shapes(&cfg);
        let pairs = [
            ("phi", fv.phi, &e.phi),
            ("primary_a", fv.cell_a.primary, &e.primary_a),
            ("votes_a", fv.cell_a.votes, &e.votes_a),
            ("omega_a", fv.cell_a.capsules, &e.omega_a),
            ("primary_b", fv.cell_b.primary, &e.primary_b),
            ("votes_b", fv.cell_b.votes, &e.votes_b),
            ("omega_b", fv.cell_b.capsules, &e.omega_b),
            ("omega_cc", fv.concat, &e.omega_cc),
            ("class_votes", fv.class.votes, &e.class_votes),
            ("class_capsules", fv.class.capsules, &e.class_capsules),
            ("class_lengths", fv.class.lengths, &e.class_lengths),
            ("reconstruction", fv.reconstruction, &e.reconstruction),
        ];
        for (name, var, want) in pairs {
            if g.shape(var) != want.as_slice() {
                return Err(format!("config {seed}: {name} is {:?}, expected {want:?}", g.shape(var)));
            }
        }
    }
    Ok("50 random configurations, 12 intermediate shapes each".into())
}

struct ToyRun {
    report: TrainReport,
    checkpoint: Vec<u8>,
    recon_mse: f64,
    baseline_mse: f64,
    secs: f64,
}

const TOY_SEED: u64 = 7;

fn toy_run() -> Result<ToyRun, String> {
    let start = Instant::now();
    let data = synth_waveforms(300, 64, 0.1, TOY_SEED).map_err(|e| e.to_string())?;
    let (train_set, test_set) = split(&data, 1.0 / 3.0, TOY_SEED).map_err(|e| e.to_string())?;
    assert_eq!((train_set.len(), test_set.len()), (600, 300));
    let cfg = ModelConfig::toy();
    let tc = TrainConfig { epochs: 20, batch_size: 16, seed: TOY_SEED, ..TrainConfig::default() };
    let mut params = ModelParams::<f64>::init(&cfg, TOY_SEED).map_err(|e| e.to_string())?;
    let report = train(&mut params, &cfg, &tc, &train_set, &test_set).map_err(|e| e.to_string())?;
    let (recon_mse, baseline_mse) = reconstruction_error(&params, &cfg, &test_set).map_err(|e| e.to_string())?;
    let checkpoint = encode(&params, &cfg).map_err(|e| e.to_string())?;
    Ok(ToyRun { report, checkpoint, recon_mse, baseline_mse, secs: start.elapsed().as_secs_f64() })
}

fn desk_scale_training(run: &ToyRun) -> Outcome {
    let epochs = &run.report.epochs;
    for e in epochs {
        println!("    epoch {:2}  loss {:.5}  test accuracy {:.4}", e.epoch, e.total_loss, e.test_accuracy);
    }
    let best = epochs.iter().map(|e| e.test_accuracy).fold(0.0, f64::max);
    let (first, last) = (epochs[0].total_loss, epochs[epochs.len() - 1].total_loss);
    check(
        best >= 0.90 && last < 0.5 * first && run.secs < 600.0,
        format!(
            "best test accuracy {best:.4}, final {:.4}; loss {last:.5} vs epoch-1 {first:.5}; {:.1}s",
            epochs[epochs.len() - 1].test_accuracy,
            run.secs
        ),
    )
}

fn reconstruction_sanity(run: &ToyRun) -> Outcome {
    check(
        run.recon_mse < 0.5 * run.baseline_mse,
        format!("test MSE {:.5} vs per-signal-mean MSE {:.5}", run.recon_mse, run.baseline_mse),
    )
}

/// Beat-like windows of 360 samples: P, QRS and T bumps whose timing and
/// shape vary with the class.
fn beat_csv(path: &std::path::Path) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(360);
    let noise = Normal::new(0.0, 0.05).expect("valid stdev");
    let bump = |t: f64, at: f64, width: f64, amp: f64| amp * (-(t - at).powi(2) / (2.0 * width * width)).exp();
    let mut signals = Vec::new();
    for class in 0..5usize {
        // one rare class exercises minimum-count filtering
        let count = if class == 4 { 1 } else { 24 };
        for _ in 0..count {
            let shift = rng.random_range(-6.0..6.0);
            let qrs_width = 4.0 + 3.0 * class as f64;
            let t_amp = if class % 2 == 0 { 0.3 } else { -0.3 };
            let samples = (0..360)
                .map(|t| {
                    let t = t as f64;
                    bump(t, 100.0 + shift, 10.0, 0.15)
                        + bump(t, 180.0 + shift, qrs_width, 1.0)
                        + bump(t, 270.0 + shift, 20.0, t_amp)
                        + 0.02 * (2.0 * PI * t / 360.0).sin()
                        + noise.sample(&mut rng)
                })
                .collect();
            signals.push(LabeledSignal { samples, label: class });
        }
    }
    let d = Dataset::new(signals, 360, 5).map_err(|e| e.to_string())?;
    save_csv(&d, path).map_err(|e| e.to_string())
}

fn beat_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv = dir.path().join("beats.csv");
    beat_csv(&csv)?;
    let d = load_csv(&csv, Some(360)).map_err(|e| e.to_string())?;
    let d = filter_min_count(&d, 2).map_err(|e| e.to_string())?;
    let (d, _) = normalize(&d, NormalizeMode::Zscore);
    let (train_set, test_set) = split(&d, 0.25, 1).map_err(|e| e.to_string())?;
    let cfg = ModelConfig::beats(d.num_classes);
    let mut params = ModelParams::<f64>::init(&cfg, 1).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 1, seed: 1, ..TrainConfig::default() };
    train(&mut params, &cfg, &tc, &train_set, &test_set).map_err(|e| e.to_string())?;
    let eval = evaluate(&params, &cfg, &test_set).map_err(|e| e.to_string())?;
    let out = dir.path().join("confusion.csv");
    std::fs::write(&out, confusion_csv(&eval.confusion)).map_err(|e| e.to_string())?;
    let rows = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let square = eval.confusion.len() == d.num_classes && eval.confusion.iter().all(|r| r.len() == d.num_classes);
    let total: usize = eval.confusion.iter().flatten().sum();
    check(
        square && total == test_set.len() && rows.lines().count() == d.num_classes,
        format!(
            "{} classes kept of 5, {}×{} confusion matrix over {total} test beats (accuracy {:.4}, not asserted)",
            d.num_classes,
            eval.confusion.len(),
            eval.confusion.len(),
            eval.accuracy
        ),
    )
}

fn determinism(first: &ToyRun) -> Outcome {
    let second = toy_run()?;
    let reports = first.report.without_timing() == second.report.without_timing()
        && first.report.without_timing().to_json() == second.report.without_timing().to_json();
    let checkpoints = first.checkpoint == second.checkpoint;
    check(
        reports && checkpoints,
        format!(
            "reports identical: {reports}, checkpoints identical: {checkpoints} ({} bytes)",
            first.checkpoint.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {n:>2} {name}: {detail}");
        results.push((n, name, outcome));
    };

    run(1, "gradient correctness", &gradient_correctness);
    run(2, "routing oracle equivalence", &routing_oracle_equivalence);
    run(3, "routing normalization", &routing_normalization);
    run(4, "squash law", &squash_law);
    run(5, "margin loss values", &margin_loss_values);
    run(6, "shape contract", &shape_contract);
    match toy_run() {
        Ok(toy) => {
            run(7, "desk-scale training", &|| desk_scale_training(&toy));
            run(8, "reconstruction sanity", &|| reconstruction_sanity(&toy));
            run(9, "beat pipeline", &beat_pipeline);
            run(10, "determinism", &|| determinism(&toy));
        }
        Err(e) => {
            for (n, name) in [(7, "desk-scale training"), (8, "reconstruction sanity"), (10, "determinism")] {
                run(n, name, &|| Err(format!("training failed: {e}")));
            }
            run(9, "beat pipeline", &beat_pipeline);
        }
    }

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
