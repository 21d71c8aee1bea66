use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timecaps::checkpoint::{load_checkpoint, save_checkpoint};
use timecaps::data::{split, synth_waveforms, Dataset, LabeledSignal};
use timecaps::model::{ModelConfig, ModelParams};
use timecaps::optim::AdamState;
use timecaps::train::{evaluate, sample_loss, train, train_step, TrainConfig};

fn tiny_data(seed: u64) -> (Dataset, Dataset) {
    let d = synth_waveforms(8, 32, 0.1, seed).unwrap();
    split(&d, 0.25, seed).unwrap()
}

#[test]
fn single_adam_step_lowers_the_example_loss() {
    let cfg = ModelConfig::tiny();
    let tc = TrainConfig { lr: 1e-3, ..TrainConfig::default() };
    let mut decreased = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut params = ModelParams::<f64>::init(&cfg, trial).unwrap();
        let sample = LabeledSignal {
            samples: (0..cfg.signal_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: rng.random_range(0..cfg.num_classes),
        };
        let before = sample_loss(&params, &cfg, &tc, &sample).unwrap().total;
        let mut adam = AdamState::new(params.flat_refs(), tc.lr);
        train_step(&mut params, &mut adam, &cfg, &tc, &[&sample]).unwrap();
        let after = sample_loss(&params, &cfg, &tc, &sample).unwrap().total;
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "loss decreased in {decreased}/100 trials");
}

#[test]
fn evaluation_ignores_dataset_order() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::<f64>::init(&cfg, 4).unwrap();
    let d = synth_waveforms(10, 32, 0.2, 4).unwrap();
    let mut reversed = d.clone();
    reversed.signals.reverse();
    let a = evaluate(&params, &cfg, &d).unwrap();
    let b = evaluate(&params, &cfg, &reversed).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.confusion, b.confusion);
    let mut back = b.predictions.clone();
    back.reverse();
    assert_eq!(a.predictions, back);
}

#[test]
fn constant_predictor_scores_about_a_third_on_random_labels() {
    let cfg = ModelConfig::tiny();
    let mut params = ModelParams::<f64>::init(&cfg, 1).unwrap();
    // only class 0 receives votes, so every other capsule has length zero
    let per_class = params.class_weights.numel() / cfg.num_classes;
    params.class_weights.data_mut()[per_class..].iter_mut().for_each(|w| *w = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 900;
    let signals = (0..n)
        .map(|_| LabeledSignal {
            samples: (0..cfg.signal_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: rng.random_range(0..3),
        })
        .collect();
    let d = Dataset::new(signals, cfg.signal_len, 3).unwrap();
    let eval = evaluate(&params, &cfg, &d).unwrap();
    assert!(eval.predictions.iter().all(|&p| p == 0));
    // σ = sqrt(p(1−p)/n) ≈ 0.0157; allow four σ
    assert!((eval.accuracy - 1.0 / 3.0).abs() < 0.063, "{}", eval.accuracy);
    let total: usize = eval.confusion.iter().flatten().sum();
    assert_eq!(total, n);
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let mut trained = params.clone();
    let (tr, te) = tiny_data(0);
    let report = train(&mut trained, &cfg, &TrainConfig { epochs: 0, ..TrainConfig::default() }, &tr, &te).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(trained, params);
}

#[test]
fn short_runs_are_reproducible_and_consistent() {
    let cfg = ModelConfig::tiny();
    let tc = TrainConfig { epochs: 2, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let (tr, te) = tiny_data(3);
    let run = || {
        let mut p = ModelParams::<f64>::init(&cfg, 3).unwrap();
        let report = train(&mut p, &cfg, &tc, &tr, &te).unwrap();
        (p, report)
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(p1, p2);
    assert_eq!(r1.without_timing(), r2.without_timing());
    assert_eq!(r1.epochs.len(), 2);
    for (row, &count) in r1.confusion.iter().zip(&te.class_counts()) {
        assert_eq!(row.iter().sum::<usize>(), count);
    }
    for e in &r1.epochs {
        assert!((0.0..=1.0).contains(&e.train_accuracy) && (0.0..=1.0).contains(&e.test_accuracy));
    }
}

#[test]
fn mismatched_signal_length_is_rejected() {
    let cfg = ModelConfig::tiny();
    let mut p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let d = synth_waveforms(4, 40, 0.1, 0).unwrap();
    let (tr, te) = split(&d, 0.5, 0).unwrap();
    let err = train(&mut p, &cfg, &TrainConfig { epochs: 1, ..TrainConfig::default() }, &tr, &te).unwrap_err();
    assert!(matches!(err, timecaps::Error::Config(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let cfg = ModelConfig::tiny();
    let mut params = ModelParams::<f64>::init(&cfg, 6).unwrap();
    let (tr, te) = tiny_data(6);
    train(&mut params, &cfg, &TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() }, &tr, &te).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    save_checkpoint(&params, &cfg, &first).unwrap();
    let (loaded, loaded_cfg) = load_checkpoint::<f64>(&first).unwrap();
    assert_eq!(loaded_cfg, cfg);
    assert_eq!(loaded, params);
    save_checkpoint(&loaded, &loaded_cfg, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(evaluate(&loaded, &cfg, &te).unwrap(), evaluate(&params, &cfg, &te).unwrap());

    let bytes = std::fs::read(&first).unwrap();
    std::fs::write(&second, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&second), Err(timecaps::Error::Checkpoint { .. })));
}
