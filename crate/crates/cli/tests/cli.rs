use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timecaps::model::ModelConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timecaps"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Run configuration for the tiny network on a small synthetic task.
fn tiny_config(dir: &Path, epochs: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "model": ModelConfig::tiny(),
        "train": { "epochs": epochs, "batch_size": 8, "seed": 5 },
        "data": { "synthetic": { "num_per_class": 20, "noise": 0.1 } },
        "out_dir": s(&dir.join("unused")),
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn synth_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(code(&run(&["synth", "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["synth", "--out", s(&b)])), 0);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 600);
    assert!(text.lines().all(|l| l.split(',').count() == 65));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let missing = dir.path().join("no/such/dir/x.csv");
    assert_eq!(code(&run(&["synth", "--out", s(&missing)])), 2);
}

#[test]
fn train_eval_reconstruct_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 9);
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("model.ckpt.partial"), b"stale").unwrap();

    let o = run(&["train", "--config", s(&cfg), "--out", s(&out), "--epochs", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 3);
    for f in ["model.ckpt", "report.json", "confusion.csv", "train.csv", "test.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join("model.ckpt.partial").exists());

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let epochs = report["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 3);
    let final_acc = epochs[2]["test_accuracy"].as_f64().unwrap();

    let test_csv = out.join("test.csv");
    let o = run(&["eval", "--out", s(&out), "--data", s(&test_csv)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), format!("accuracy={final_acc:.4}"));
    assert!(out.join("eval_confusion.csv").is_file());

    let recon = dir.path().join("recon");
    let train_csv = out.join("train.csv");
    let ckpt = out.join("model.ckpt");
    let o = run(&["reconstruct", "--checkpoint", s(&ckpt), "--data", s(&train_csv), "--out", s(&recon), "--k", "3"]);
    assert_eq!(code(&o), 0);
    let files: Vec<PathBuf> = fs::read_dir(&recon).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for f in &files {
        let rows = read_rows(f);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.len() == 32));
        let (x, r) = (&rows[0], &rows[1]);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // white noise with the signal's variance
        let noise_mse =
            x.iter().map(|v| (v - sd * (rng.random::<f64>() * 12f64.sqrt() - 3f64.sqrt())).powi(2)).sum::<f64>() / n;
        let recon_mse = x.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        assert!(recon_mse < noise_mse, "{recon_mse} vs {noise_mse}");
    }

    // more signals requested than exist: clamped, not an error
    let few = dir.path().join("few.csv");
    let two: String = fs::read_to_string(&test_csv).unwrap().lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(&few, two).unwrap();
    let clamp = dir.path().join("clamp");
    let o = run(&["reconstruct", "--checkpoint", s(&ckpt), "--data", s(&few), "--out", s(&clamp), "--k", "10"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(&clamp).unwrap().count(), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds"));
}

#[test]
fn eval_rejects_bad_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let out = dir.path().join("run");
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&run(&["eval", "--out", s(&out), "--data", s(&empty)])), 2);

    let long = dir.path().join("long.csv");
    assert_eq!(code(&run(&["synth", "--out", s(&long), "--per-class", "2", "--length", "40"])), 0);
    let o = run(&["eval", "--out", s(&out), "--data", s(&long)]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("eval_confusion.csv").exists());
}

#[test]
fn failures_leave_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["train", "--data", s(&missing), "--out", s(&out)])), 2);
    assert!(!out.exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epochs": 1, "learning_rate": 0.1}}"#).unwrap();
    assert_eq!(code(&run(&["train", "--config", s(&bad), "--out", s(&out)])), 2);
    assert!(!out.exists());

    assert_eq!(code(&run(&["train", "--noise", "-1", "--out", s(&out)])), 2);
    assert!(!out.exists());
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for name in ["conv1d", "conv2d", "deconv1d", "squash", "routing", "full_model"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} not listed");
    }

    let o = run(&["gradcheck", "--corrupt", "squash"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("squash"));
    assert_eq!(code(&run(&["gradcheck", "--corrupt", "nothing"])), 2);
}

#[test]
fn thread_cap_must_be_positive() {
    let o = bin().env("TIMECAPS_THREADS", "0").args(["gradcheck"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = bin().env("TIMECAPS_THREADS", "1").args(["synth", "--out", s(&out)]).output().unwrap();
    assert_eq!(code(&o), 0);
}
