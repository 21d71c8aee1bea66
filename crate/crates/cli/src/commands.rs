//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use timecaps::data::{filter_min_count, load_csv, normalize, split, synth_waveforms, to_csv, Dataset};
use timecaps::model::{model_forward, Mask, ModelConfig, ModelParams};
use timecaps::train::{confusion_csv, evaluate, train_with};
use timecaps::verify::{gradcheck_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use timecaps::{checkpoint, Tensor};

use crate::config::{Overrides, RunConfig};
use crate::output::{ensure_dir, write_atomic};
use crate::{CliError, EvalArgs, GradcheckArgs, ReconstructArgs, SynthArgs, TrainArgs};

fn load_dataset(run: &RunConfig) -> Result<Dataset, CliError> {
    let d = &run.data;
    let data = match &d.path {
        Some(path) => load_csv(path, Some(run.model.signal_len))?,
        None => synth_waveforms(d.synthetic.num_per_class, run.model.signal_len, d.synthetic.noise, run.train.seed)?,
    };
    let data = match d.min_class_count {
        Some(min) => filter_min_count(&data, min)?,
        None => data,
    };
    if data.num_classes > run.model.num_classes {
        return Err(CliError::usage(format!(
            "dataset has {} classes but the model has {}",
            data.num_classes, run.model.num_classes
        )));
    }
    Ok(normalize(&data, d.normalize).0)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut run = RunConfig::load(args.config.as_deref())?;
    run.apply(&Overrides {
        data: args.data.clone(),
        out: args.out.clone(),
        epochs: args.epochs,
        seed: args.seed,
        noise: args.noise,
    });
    run.validate()?;
    let data = load_dataset(&run)?;
    let (train_set, test_set) = split(&data, run.data.test_fraction, run.train.seed)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(CliError::usage("both the training and the test split must be nonempty"));
    }

    let out = &run.out_dir;
    ensure_dir(out)?;
    let mut params = ModelParams::<f64>::init(&run.model, run.train.seed)?;
    let report = train_with(&mut params, &run.model, &run.train, &train_set, &test_set, |s| {
        println!(
            "epoch {:>3}  loss {:.5}  margin {:.5}  recon {:.5}  train_acc {:.4}  test_acc {:.4}",
            s.epoch, s.total_loss, s.margin_loss, s.recon_loss, s.train_accuracy, s.test_accuracy
        );
    })?;

    write_atomic(&out.join("model.ckpt"), &checkpoint::encode(&params, &run.model)?)?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&out.join("confusion.csv"), confusion_csv(&report.confusion).as_bytes())?;
    write_atomic(&out.join("train.csv"), to_csv(&train_set).as_bytes())?;
    write_atomic(&out.join("test.csv"), to_csv(&test_set).as_bytes())?;
    let resolved = serde_json::to_string_pretty(&run).expect("config serialises");
    write_atomic(&out.join("config.json"), resolved.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Checkpoint path and output directory shared by `eval` and `reconstruct`.
fn locate(checkpoint: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<(PathBuf, PathBuf), CliError> {
    let ckpt = match (checkpoint, out) {
        (Some(c), _) => c.clone(),
        (None, Some(o)) => o.join("model.ckpt"),
        (None, None) => return Err(CliError::usage("pass --checkpoint or --out")),
    };
    let dir = match out {
        Some(o) => o.clone(),
        None => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    Ok((ckpt, dir))
}

fn load_for(
    ckpt: &Path,
    data: &Path,
    mode: crate::NormalizeArg,
) -> Result<(ModelParams<f64>, ModelConfig, Dataset), CliError> {
    let (params, cfg) = checkpoint::load_checkpoint::<f64>(ckpt)?;
    let d = load_csv(data, Some(cfg.signal_len))?;
    if d.num_classes > cfg.num_classes {
        return Err(CliError::usage(format!(
            "dataset has {} classes but the model has {}",
            d.num_classes, cfg.num_classes
        )));
    }
    Ok((params, cfg, normalize(&d, mode.into()).0))
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (ckpt, dir) = locate(&args.checkpoint, &args.out)?;
    let (params, cfg, data) = load_for(&ckpt, &args.data, args.normalize)?;
    let result = evaluate(&params, &cfg, &data)?;
    ensure_dir(&dir)?;
    write_atomic(&dir.join("eval_confusion.csv"), confusion_csv(&result.confusion).as_bytes())?;
    println!("accuracy={:.4}", result.accuracy);
    Ok(())
}

fn csv_row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    cells.join(",")
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<(), CliError> {
    let (ckpt, dir) = locate(&args.checkpoint, &args.out)?;
    let (params, cfg, data) = load_for(&ckpt, &args.data, args.normalize)?;
    let mut k = args.k;
    if k > data.len() {
        log::warn!("k = {k} exceeds the {} available signals; using {}", data.len(), data.len());
        k = data.len();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut picks = sample(&mut rng, data.len(), k).into_vec();
    picks.sort_unstable();

    let mut files = Vec::with_capacity(k);
    for &i in &picks {
        let s = &data.signals[i];
        let x = Tensor::from_f64([s.samples.len()], &s.samples)?;
        let out = model_forward(&x, &params, &cfg, Mask::Predicted)?;
        let mut text = String::new();
        writeln!(text, "{}", csv_row(&s.samples)).expect("writing to a String");
        writeln!(text, "{}", csv_row(&out.reconstruction.to_f64_vec())).expect("writing to a String");
        files.push((format!("recon_{i:05}.csv"), text, out.predicted_class, s.label));
    }
    ensure_dir(&dir)?;
    for (name, text, predicted, label) in files {
        write_atomic(&dir.join(&name), text.as_bytes())?;
        println!("{name}  label {label}  predicted {predicted}");
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let mut cfg = ModelConfig::tiny();
    if let Some(path) = &args.config {
        let run = RunConfig::load(Some(path))?;
        run.model.validate()?;
        cfg.routing_iters = run.model.routing_iters;
        cfg.cell_a_activation = run.model.cell_a_activation;
        cfg.cell_b_activation = run.model.cell_b_activation;
    }
    let report = gradcheck_suite(&cfg, args.seed, GRADCHECK_STEP, args.corrupt.as_deref())?;
    for c in &report.components {
        let tag = if c.max_rel_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        println!("{:<18} {:.3e}  {tag}", c.name, c.max_rel_error);
    }
    let worst = report.worst().expect("suite is nonempty");
    if report.passed(GRADCHECK_TOLERANCE) {
        println!("all {} components below {GRADCHECK_TOLERANCE:e}", report.components.len());
        Ok(())
    } else {
        Err(CliError::verification(format!(
            "gradient check failed; worst component {} with relative error {:.3e}",
            worst.name, worst.max_rel_error
        )))
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let d = synth_waveforms(args.per_class, args.length, args.noise, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(CliError::usage(format!("directory {} does not exist", parent.display())));
        }
        crate::output::clean_partials(parent)?;
    }
    write_atomic(&args.out, to_csv(&d).as_bytes())?;
    println!("wrote {} signals to {}", d.len(), args.out.display());
    Ok(())
}
