//! Labelled 1D signals: CSV interchange, per-signal normalisation,
//! stratified splitting and a synthetic three-waveform task.
//!
//! CSV layout: one example per line, `label,s0,s1,...,s(L-1)`, no header.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSignal {
    pub samples: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub signals: Vec<LabeledSignal>,
    pub signal_len: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

fn format_err(msg: String) -> Error {
    Error::Format(msg)
}

impl Dataset {
    /// Builds a dataset, checking that every signal has `signal_len`
    /// samples and a label below `num_classes`.
    pub fn new(signals: Vec<LabeledSignal>, signal_len: usize, num_classes: usize) -> Result<Self> {
        for (i, s) in signals.iter().enumerate() {
            if s.samples.len() != signal_len {
                return Err(format_err(format!("signal {i} has {} samples, expected {signal_len}", s.samples.len())));
            }
            if s.label >= num_classes {
                return Err(format_err(format!("signal {i} has label {} >= {num_classes}", s.label)));
            }
        }
        Ok(Self { signals, signal_len, num_classes, class_names: None })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.signals {
            counts[s.label] += 1;
        }
        counts
    }

    fn with_signals(&self, signals: Vec<LabeledSignal>) -> Self {
        Self { signals, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            signals: Vec::new(),
            signal_len: self.signal_len,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }
}

/// Parses CSV text. `L` comes from the first row unless `expected_len`
/// pins it; the class count is one more than the largest label.
pub fn parse_csv(text: &str, expected_len: Option<usize>) -> Result<Dataset> {
    let mut signals = Vec::new();
    let mut signal_len = expected_len;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default().trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| format_err(format!("row {row}: label `{label_field}` is not a non-negative integer")))?;
        let samples = fields
            .enumerate()
            .map(|(c, f)| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(format!("row {row}, column {}: `{f}` is not a finite number", c + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if samples.is_empty() {
            return Err(format_err(format!("row {row} has no samples")));
        }
        match signal_len {
            None => signal_len = Some(samples.len()),
            Some(l) if l != samples.len() => {
                return Err(format_err(format!("row {row} has {} samples, expected {l}", samples.len())));
            }
            Some(_) => {}
        }
        signals.push(LabeledSignal { samples, label });
    }
    if signals.is_empty() {
        return Err(format_err("dataset is empty".into()));
    }
    let num_classes = signals.iter().map(|s| s.label).max().expect("nonempty") + 1;
    Dataset::new(signals, signal_len.expect("set by first row"), num_classes)
}

pub fn load_csv(path: impl AsRef<Path>, expected_len: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_csv(&text, expected_len)
}

/// Serialises with 17 significant digits so that parsing restores every
/// sample exactly.
pub fn to_csv(d: &Dataset) -> String {
    let mut out = String::new();
    for s in &d.signals {
        write!(out, "{}", s.label).expect("writing to a String");
        for v in &s.samples {
            write!(out, ",{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv(d))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Leave samples untouched.
    None,
    /// Per-signal zero mean, unit standard deviation.
    Zscore,
    /// Per-signal affine map of `[min, max]` onto `[-1, 1]`.
    Minmax,
}

/// Per-signal statistics used by [`normalize`]: `(mean, std)` for z-scores,
/// `(min, max)` for min-max.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub center: f64,
    pub spread: f64,
}

const DEGENERATE_SPREAD: f64 = 1e-12;

/// Normalises every signal independently. A signal whose spread is below
/// `1e-12` is mapped to zeros.
pub fn normalize(d: &Dataset, mode: NormalizeMode) -> (Dataset, Vec<SignalStats>) {
    let mut stats = Vec::with_capacity(d.len());
    let signals = d
        .signals
        .iter()
        .map(|s| {
            let n = s.samples.len() as f64;
            let (st, samples) = match mode {
                NormalizeMode::None => (SignalStats { center: 0.0, spread: 1.0 }, s.samples.clone()),
                NormalizeMode::Zscore => {
                    let mean = s.samples.iter().sum::<f64>() / n;
                    let var = s.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    let out = if std < DEGENERATE_SPREAD {
                        vec![0.0; s.samples.len()]
                    } else {
                        s.samples.iter().map(|v| (v - mean) / std).collect()
                    };
                    (SignalStats { center: mean, spread: std }, out)
                }
                NormalizeMode::Minmax => {
                    let lo = s.samples.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = s.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let range = hi - lo;
                    let out = if range < DEGENERATE_SPREAD {
                        vec![0.0; s.samples.len()]
                    } else {
                        s.samples.iter().map(|v| 2.0 * (v - lo) / range - 1.0).collect()
                    };
                    (SignalStats { center: lo, spread: hi }, out)
                }
            };
            stats.push(st);
            LabeledSignal { samples, label: s.label }
        })
        .collect();
    (d.with_signals(signals), stats)
}

/// Stratified split. Each class is shuffled with a stream seeded by `seed`
/// and `round(count · test_fraction)` examples go to the test side, kept
/// within `[1, count − 1]`. Classes with fewer than two examples stay in
/// the training set.
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(arg_err!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in d.signals.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng);
        if idx.len() < 2 {
            warn!("class {class} has {} example(s); keeping it in the training split", idx.len());
            train.extend(idx);
            continue;
        }
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    let pick = |ids: Vec<usize>| d.with_signals(ids.into_iter().map(|i| d.signals[i].clone()).collect());
    Ok((pick(train), pick(test)))
}

/// Drops classes with fewer than `min_count` examples and renumbers the
/// survivors densely; `class_names` records the original labels.
pub fn filter_min_count(d: &Dataset, min_count: usize) -> Result<Dataset> {
    let counts = d.class_counts();
    let kept: Vec<usize> = (0..d.num_classes).filter(|&c| counts[c] >= min_count).collect();
    if kept.is_empty() {
        return Err(arg_err!("no class has at least {min_count} examples"));
    }
    let mut remap = vec![None; d.num_classes];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = Some(new);
    }
    let signals = d
        .signals
        .iter()
        .filter_map(|s| remap[s.label].map(|label| LabeledSignal { samples: s.samples.clone(), label }))
        .collect();
    let names = kept.iter().map(|&c| d.class_names.as_ref().map_or_else(|| c.to_string(), |n| n[c].clone())).collect();
    Ok(Dataset { signals, signal_len: d.signal_len, num_classes: kept.len(), class_names: Some(names) })
}

/// Waveform family of [`synth_waveforms`], indexed by class label.
pub const SYNTH_CLASSES: [&str; 3] = ["sine", "square", "sawtooth"];

fn waveform(class: usize, phase: f64) -> f64 {
    match class {
        0 => phase.sin(),
        1 => {
            if phase.sin() >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
        _ => {
            let cycles = phase / (2.0 * PI);
            2.0 * (cycles - cycles.floor()) - 1.0
        }
    }
}

/// Three-class task: sine, square and sawtooth waves with a uniformly
/// drawn frequency of 2 to 6 cycles per window and a uniform phase, plus
/// white Gaussian noise. Examples cycle through the classes.
pub fn synth_waveforms(num_per_class: usize, signal_len: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if signal_len < 8 {
        return Err(arg_err!("synthetic signals need at least 8 samples, got {signal_len}"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(arg_err!("noise level must be a non-negative number, got {noise_sigma}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| arg_err!("{e}"))?;
    let mut signals = Vec::with_capacity(num_per_class * SYNTH_CLASSES.len());
    for _ in 0..num_per_class {
        for class in 0..SYNTH_CLASSES.len() {
            let freq = rng.random_range(2.0..=6.0);
            let offset = rng.random_range(0.0..2.0 * PI);
            let samples = (0..signal_len)
                .map(|t| {
                    let phase = 2.0 * PI * freq * t as f64 / signal_len as f64 + offset;
                    let clean = waveform(class, phase);
                    if noise_sigma > 0.0 {
                        clean + noise.sample(&mut rng)
                    } else {
                        clean
                    }
                })
                .collect();
            signals.push(LabeledSignal { samples, label: class });
        }
    }
    let mut d = Dataset::new(signals, signal_len, SYNTH_CLASSES.len())?;
    d.class_names = Some(SYNTH_CLASSES.iter().map(|s| s.to_string()).collect());
    Ok(d)
}
