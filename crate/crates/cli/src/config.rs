//! Run configuration file and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use timecaps::data::NormalizeMode;
use timecaps::model::ModelConfig;
use timecaps::train::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub num_per_class: usize,
    pub noise: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { num_per_class: 300, noise: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    /// CSV of labelled signals; synthetic waveforms are generated when absent.
    pub path: Option<PathBuf>,
    pub synthetic: SynthSettings,
    pub test_fraction: f64,
    pub normalize: NormalizeMode,
    /// Classes with fewer examples are dropped before splitting.
    pub min_class_count: Option<usize>,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: SynthSettings::default(),
            test_fraction: 1.0 / 3.0,
            normalize: NormalizeMode::None,
            min_class_count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSettings,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            data: DataSettings::default(),
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

/// Flags that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.data {
            self.data.path = Some(p.clone());
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(n) = o.noise {
            self.data.synthetic.noise = n;
        }
    }

    /// Everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(CliError::usage(format!("test_fraction must lie in (0, 1), got {}", d.test_fraction)));
        }
        if !(d.synthetic.noise >= 0.0 && d.synthetic.noise.is_finite()) {
            return Err(CliError::usage(format!("noise must be a non-negative number, got {}", d.synthetic.noise)));
        }
        if d.path.is_none() && d.synthetic.num_per_class < 2 {
            return Err(CliError::usage("synthetic data needs at least 2 examples per class"));
        }
        if d.path.is_none() && self.model.num_classes < 3 {
            return Err(CliError::usage("synthetic data has 3 classes; the model needs at least 3"));
        }
        if let Some(p) = &d.path {
            if !p.is_file() {
                return Err(CliError::usage(format!("dataset {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
