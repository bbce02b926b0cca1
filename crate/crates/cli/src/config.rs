//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use geoal_core::classifier::BoostConfig;
use geoal_core::engine::{EngineConfig, MetricKind, Strategy};
use geoal_core::io::load_dataset;
use geoal_core::synth::{build_dataset, SynthSpec};
use geoal_core::volume::Dataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Dataset manifest or directory, relative to the config file.
    Path(PathBuf),
    Synth(SynthSpec),
}

impl DatasetSource {
    pub fn load(&self, base: &Path) -> Result<Dataset, CliError> {
        match self {
            DatasetSource::Path(p) => Ok(load_dataset(&base.join(p))?),
            DatasetSource::Synth(spec) => Ok(build_dataset(spec)?.0),
        }
    }
}

/// One experiment: every strategy runs `repeats` times with shared seeds.
/// Unset engine fields take the engine defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub neighbors: Option<usize>,
    /// Propagation steps.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub top_t: Option<usize>,
    #[serde(default)]
    pub seeds_per_class: Option<usize>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    #[serde(default)]
    pub boost: Option<BoostConfig>,
    /// Output directory, relative to the config file; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_repeats() -> usize {
    20
}

impl RunConfig {
    pub fn engine(&self) -> EngineConfig {
        let d = EngineConfig::default();
        EngineConfig {
            neighbors: self.neighbors.unwrap_or(d.neighbors),
            steps: self.steps.or(d.steps),
            radius: self.radius.unwrap_or(d.radius),
            top_t: self.top_t.unwrap_or(d.top_t),
            seeds_per_class: self.seeds_per_class.unwrap_or(d.seeds_per_class),
            budget: self.budget.or(d.budget),
            metric: self.metric.or(d.metric),
            boost: self.boost.unwrap_or(d.boost),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.strategies.is_empty() {
            return Err(CliError::Usage("config lists no strategies".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(CliError::Usage(format!("strategy {s} listed twice")));
            }
        }
        if self.repeats == 0 {
            return Err(CliError::Usage("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reads a JSON file; syntax and schema problems are usage errors.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Directory that relative paths in a config file are resolved against.
pub fn base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
