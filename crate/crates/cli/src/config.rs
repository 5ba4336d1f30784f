//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use mindlab::metrics::SweepVariable;
use mindlab::synth::SyntheticConfig;
use mindlab::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Values and seeds of a sweep. `ablate` only reads `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<SweepVariable>,
    #[serde(default)]
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synthetic.validate().map_err(|e| CliError::Invalid(format!("synthetic: {e}")))?;
        self.train.validate().map_err(|e| CliError::Invalid(format!("train: {e}")))?;
        Ok(())
    }

    /// Replaces both the data and the training seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.synthetic.seed = s;
            self.train.seed = s;
        }
        self
    }

    /// `--out` if given, else `output_dir`.
    pub fn output_dir(&self, out: Option<&Path>) -> Result<PathBuf, CliError> {
        out.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| CliError::Invalid("no output location: pass --out or set output_dir".into()))
    }

    pub fn sweep(&self) -> Result<&SweepSpec, CliError> {
        self.sweep.as_ref().ok_or_else(|| CliError::Invalid("config has no sweep declaration".into()))
    }
}
