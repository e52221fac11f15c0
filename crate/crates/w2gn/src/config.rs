//! Declarative experiment configuration (TOML, fail-closed) and the
//! structured summary emitted at the end of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ToyDistribution;
use crate::metrics::GaussianSpec;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    W2gn,
    SingleDisc,
    Minimax,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::W2gn => "w2gn",
            Method::SingleDisc => "single-disc",
            Method::Minimax => "minimax",
        })
    }
}

/// A toy distribution table (tagged by `kind`) or an image palette table
/// (`palette = "path.png"`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataSource {
    Toy(ToyDistribution),
    Palette { palette: PathBuf },
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Toy(t) => t.dim(),
            DataSource::Palette { .. } => 3,
        }
    }

    pub fn as_toy(&self) -> Option<&ToyDistribution> {
        match self {
            DataSource::Toy(t) => Some(t),
            DataSource::Palette { .. } => None,
        }
    }

    /// Closed-form Gaussian description when the source admits one.
    pub fn gaussian_spec(&self) -> Option<GaussianSpec> {
        match self.as_toy()? {
            ToyDistribution::StandardGaussian { dim } => Some(GaussianSpec::standard(*dim)),
            ToyDistribution::Gaussian { mean, cov } => {
                GaussianSpec::new(mean.clone(), cov.clone()).ok()
            }
            _ => None,
        }
    }
}

fn default_log_interval() -> usize {
    100
}

/// One full experiment: method, data, hyperparameters, output layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub source: DataSource,
    pub target: DataSource,
    pub train: TrainConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    /// Iterations between periodic checkpoints; 0 writes only the final one.
    /// Snapshots are taken at logging points, so this should be a multiple of
    /// `log_interval`.
    #[serde(default)]
    pub checkpoint_interval: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let d = self.source.dim();
        if self.target.dim() != d {
            return Err(ConfigError::Invalid(format!(
                "source dimension {d} does not match target dimension {}",
                self.target.dim()
            )));
        }
        if self.train.spec.input_dim != d {
            return Err(ConfigError::Invalid(format!(
                "network input dimension {} does not match the data dimension {d}",
                self.train.spec.input_dim
            )));
        }
        for (role, s) in [("source", &self.source), ("target", &self.target)] {
            if let Some(t) = s.as_toy() {
                t.validate().map_err(|e| {
                    ConfigError::Invalid(format!("{role}: {e}"))
                })?;
            }
        }
        if self.log_interval == 0 {
            return Err(ConfigError::Invalid("log_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Several methods on one shared problem, for side-by-side comparison runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub source: DataSource,
    pub target: DataSource,
    pub train: TrainConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.methods.len() < 2 {
            return Err(ConfigError::Invalid("benchmark needs at least two methods".into()));
        }
        self.experiment_for(self.methods[0]).validate()
    }

    /// The single-method experiment a benchmark entry expands to.
    pub fn experiment_for(&self, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            source: self.source.clone(),
            target: self.target.clone(),
            train: self.train.clone(),
            out_dir: self.out_dir.clone(),
            log_interval: self.log_interval,
            checkpoint_interval: 0,
        }
    }
}

pub fn parse_benchmark_config(text: &str, path: &Path) -> Result<BenchmarkConfig, ConfigError> {
    let cfg: BenchmarkConfig = toml::from_str(text)
        .map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_benchmark_config(path: &Path) -> Result<BenchmarkConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_benchmark_config(&text, path)
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text)
        .map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text, path)
}

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// End-of-run document; the config echo fully determines a rerun. The wall
/// clock fields are the only non-deterministic ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub pretrain_mse: f64,
    pub final_ed_forward: f64,
    pub final_ed_inverse: f64,
    pub final_r_y: f64,
    pub final_r_x: f64,
    /// Last few logged regularized-correlation estimates, newest last.
    pub corr_hat_tail: Vec<f64>,
    /// Closed-form reference when both ends are Gaussian.
    pub corr_reference: Option<f64>,
    /// corr_hat - corr_reference; the bound wants this above -3 MC errors.
    pub eps_hat: Option<f64>,
    pub wall_total_ms: f64,
    pub iters_per_sec: f64,
}
