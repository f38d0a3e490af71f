//! Run configuration, loaded from a single TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How the acceptance threshold for cross-group cluster matches is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdRule {
    /// Cross-group similarity must reach the larger of the two groups'
    /// best intra-group cluster similarities.
    MaxIntra,
    /// The smaller of the two intra-group maxima.
    MinIntra,
    /// A fixed similarity floor.
    Fixed(f64),
}

impl TryFrom<String> for ThresholdRule {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "max_intra" => Ok(ThresholdRule::MaxIntra),
            "min_intra" => Ok(ThresholdRule::MinIntra),
            other => {
                if let Some(v) = other.strip_prefix("fixed:") {
                    let v: f64 = v
                        .parse()
                        .map_err(|_| format!("bad fixed threshold value: {other}"))?;
                    Ok(ThresholdRule::Fixed(v))
                } else {
                    Err(format!(
                        "unknown threshold_rule {other:?} (expected max_intra, min_intra or fixed:<value>)"
                    ))
                }
            }
        }
    }
}

impl From<ThresholdRule> for String {
    fn from(r: ThresholdRule) -> String {
        match r {
            ThresholdRule::MaxIntra => "max_intra".into(),
            ThresholdRule::MinIntra => "min_intra".into(),
            ThresholdRule::Fixed(v) => format!("fixed:{v}"),
        }
    }
}

/// Optional transform applied to co-occurrence rows before cosine distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTransform {
    None,
    Log1p,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Line-delimited article records.
    pub input: PathBuf,
    /// Semantic term vector file (TSV). Absent → deterministic stub vectors.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    /// Manual interlingual link overrides (CSV). Absent → no overrides.
    #[serde(default)]
    pub overrides: Option<PathBuf>,

    pub period_start: i32,
    pub period_end: i32,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_base_group")]
    pub base_group: String,

    #[serde(default = "default_n_neighbors")]
    pub n_neighbors: usize,
    #[serde(default)]
    pub row_transform: Option<RowTransform>,

    #[serde(default = "default_min_dist")]
    pub min_dist: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_n_epochs")]
    pub n_epochs: usize,
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_intermediate_dim")]
    pub intermediate_dim: usize,

    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,

    #[serde(default = "default_threshold_rule")]
    pub threshold_rule: ThresholdRule,
    #[serde(default = "default_stub_dim")]
    pub stub_dim: usize,

    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,

    #[serde(default)]
    pub seed: u64,
}

fn default_top_k() -> usize {
    200
}
fn default_base_group() -> String {
    "en".into()
}
fn default_n_neighbors() -> usize {
    15
}
fn default_min_dist() -> f64 {
    0.1
}
fn default_spread() -> f64 {
    1.0
}
fn default_n_epochs() -> usize {
    200
}
fn default_negatives() -> usize {
    5
}
fn default_lambda() -> f64 {
    0.3
}
fn default_intermediate_dim() -> usize {
    4
}
fn default_min_cluster_size() -> usize {
    5
}
fn default_min_samples() -> usize {
    5
}
fn default_threshold_rule() -> ThresholdRule {
    ThresholdRule::MaxIntra
}
fn default_stub_dim() -> usize {
    64
}
fn default_grid_resolution() -> usize {
    256
}

impl PipelineConfig {
    /// Loads a config file and resolves relative input paths against its
    /// parent directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig = toml::from_str(&text)?;
        config.validate()?;
        if let Some(dir) = path.parent() {
            config.input = resolve(dir, &config.input);
            config.vectors = config.vectors.map(|p| resolve(dir, &p));
            config.overrides = config.overrides.map(|p| resolve(dir, &p));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period_start > self.period_end {
            return Err(ConfigError::Invalid(format!(
                "empty period range {}..={}",
                self.period_start, self.period_end
            )));
        }
        if self.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be >= 1".into()));
        }
        if self.n_neighbors == 0 {
            return Err(ConfigError::Invalid("n_neighbors must be >= 1".into()));
        }
        if self.spread <= 0.0 {
            return Err(ConfigError::Invalid("spread must be > 0".into()));
        }
        if self.min_dist < 0.0 {
            return Err(ConfigError::Invalid("min_dist must be >= 0".into()));
        }
        if self.intermediate_dim < 2 {
            return Err(ConfigError::Invalid("intermediate_dim must be >= 2".into()));
        }
        if self.min_cluster_size < 2 {
            return Err(ConfigError::Invalid("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples == 0 {
            return Err(ConfigError::Invalid("min_samples must be >= 1".into()));
        }
        if self.stub_dim < 2 {
            return Err(ConfigError::Invalid("stub_dim must be >= 2".into()));
        }
        if self.grid_resolution < 16 {
            return Err(ConfigError::Invalid("grid_resolution must be >= 16".into()));
        }
        Ok(())
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
