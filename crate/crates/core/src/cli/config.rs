use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::inference::SamplerConfig;
use crate::model::ModelSpec;
use crate::summaries::{SummaryMode, DEFAULT_GRID_SIZE};

/// A run described in TOML:
///
/// ```toml
/// data = "hcc.csv"          # relative to the config file
///
/// [model]
/// variant = "AnovaPlus"
/// cov = "Reduced2"
///
/// [sampler]
/// chains = 3
/// seed = 7
///
/// [outputs]
/// dir = "out"
///
/// [[compare]]
/// variant = "MetaRegression"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Keep only each continuous test's count at its reference threshold.
    #[serde(default)]
    pub reference_thresholds_only: bool,
    /// True parameter values by coordinate name, as written by `simulate`;
    /// when present, `fit` writes a recovery table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    pub dir: PathBuf,
    /// summary.csv: sensitivity, specificity and FPF at each C*.
    pub tables: bool,
    /// Accuracy-versus-threshold curves of continuous tests.
    pub curves: bool,
    pub sroc: bool,
    pub rankings: bool,
    /// SVG figures for curves and sROC.
    pub figures: bool,
    pub diagnostics: bool,
    pub mode: SummaryMode,
    pub grid_size: usize,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            dir: PathBuf::from("out"),
            tables: true,
            curves: true,
            sroc: true,
            rankings: true,
            figures: true,
            diagnostics: true,
            mode: SummaryMode::Population,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))?;
        cfg.model.check().map_err(|e| CliError::Parse(e.to_string()))?;
        for spec in &cfg.compare {
            spec.check().map_err(|e| CliError::Parse(e.to_string()))?;
        }
        cfg.sampler.check().map_err(|e| CliError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config and makes its relative paths relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data = base.join(&cfg.data);
        cfg.truth = cfg.truth.map(|t| base.join(t));
        cfg.outputs.dir = base.join(&cfg.outputs.dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
