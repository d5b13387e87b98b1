//! Model variants, their parameter layout and the joint log-posterior.
//!
//! Each series (study i, test k, group j) gets a latent location and
//! log-scale:
//!
//! ```text
//! μ_ijk     = m_kj + ε_ijk (+ η_ij)
//! ln σ_ijk  = s_kj + u_ijk (+ γ_ij)
//! ```
//!
//! The bracketed study effects exist only in the ANOVA variants.
//! Covariance matrices use the coordinate order (loc₀, loc₁, scale₀, scale₁),
//! so a binary test's 2-vector uses the leading 2×2 block of a 4×4 matrix.

mod layout;
mod posterior;
mod simulate;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{build_layout, BlockPart, CoordKind, CovBlock, Hyper, Layout, Member, TestInfo};
pub use posterior::{log_jacobian, log_posterior, log_prior, random_effects_logdensity, Model, TermId};
pub use simulate::{draw_random_effects, simulate_dataset, DesignCell, SimulationDesign};
pub use state::{CovarianceFactor, FixedEffects, ParameterState, RandomEffects, VarianceComponents};

use crate::dataset::DatasetError;
use crate::likelihood::LikelihoodError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("data incompatible with {variant}: {reason}")]
    Incompatible { variant: ModelVariant, reason: String },
    #[error("covariance `{0}` is not positive definite")]
    NotPositiveDefinite(String),
    #[error("state does not match layout: {0}")]
    LayoutMismatch(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Separate bivariate random-effects meta-analysis per test, fitted jointly.
    Independent,
    /// One random-effects covariance shared by all tests.
    MetaRegression,
    /// Study effects shared across tests plus study×test interactions.
    Anova,
    /// ANOVA with a common hierarchical prior on the interaction SDs.
    AnovaPlus,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] =
        [ModelVariant::Independent, ModelVariant::MetaRegression, ModelVariant::Anova, ModelVariant::AnovaPlus];

    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Independent => "independent",
            ModelVariant::MetaRegression => "meta-regression",
            ModelVariant::Anova => "anova",
            ModelVariant::AnovaPlus => "anova-plus",
        }
    }

    pub fn is_anova(self) -> bool {
        matches!(self, ModelVariant::Anova | ModelVariant::AnovaPlus)
    }

    pub fn requires_connected_network(self) -> bool {
        self.is_anova()
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.as_str() {
            "independent" | "model1" | "1" => Ok(ModelVariant::Independent),
            "metaregression" | "model2" | "2" => Ok(ModelVariant::MetaRegression),
            "anova" | "model3" | "3" => Ok(ModelVariant::Anova),
            "anovaplus" | "model4" | "4" => Ok(ModelVariant::AnovaPlus),
            _ => Err(ModelError::Config(format!("unknown model variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovarianceStructure {
    /// Unstructured 4×4 over (loc₀, loc₁, scale₀, scale₁).
    Full4,
    /// Independent 2×2 location and 2×2 scale blocks.
    BlockDiag22,
    /// Location effects only.
    Reduced2,
}

impl CovarianceStructure {
    pub const ALL: [CovarianceStructure; 3] =
        [CovarianceStructure::Full4, CovarianceStructure::BlockDiag22, CovarianceStructure::Reduced2];

    pub fn label(self) -> &'static str {
        match self {
            CovarianceStructure::Full4 => "full4",
            CovarianceStructure::BlockDiag22 => "blockdiag22",
            CovarianceStructure::Reduced2 => "reduced2",
        }
    }
}

impl fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CovarianceStructure {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.as_str() {
            "full4" | "full" => Ok(CovarianceStructure::Full4),
            "blockdiag22" | "blockdiag" | "block" => Ok(CovarianceStructure::BlockDiag22),
            "reduced2" | "reduced" => Ok(CovarianceStructure::Reduced2),
            _ => Err(ModelError::Config(format!("unknown covariance structure `{s}`"))),
        }
    }
}

/// Where the Wishart prior sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WishartConvention {
    /// Wishart(I, ν) on the precision Σ⁻¹, i.e. inverse-Wishart on Σ.
    /// Conjugate, so covariances are Gibbs-updated.
    #[default]
    Precision,
    /// Wishart(I, ν) on Σ itself; covariances are Metropolis-updated.
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Variance of the normal prior on m and s.
    pub fixed_effect_variance: f64,
    /// Upper bound of the uniform prior on τm and τs.
    pub tau_upper: f64,
    /// Upper bound of the uniform prior on exp(m_a).
    pub hyper_location_upper: f64,
    /// Upper bound of the uniform prior on σ_a.
    pub hyper_scale_upper: f64,
    /// Wishart degrees of freedom; the matrix dimension when absent.
    pub wishart_df: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            fixed_effect_variance: 1000.0,
            tau_upper: 5.0,
            hyper_location_upper: 5.0,
            hyper_scale_upper: 20.0,
            wishart_df: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    #[serde(default = "default_cov")]
    pub cov: CovarianceStructure,
    #[serde(default)]
    pub priors: PriorConfig,
    /// AnovaPlus only: give τs the same hierarchical prior as τm. Experimental.
    #[serde(default)]
    pub hierarchical_scale_variances: bool,
    #[serde(default)]
    pub wishart_convention: WishartConvention,
}

fn default_cov() -> CovarianceStructure {
    CovarianceStructure::Full4
}

impl ModelSpec {
    pub fn new(variant: ModelVariant, cov: CovarianceStructure) -> Self {
        ModelSpec {
            variant,
            cov,
            priors: PriorConfig::default(),
            hierarchical_scale_variances: false,
            wishart_convention: WishartConvention::Precision,
        }
    }

    pub fn with_wishart(mut self, w: WishartConvention) -> Self {
        self.wishart_convention = w;
        self
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let p = &self.priors;
        let positive = [
            ("fixed_effect_variance", p.fixed_effect_variance),
            ("tau_upper", p.tau_upper),
            ("hyper_location_upper", p.hyper_location_upper),
            ("hyper_scale_upper", p.hyper_scale_upper),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Config(format!("priors.{name} must be positive, got {v}")));
            }
        }
        if let Some(df) = p.wishart_df {
            if !(df.is_finite() && df > 0.0) {
                return Err(ModelError::Config(format!("priors.wishart_df must be positive, got {df}")));
            }
        }
        if self.hierarchical_scale_variances && self.variant != ModelVariant::AnovaPlus {
            return Err(ModelError::Config("hierarchical_scale_variances applies to anova-plus only".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Wishart degrees of freedom for a block of the given dimension.
    pub fn wishart_df(&self, dim: usize) -> f64 {
        self.priors.wishart_df.unwrap_or(dim as f64)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.variant, self.cov)?;
        if self.wishart_convention == WishartConvention::Covariance {
            f.write_str("/wishart-on-covariance")?;
        }
        if self.hierarchical_scale_variances {
            f.write_str("/hier-scale")?;
        }
        Ok(())
    }
}
