//! Adaptive Metropolis-within-Gibbs sampling, convergence diagnostics and
//! deviance-based model comparison.

mod diagnostics;
mod dic;
mod sampler;
mod samples;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{diagnostics, AcceptRate, effective_sample_size, split_rhat, CoordDiagnostics, FitDiagnostics, RHAT_FLAG};
pub use dic::{dic, residual_deviance, DicReport};
pub use sampler::{resume_mcmc, run_mcmc, run_mcmc_with_model, MoveKind, MoveStats};
pub use samples::{index_path, read_container, write_container, ChainDraws, ContainerIndex, PosteriorSamples};

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("{0} retained draws; at least 100 are needed")]
    TooFewDraws(usize),
    #[error("posterior container: {0}")]
    Container(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which parts of the state stay at their initial values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldSet {
    pub fixed_effects: bool,
    pub random_effects: bool,
    pub variance_components: bool,
    /// Individual coordinates, by layout name.
    pub coords: Vec<String>,
}

impl HoldSet {
    pub fn is_empty(&self) -> bool {
        !self.fixed_effects && !self.random_effects && !self.variance_components && self.coords.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    /// Retained draws per chain; keep_iters × thin iterations run after warmup.
    pub keep_iters: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance target of one-dimensional proposals.
    pub target_accept: f64,
    /// Acceptance target of multivariate proposals.
    pub target_accept_block: f64,
    /// Iterations per adaptation batch.
    pub adapt_window: usize,
    /// Sample from the prior: the likelihood is switched off.
    pub prior_only: bool,
    pub hold: HoldSet,
    /// Starting values by coordinate name, applied to every chain after the
    /// default initialization.
    pub init: BTreeMap<String, f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 3,
            warmup_iters: 10_000,
            keep_iters: 20_000,
            thin: 1,
            seed: 1,
            target_accept: 0.44,
            target_accept_block: 0.234,
            adapt_window: 50,
            prior_only: false,
            hold: HoldSet::default(),
            init: BTreeMap::new(),
        }
    }
}

impl SamplerConfig {
    pub fn quick(seed: u64) -> Self {
        SamplerConfig { warmup_iters: 1000, keep_iters: 1000, seed, ..SamplerConfig::default() }
    }

    pub fn check(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::Config(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be positive");
        }
        if self.warmup_iters == 0 || self.keep_iters == 0 {
            return bad("warmup_iters and keep_iters must be positive");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be positive");
        }
        for (name, t) in [("target_accept", self.target_accept), ("target_accept_block", self.target_accept_block)] {
            if !(t > 0.0 && t < 1.0) {
                return bad(&format!("{name} must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}
