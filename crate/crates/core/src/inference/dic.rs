//! Residual deviance and the deviance information criterion with the
//! variance-based effective number of parameters pV = Var(D)/2.

use serde::{Deserialize, Serialize};

use super::{effective_sample_size, InferenceError, PosteriorSamples};
use crate::dataset::Dataset;
use crate::math::{mean, variance};
use crate::model::{Model, ModelError, ModelSpec, ParameterState};

const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub mean_residual_deviance: f64,
    pub p_v: f64,
    pub dic: f64,
    pub n_draws: usize,
    /// Monte Carlo standard error of the mean residual deviance.
    pub mean_deviance_se: f64,
    /// Monte Carlo standard error of DIC, by the delta method on
    /// D + (D − D̄)²/2; dominated by the error in pV.
    pub dic_se: f64,
}

/// −2 Σ (ℓ − ℓ_sat) over all series of `d` at `state`.
pub fn residual_deviance(d: &Dataset, state: &ParameterState, spec: &ModelSpec) -> Result<f64, ModelError> {
    if state.layout().spec != *spec {
        return Err(ModelError::LayoutMismatch("state was laid out for a different spec".into()));
    }
    let model = Model::with_layout(d, state.layout().clone())?;
    Ok(model.residual_deviance(state.values()))
}

/// DIC from the residual deviance recorded with each retained draw.
pub fn dic(samples: &PosteriorSamples) -> Result<DicReport, InferenceError> {
    let dev = samples.pooled_deviance();
    if dev.len() < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws(dev.len()));
    }
    let traces: Vec<Vec<f64>> = samples.chains.iter().map(|c| c.deviance.clone()).collect();
    let ess = effective_sample_size(&traces).max(1.0);
    let d_bar = mean(&dev);
    let var = variance(&dev);
    let p_v = var / 2.0;
    let influence: Vec<Vec<f64>> =
        traces.iter().map(|c| c.iter().map(|&x| x + 0.5 * (x - d_bar).powi(2)).collect()).collect();
    let pooled: Vec<f64> = influence.concat();
    let dic_se = (variance(&pooled) / effective_sample_size(&influence).max(1.0)).sqrt();
    Ok(DicReport {
        mean_residual_deviance: d_bar,
        p_v,
        dic: d_bar + p_v,
        n_draws: dev.len(),
        mean_deviance_se: (var / ess).sqrt(),
        dic_se,
    })
}
