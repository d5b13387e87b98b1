//! Exact multi-threshold likelihood.
//!
//! Counts of one series are a chain of binomials: x₁ ~ Bin(N, p₁) and
//! x_t ~ Bin(x_{t−1}, p_t / p_{t−1}). Probabilities come from a logistic
//! model centred at the reference threshold C*:
//!
//! ```text
//! logit p_t = μ + (z / σ) · ln(C* / C_t)
//! ```
//!
//! Everything is evaluated on the log scale from the logits so that
//! adjacent thresholds with ratios within 1e−15 of one stay finite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dataset::{Dataset, SeriesKey, Threshold, ThresholdSeries};
use crate::math::{log1mexp, log_expit, weighted_log};

#[derive(Debug, Error, PartialEq)]
pub enum LikelihoodError {
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("no accuracy parameters for series {0}")]
    MissingParams(SeriesKey),
}

/// Latent location and scale of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    pub location: f64,
    pub log_scale: f64,
    pub is_continuous: bool,
    pub c_star: f64,
}

impl AccuracyParams {
    pub fn binary(location: f64) -> Self {
        AccuracyParams { location, log_scale: 0.0, is_continuous: false, c_star: 1.0 }
    }

    pub fn continuous(location: f64, log_scale: f64, c_star: f64) -> Self {
        AccuracyParams { location, log_scale, is_continuous: true, c_star }
    }
}

/// ln(C*/C), the centred covariate; zero for binary tests.
pub fn log_threshold_ratio(a: &AccuracyParams, threshold: Threshold) -> Result<f64, LikelihoodError> {
    match (a.is_continuous, threshold) {
        (false, Threshold::NotApplicable) => Ok(0.0),
        (true, Threshold::Value(c)) => {
            if !(c.is_finite() && c > 0.0) {
                return Err(LikelihoodError::NonFinite(format!("threshold {c}")));
            }
            if !(a.c_star.is_finite() && a.c_star > 0.0) {
                return Err(LikelihoodError::NonFinite(format!("reference threshold {}", a.c_star)));
            }
            Ok((a.c_star / c).ln())
        }
        (false, Threshold::Value(c)) => {
            Err(LikelihoodError::Mismatch(format!("binary test given numeric threshold {c}")))
        }
        (true, Threshold::NotApplicable) => {
            Err(LikelihoodError::Mismatch("continuous test given the NA threshold".into()))
        }
    }
}

pub fn positive_logit(a: &AccuracyParams, threshold: Threshold) -> Result<f64, LikelihoodError> {
    if !a.location.is_finite() {
        return Err(LikelihoodError::NonFinite(format!("location {}", a.location)));
    }
    let r = log_threshold_ratio(a, threshold)?;
    if !a.is_continuous {
        return Ok(a.location);
    }
    if !a.log_scale.is_finite() {
        return Err(LikelihoodError::NonFinite(format!("log scale {}", a.log_scale)));
    }
    Ok(a.location + r * (-a.log_scale).exp())
}

pub fn positive_prob(a: &AccuracyParams, threshold: Threshold) -> Result<f64, LikelihoodError> {
    positive_logit(a, threshold).map(crate::math::expit)
}

/// Chain log-density from per-threshold logits. `ln_coef` is the sum of the
/// log binomial coefficients, which does not depend on the parameters.
pub fn chain_loglik_from_logits(group_size: u64, positives: &[u64], logits: &[f64], ln_coef: f64) -> f64 {
    debug_assert_eq!(positives.len(), logits.len());
    chain_loglik_with(group_size, positives, ln_coef, |t| logits[t])
}

/// As [`chain_loglik_from_logits`], with logits produced on demand.
pub fn chain_loglik_with(group_size: u64, positives: &[u64], ln_coef: f64, logit: impl Fn(usize) -> f64) -> f64 {
    let x1 = positives[0];
    if x1 > group_size {
        return f64::NEG_INFINITY;
    }
    let eta = logit(0);
    let mut total = ln_coef + weighted_log(x1, log_expit(eta)) + weighted_log(group_size - x1, log_expit(-eta));
    let mut prev_lp = log_expit(eta);
    for t in 1..positives.len() {
        let (xp, x) = (positives[t - 1], positives[t]);
        if x > xp {
            return f64::NEG_INFINITY;
        }
        let lp = log_expit(logit(t));
        if xp > 0 {
            let ln_r = (lp - prev_lp).min(0.0);
            total += weighted_log(x, ln_r) + weighted_log(xp - x, log1mexp(ln_r));
        }
        prev_lp = lp;
    }
    total
}

/// Σ_t ln C(x_{t−1}, x_t) with x₀ = N, or `None` for impossible counts.
pub fn chain_log_coefficients(group_size: u64, positives: &[u64]) -> Option<f64> {
    let mut prev = group_size;
    let mut s = 0.0;
    for &x in positives {
        if x > prev {
            return None;
        }
        s += ln_binomial(prev, x);
        prev = x;
    }
    Some(s)
}

fn check_probs(series: &ThresholdSeries, probs: &[f64]) -> Result<(), LikelihoodError> {
    if probs.len() != series.len() {
        return Err(LikelihoodError::Mismatch(format!(
            "{} probabilities for {} thresholds of {}",
            probs.len(),
            series.len(),
            series.key()
        )));
    }
    if let Some(p) = probs.iter().find(|p| p.is_nan()) {
        return Err(LikelihoodError::NonFinite(format!("probability {p}")));
    }
    Ok(())
}

/// Conditional-binomial chain log-density of a series at the given
/// positive-test probabilities. Impossible data give −∞, not an error.
pub fn chain_loglik(series: &ThresholdSeries, probs: &[f64]) -> Result<f64, LikelihoodError> {
    check_probs(series, probs)?;
    let Some(ln_coef) = chain_log_coefficients(series.group_size, &series.positives) else {
        return Ok(f64::NEG_INFINITY);
    };
    let x = &series.positives;
    let lp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let mut total = ln_coef + weighted_log(x[0], lp[0]) + weighted_log(series.group_size - x[0], (-probs[0]).ln_1p());
    for t in 1..x.len() {
        if x[t - 1] > 0 {
            let ln_r = (lp[t] - lp[t - 1]).min(0.0);
            total += weighted_log(x[t], ln_r) + weighted_log(x[t - 1] - x[t], log1mexp(ln_r));
        }
    }
    Ok(total)
}

/// Independent check of [`chain_loglik`]: the multinomial density of the
/// interval counts (N−x₁, x₁−x₂, …, x_T) with cells (1−p₁, p₁−p₂, …, p_T),
/// computed directly from linear differences and the gamma function.
pub fn multinomial_oracle(series: &ThresholdSeries, probs: &[f64]) -> Result<f64, LikelihoodError> {
    check_probs(series, probs)?;
    let n = series.group_size;
    let x = &series.positives;
    let t_len = x.len();
    let mut counts = Vec::with_capacity(t_len + 1);
    let mut cells = Vec::with_capacity(t_len + 1);
    let mut prev_x = n as i64;
    let mut prev_p = 1.0;
    for t in 0..t_len {
        counts.push(prev_x - x[t] as i64);
        cells.push(prev_p - probs[t]);
        prev_x = x[t] as i64;
        prev_p = probs[t];
    }
    counts.push(prev_x);
    cells.push(prev_p);
    if counts.iter().any(|&c| c < 0) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut total = ln_gamma(n as f64 + 1.0);
    for (&c, &pi) in counts.iter().zip(&cells) {
        total -= ln_gamma(c as f64 + 1.0);
        if c > 0 {
            if pi <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += c as f64 * pi.ln();
        }
    }
    Ok(total)
}

/// Log-likelihood of the saturated model, which reproduces each series'
/// empirical conditional proportions exactly.
pub fn saturated_loglik(series: &ThresholdSeries) -> f64 {
    let mut prev = series.group_size;
    let mut total = 0.0;
    for &x in &series.positives {
        if prev > 0 && x <= prev {
            let p = x as f64 / prev as f64;
            total += ln_binomial(prev, x) + weighted_log(x, p.ln()) + weighted_log(prev - x, (1.0 - p).ln());
        }
        prev = x;
    }
    total
}

/// Per-threshold logits of a series under the given parameters.
pub fn series_logits(series: &ThresholdSeries, a: &AccuracyParams) -> Result<Vec<f64>, LikelihoodError> {
    series.thresholds.iter().map(|&t| positive_logit(a, t)).collect()
}

/// Sum of chain log-likelihoods over every series of the dataset, in the
/// dataset's sorted series order.
pub fn dataset_loglik(d: &Dataset, params: &BTreeMap<SeriesKey, AccuracyParams>) -> Result<f64, LikelihoodError> {
    let mut total = 0.0;
    for s in d.series() {
        let key = s.key();
        let a = params.get(&key).ok_or_else(|| LikelihoodError::MissingParams(key.clone()))?;
        let logits = series_logits(s, a)?;
        let Some(ln_coef) = chain_log_coefficients(s.group_size, &s.positives) else {
            return Ok(f64::NEG_INFINITY);
        };
        total += chain_loglik_from_logits(s.group_size, &s.positives, &logits, ln_coef);
    }
    Ok(total)
}

/// Gradient of the chain log-density with respect to each threshold's logit.
///
/// In multinomial form ℓ = Σ_c n_c ln π_c with π_{t} = p_t − p_{t+1}
/// (p₀ = 1, p_{T+1} = 0), so ∂ℓ/∂η_t = p_t(1−p_t)·(n_t/π_t − n_{t−1}/π_{t−1}).
pub fn chain_logit_gradient(group_size: u64, positives: &[u64], logits: &[f64]) -> Vec<f64> {
    let t_len = positives.len();
    let lp: Vec<f64> = logits.iter().map(|&e| log_expit(e)).collect();
    // ln π for cells 0..=T
    let mut ln_cell = Vec::with_capacity(t_len + 1);
    ln_cell.push(log_expit(-logits[0]));
    for t in 0..t_len - 1 {
        ln_cell.push(lp[t] + log1mexp((lp[t + 1] - lp[t]).min(0.0)));
    }
    ln_cell.push(lp[t_len - 1]);
    let mut counts = Vec::with_capacity(t_len + 1);
    let mut prev = group_size;
    for &x in positives {
        counts.push(prev - x);
        prev = x;
    }
    counts.push(prev);
    let ratio = |c: usize| if counts[c] == 0 { 0.0 } else { counts[c] as f64 * (-ln_cell[c]).exp() };
    (0..t_len)
        .map(|t| {
            let pq = (lp[t] + log_expit(-logits[t])).exp();
            pq * (ratio(t + 1) - ratio(t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DiseaseGroup, TestDescriptor};
    use crate::math::expit;

    fn series(n: u64, x: &[u64]) -> ThresholdSeries {
        ThresholdSeries {
            study_id: "S".into(),
            test_id: "T".into(),
            group: DiseaseGroup::Diseased,
            group_size: n,
            thresholds: (0..x.len()).map(|t| Threshold::Value(1.0 + t as f64)).collect(),
            positives: x.to_vec(),
        }
    }

    #[test]
    fn centred_at_reference_threshold() {
        let a = AccuracyParams::continuous(0.0, 0.7, 20.0);
        assert_eq!(positive_prob(&a, Threshold::Value(20.0)).unwrap(), 0.5);
    }

    #[test]
    fn one_unit_of_log_threshold_above_reference() {
        let a = AccuracyParams::continuous(0.0, 0.0, 20.0);
        let p = positive_prob(&a, Threshold::Value(20.0 * std::f64::consts::E)).unwrap();
        assert!((p - 0.268_941_421_369_995).abs() < 1e-12, "{p}");
    }

    #[test]
    fn binary_ignores_scale() {
        let mut a = AccuracyParams::binary(crate::math::logit(0.61));
        for ls in [-3.0, 0.0, 4.0] {
            a.log_scale = ls;
            assert!((positive_prob(&a, Threshold::NotApplicable).unwrap() - 0.61).abs() < 1e-14);
        }
    }

    #[test]
    fn threshold_kind_mismatch_and_non_finite_are_errors() {
        let a = AccuracyParams::binary(0.0);
        assert!(positive_prob(&a, Threshold::Value(3.0)).is_err());
        let c = AccuracyParams::continuous(f64::NAN, 0.0, 1.0);
        assert!(positive_prob(&c, Threshold::Value(3.0)).is_err());
    }

    #[test]
    fn single_threshold_is_a_binomial() {
        let s = series(10, &[6]);
        let want = ln_binomial(10, 6) + 10.0 * 0.5f64.ln();
        assert!((chain_loglik(&s, &[0.5]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn two_thresholds_equal_interval_multinomial() {
        let s = series(5, &[3, 1]);
        let probs = [0.6, 0.3];
        let chain = chain_loglik(&s, &probs).unwrap();
        // interval counts (2, 2, 1), cells (0.4, 0.3, 0.3): 5!/(2!2!1!) = 30
        let by_hand = 30f64.ln() + 2.0 * 0.4f64.ln() + 2.0 * 0.3f64.ln() + 0.3f64.ln();
        assert!((chain - by_hand).abs() < 1e-12, "{chain} vs {by_hand}");
        assert!((multinomial_oracle(&s, &probs).unwrap() - by_hand).abs() < 1e-12);
    }

    #[test]
    fn increasing_counts_are_impossible() {
        let s = series(5, &[2, 3]);
        assert_eq!(chain_loglik(&s, &[0.6, 0.3]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(multinomial_oracle(&s, &[0.6, 0.3]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_previous_count_contributes_nothing() {
        let s = series(8, &[0, 0, 0]);
        let probs = [0.3, 0.2, 0.1];
        let want = 8.0 * 0.7f64.ln();
        assert!((chain_loglik(&s, &probs).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nan_probability_is_an_error() {
        assert!(chain_loglik(&series(5, &[3]), &[f64::NAN]).is_err());
        assert!(chain_loglik(&series(5, &[3]), &[0.2, 0.1]).is_err());
    }

    #[test]
    fn near_one_first_probability_stays_finite() {
        let s = series(12, &[12, 7, 2]);
        let probs = [1.0 - 1e-12, 0.6, 0.1];
        let chain = chain_loglik(&s, &probs).unwrap();
        let oracle = multinomial_oracle(&s, &probs).unwrap();
        assert!(chain.is_finite());
        assert!((chain - oracle).abs() < 1e-10, "{chain} vs {oracle}");
    }

    #[test]
    fn extreme_probabilities_finite() {
        for p in [1e-12, 1.0 - 1e-12] {
            for x in [[0u64, 0], [3, 0], [3, 3], [5, 5]] {
                let s = series(5, &x);
                let v = chain_loglik(&s, &[p, p * (1.0 - 1e-12)]).unwrap();
                assert!(v.is_finite(), "p={p} x={x:?}");
            }
        }
    }

    #[test]
    fn logit_kernel_matches_probability_form() {
        let s = series(20, &[15, 9, 9, 2]);
        let logits = [1.5, 0.2, -0.1, -2.0];
        let probs: Vec<f64> = logits.iter().map(|&e| expit(e)).collect();
        let ln_coef = chain_log_coefficients(20, &s.positives).unwrap();
        let a = chain_loglik_from_logits(20, &s.positives, &logits, ln_coef);
        let b = chain_loglik(&s, &probs).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn saturated_point_has_zero_deviance() {
        let s = series(10, &[6]);
        let sat = saturated_loglik(&s);
        assert!((chain_loglik(&s, &[0.6]).unwrap() - sat).abs() < 1e-12);
        let deviance = -2.0 * (chain_loglik(&s, &[0.5]).unwrap() - sat);
        assert!((deviance - 0.402_710_7).abs() < 1e-6, "{deviance}");
    }

    #[test]
    fn saturated_multi_threshold_matches_empirical_conditionals() {
        let s = series(10, &[6, 3, 0, 0]);
        let probs = [0.6, 0.3, 1e-300, 1e-301];
        let fit = chain_loglik(&s, &probs).unwrap();
        assert!((fit - saturated_loglik(&s)).abs() < 1e-9);
    }

    #[test]
    fn dataset_loglik_empty_and_additive() {
        let d = Dataset::empty();
        assert_eq!(dataset_loglik(&d, &BTreeMap::new()).unwrap(), 0.0);

        let mk = |g, x| ThresholdSeries {
            study_id: "S1".into(),
            test_id: "B".into(),
            group: g,
            group_size: 10,
            thresholds: vec![Threshold::NotApplicable],
            positives: vec![x],
        };
        let d = Dataset::new(
            vec![TestDescriptor::binary("B")],
            vec![mk(DiseaseGroup::Diseased, 7), mk(DiseaseGroup::NonDiseased, 2)],
        )
        .unwrap();
        let mut params = BTreeMap::new();
        params.insert(d.series()[0].key(), AccuracyParams::binary(-1.0));
        assert!(matches!(dataset_loglik(&d, &params), Err(LikelihoodError::MissingParams(_))));
        params.insert(d.series()[1].key(), AccuracyParams::binary(0.8));
        let total = dataset_loglik(&d, &params).unwrap();
        let parts: f64 = d
            .series()
            .iter()
            .map(|s| chain_loglik(s, &[expit(params[&s.key()].location)]).unwrap())
            .sum();
        assert!((total - parts).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = [17u64, 11, 11, 4, 0];
        let logits = [1.1, 0.3, 0.25, -1.2, -2.5];
        let ln_coef = chain_log_coefficients(25, &x).unwrap();
        let g = chain_logit_gradient(25, &x, &logits);
        let h = 1e-5;
        for t in 0..x.len() {
            let mut up = logits;
            let mut dn = logits;
            up[t] += h;
            dn[t] -= h;
            let fd = (chain_loglik_from_logits(25, &x, &up, ln_coef) - chain_loglik_from_logits(25, &x, &dn, ln_coef)) / (2.0 * h);
            assert!((fd - g[t]).abs() <= 1e-4 * fd.abs().max(1e-2), "t={t}: {fd} vs {}", g[t]);
        }
    }
}
