//! Posterior summaries: pooled accuracy at thresholds, accuracy-versus-threshold
//! curves, summary ROC curves with credible ellipses, and test rankings.
//!
//! Population summaries evaluate each draw at the fixed-effects level. The
//! predictive mode instead draws fresh random effects for a new study per
//! draw, so intervals include between-study heterogeneity.

mod export;
mod ranking;
mod sroc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{summary_rows, threshold_curve_svg, sroc_svg, write_summary_csv, SummaryReport, SummaryRow};
pub use ranking::{rankings, rankings_with, PairwiseDifference, RankingReport, TestRanking};
pub use sroc::{sroc_curve, sroc_curve_with, CredibleEllipse, SrocCurve, SrocPoint, ELLIPSE_RADIUS_SQ};

use crate::dataset::Threshold;
use crate::inference::PosteriorSamples;
use crate::likelihood::{positive_prob, AccuracyParams};
use crate::math::quantile_sorted;
use crate::model::{draw_random_effects, Layout, ParameterState, TestInfo};

pub const LOWER_Q: f64 = 0.025;
pub const UPPER_Q: f64 = 0.975;
pub const DEFAULT_GRID_SIZE: usize = 100;
const MIN_DRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("unknown test `{0}`")]
    UnknownTest(String),
    #[error("test `{test}`: {reason}")]
    Threshold { test: String, reason: String },
    #[error("test `{0}` is binary; threshold curves need a continuous test")]
    BinaryTest(String),
    #[error("rankings need at least two tests")]
    TooFewTests,
    #[error("{0} retained draws; at least 100 are needed")]
    TooFewDraws(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Posterior median and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Credible {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Credible {
    /// Sorts `x` in place and reads off the quantiles.
    pub fn from_draws(x: &mut [f64]) -> Credible {
        x.sort_by(f64::total_cmp);
        Credible {
            median: quantile_sorted(x, 0.5),
            lower: quantile_sorted(x, LOWER_Q),
            upper: quantile_sorted(x, UPPER_Q),
        }
    }

    /// 1 − x, with the bounds exchanged.
    pub fn complement(self) -> Credible {
        Credible { median: 1.0 - self.median, lower: 1.0 - self.upper, upper: 1.0 - self.lower }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub test_id: String,
    pub threshold: Threshold,
    pub sensitivity: Credible,
    pub fpf: Credible,
    /// Outside the range of thresholds observed for the test.
    pub extrapolated: bool,
}

impl AccuracySummary {
    pub fn specificity(&self) -> Credible {
        self.fpf.complement()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SummaryMode {
    #[default]
    Population,
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub mode: SummaryMode,
    /// Seeds the random-effects draws of the predictive mode.
    pub seed: u64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { mode: SummaryMode::Population, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub test_id: String,
    pub points: Vec<AccuracySummary>,
}

impl ThresholdCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.threshold.value()).collect()
    }
}

/// Location and log-scale of both groups for one test in one draw.
pub(crate) type DrawParams = [(f64, f64); 2];

pub(crate) fn test_index(layout: &Layout, test_id: &str) -> Result<usize, SummaryError> {
    layout.test_index(test_id).ok_or_else(|| SummaryError::UnknownTest(test_id.to_string()))
}

pub(crate) fn check_draws(samples: &PosteriorSamples) -> Result<(), SummaryError> {
    let n = samples.n_draws();
    if n < MIN_DRAWS {
        return Err(SummaryError::TooFewDraws(n));
    }
    Ok(())
}

/// Per-draw parameters of test `k`, in draw order.
pub(crate) fn draw_params(samples: &PosteriorSamples, k: usize, opts: &SummaryOptions) -> Vec<DrawParams> {
    let l = &samples.layout;
    match opts.mode {
        SummaryMode::Population => samples
            .iter_draws()
            .map(|v| {
                let ls = |j: usize| l.s[k].map_or(0.0, |s| v[s[j]]);
                [(v[l.m[k][0]], ls(0)), (v[l.m[k][1]], ls(1))]
            })
            .collect(),
        SummaryMode::Predictive => {
            // a new study shaped like the first study that reports the test
            let template = l.pairs_of_test(k).next().expect("every test has a study");
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            samples
                .iter_draws()
                .map(|v| {
                    let mut state = ParameterState::from_values(l.clone(), v.to_vec()).expect("draw length");
                    draw_random_effects(&mut state, &mut rng);
                    [state.series_params(template, 0), state.series_params(template, 1)]
                })
                .collect()
        }
    }
}

pub(crate) fn accuracy(info: &TestInfo, p: (f64, f64)) -> AccuracyParams {
    match info.c_star {
        Some(c) => AccuracyParams::continuous(p.0, p.1, c),
        None => AccuracyParams::binary(p.0),
    }
}

pub(crate) fn probs_at(info: &TestInfo, params: &[DrawParams], t: Threshold) -> [Vec<f64>; 2] {
    let one = |j: usize| -> Vec<f64> {
        params.iter().map(|p| positive_prob(&accuracy(info, p[j]), t).expect("finite parameters")).collect()
    };
    [one(0), one(1)]
}

pub(crate) fn check_threshold(info: &TestInfo, t: Threshold) -> Result<bool, SummaryError> {
    let err = |reason: &str| SummaryError::Threshold { test: info.id.clone(), reason: reason.to_string() };
    match (info.is_continuous(), t) {
        (false, Threshold::NotApplicable) => Ok(false),
        (false, Threshold::Value(_)) => Err(err("binary tests take no threshold")),
        (true, Threshold::NotApplicable) => Err(err("continuous tests need a threshold")),
        (true, Threshold::Value(c)) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(err("thresholds must be positive"));
            }
            let lo = info.min_threshold.unwrap_or(c);
            let hi = info.max_threshold.unwrap_or(c);
            Ok(c < lo || c > hi)
        }
    }
}

fn summarize(info: &TestInfo, params: &[DrawParams], t: Threshold, extrapolated: bool) -> AccuracySummary {
    let [mut fpf, mut sens] = probs_at(info, params, t);
    AccuracySummary {
        test_id: info.id.clone(),
        threshold: t,
        sensitivity: Credible::from_draws(&mut sens),
        fpf: Credible::from_draws(&mut fpf),
        extrapolated,
    }
}

/// The reference threshold C* of a continuous test, or the sentinel.
pub fn reference_threshold(info: &TestInfo) -> Threshold {
    info.c_star.map_or(Threshold::NotApplicable, Threshold::Value)
}

pub fn pooled_accuracy(samples: &PosteriorSamples, test_id: &str, threshold: Threshold) -> Result<AccuracySummary, SummaryError> {
    pooled_accuracy_with(samples, test_id, threshold, &SummaryOptions::default())
}

pub fn pooled_accuracy_with(
    samples: &PosteriorSamples,
    test_id: &str,
    threshold: Threshold,
    opts: &SummaryOptions,
) -> Result<AccuracySummary, SummaryError> {
    check_draws(samples)?;
    let k = test_index(&samples.layout, test_id)?;
    let info = &samples.layout.tests[k];
    let extrapolated = check_threshold(info, threshold)?;
    let params = draw_params(samples, k, opts);
    Ok(summarize(info, &params, threshold, extrapolated))
}

/// Log-spaced grid from the smallest to the largest observed threshold, with
/// C* added when it falls inside.
pub fn threshold_grid(info: &TestInfo, grid_size: usize) -> Vec<f64> {
    let (Some(lo), Some(hi)) = (info.min_threshold, info.max_threshold) else {
        return Vec::new();
    };
    let n = grid_size.max(2);
    let mut grid: Vec<f64> = if lo == hi {
        vec![lo]
    } else {
        let (a, b) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
            })
            .collect()
    };
    if let Some(c) = info.c_star {
        if c >= lo && c <= hi && !grid.contains(&c) {
            grid.push(c);
            grid.sort_by(f64::total_cmp);
        }
    }
    grid
}

pub fn threshold_curve(samples: &PosteriorSamples, test_id: &str, grid_size: usize) -> Result<ThresholdCurve, SummaryError> {
    threshold_curve_with(samples, test_id, grid_size, &SummaryOptions::default())
}

pub fn threshold_curve_with(
    samples: &PosteriorSamples,
    test_id: &str,
    grid_size: usize,
    opts: &SummaryOptions,
) -> Result<ThresholdCurve, SummaryError> {
    check_draws(samples)?;
    let k = test_index(&samples.layout, test_id)?;
    let info = &samples.layout.tests[k];
    if !info.is_continuous() {
        return Err(SummaryError::BinaryTest(test_id.to_string()));
    }
    let params = draw_params(samples, k, opts);
    let points = threshold_grid(info, grid_size)
        .into_iter()
        .map(|c| summarize(info, &params, Threshold::Value(c), false))
        .collect();
    Ok(ThresholdCurve { test_id: test_id.to_string(), points })
}

/// Pooled accuracy of every test at its reference threshold.
pub fn reference_summaries(samples: &PosteriorSamples, opts: &SummaryOptions) -> Result<Vec<AccuracySummary>, SummaryError> {
    samples
        .layout
        .tests
        .iter()
        .map(|t| pooled_accuracy_with(samples, &t.id, reference_threshold(t), opts))
        .collect()
}
