use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    accuracy, check_draws, check_threshold, draw_params, reference_threshold, test_index, Credible, SummaryError,
    SummaryOptions,
};
use crate::dataset::Threshold;
use crate::inference::PosteriorSamples;
use crate::likelihood::positive_prob;
use crate::math::logit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRanking {
    pub test_id: String,
    pub threshold: Threshold,
    /// Probability of rank 1, 2, …, K by Youden index (rank 1 is best).
    pub rank_probabilities: Vec<f64>,
    pub median_rank: f64,
    pub youden: Credible,
}

/// Differences "first minus second" between two tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDifference {
    pub first: String,
    pub second: String,
    pub sensitivity: Credible,
    pub specificity: Credible,
    pub log_dor: Credible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub tests: Vec<TestRanking>,
    pub pairwise: Vec<PairwiseDifference>,
    pub n_draws: usize,
}

/// Ranks `tests` by Youden index in every retained draw. Thresholds default
/// to each test's C*. Ties are broken by the order of `tests`.
pub fn rankings(
    samples: &PosteriorSamples,
    tests: &[&str],
    thresholds: &BTreeMap<String, Threshold>,
) -> Result<RankingReport, SummaryError> {
    rankings_with(samples, tests, thresholds, &SummaryOptions::default())
}

pub fn rankings_with(
    samples: &PosteriorSamples,
    tests: &[&str],
    thresholds: &BTreeMap<String, Threshold>,
    opts: &SummaryOptions,
) -> Result<RankingReport, SummaryError> {
    if tests.len() < 2 {
        return Err(SummaryError::TooFewTests);
    }
    check_draws(samples)?;
    let l = &samples.layout;
    let kk = tests.len();
    // per test: (fpf, sens) per draw
    let mut acc: Vec<Vec<(f64, f64)>> = Vec::with_capacity(kk);
    let mut used = Vec::with_capacity(kk);
    for id in tests {
        let k = test_index(l, id)?;
        let info = &l.tests[k];
        let t = thresholds.get(*id).copied().unwrap_or_else(|| reference_threshold(info));
        check_threshold(info, t)?;
        let params = draw_params(samples, k, opts);
        acc.push(
            params
                .iter()
                .map(|p| {
                    let f = positive_prob(&accuracy(info, p[0]), t).expect("finite parameters");
                    let s = positive_prob(&accuracy(info, p[1]), t).expect("finite parameters");
                    (f, s)
                })
                .collect(),
        );
        used.push(t);
    }
    let n = samples.n_draws();
    let mut counts = vec![vec![0u64; kk]; kk];
    let mut ranks: Vec<Vec<f64>> = vec![Vec::with_capacity(n); kk];
    let mut order: Vec<usize> = (0..kk).collect();
    for d in 0..n {
        let youden = |i: usize| acc[i][d].1 - acc[i][d].0;
        order.sort_by(|&a, &b| youden(b).total_cmp(&youden(a)).then(a.cmp(&b)));
        for (r, &i) in order.iter().enumerate() {
            counts[i][r] += 1;
            ranks[i].push((r + 1) as f64);
        }
    }
    let ranking = (0..kk)
        .map(|i| {
            let mut y: Vec<f64> = acc[i].iter().map(|(f, s)| s - f).collect();
            TestRanking {
                test_id: tests[i].to_string(),
                threshold: used[i],
                rank_probabilities: counts[i].iter().map(|&c| c as f64 / n as f64).collect(),
                median_rank: Credible::from_draws(&mut ranks[i]).median,
                youden: Credible::from_draws(&mut y),
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for a in 0..kk {
        for b in a + 1..kk {
            let diff = |f: &dyn Fn((f64, f64)) -> f64| -> Credible {
                let mut x: Vec<f64> = (0..n).map(|d| f(acc[a][d]) - f(acc[b][d])).collect();
                Credible::from_draws(&mut x)
            };
            pairwise.push(PairwiseDifference {
                first: tests[a].to_string(),
                second: tests[b].to_string(),
                sensitivity: diff(&|(_, s)| s),
                specificity: diff(&|(f, _)| 1.0 - f),
                log_dor: diff(&|(f, s)| logit(s) - logit(f)),
            });
        }
    }
    Ok(RankingReport { tests: ranking, pairwise, n_draws: n })
}

#[cfg(test)]
mod tests {
    use super::super::testing::samples;
    use super::*;
    use crate::model::{CovarianceStructure, ModelVariant};

    #[test]
    fn dominance() {
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, 200, |_, v, l| {
            // B: sens 0.9, spec 0.9; C at C*: sens = fpf = 0.5
            v[l.m[0][1]] = logit(0.9);
            v[l.m[0][0]] = logit(0.1);
        });
        let r = rankings(&s, &["C", "B"], &BTreeMap::new()).unwrap();
        assert_eq!(r.tests[1].rank_probabilities, vec![1.0, 0.0]);
        assert_eq!(r.tests[0].rank_probabilities, vec![0.0, 1.0]);
        assert_eq!(r.tests[1].median_rank, 1.0);
        let p = &r.pairwise[0];
        assert!((p.sensitivity.median + 0.4).abs() < 1e-12);
        assert!((p.specificity.median + 0.4).abs() < 1e-12);
        assert!((p.log_dor.median + 2.0 * logit(0.9)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tests_split_rank_one() {
        let n = 4000;
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, n, |t, v, l| {
            // exchangeable, varied draws
            let a = ((t as f64 * 0.754_877_666).fract() - 0.5) * 2.0;
            let b = ((t as f64 * 0.569_840_291).fract() - 0.5) * 2.0;
            v[l.m[0][1]] = a;
            v[l.m[1][1]] = b;
        });
        let r = rankings(&s, &["B", "C"], &BTreeMap::new()).unwrap();
        let p1 = r.tests[0].rank_probabilities[0];
        assert!((p1 - 0.5).abs() < 3.0 / (n as f64).sqrt(), "{p1}");
        for t in &r.tests {
            assert!((t.rank_probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_two_tests() {
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, 200, |_, _, _| {});
        assert!(matches!(rankings(&s, &["B"], &BTreeMap::new()), Err(SummaryError::TooFewTests)));
        let mut th = BTreeMap::new();
        th.insert("C".to_string(), Threshold::Value(5.0));
        let r = rankings(&s, &["B", "C"], &th).unwrap();
        assert_eq!(r.tests[1].threshold, Threshold::Value(5.0));
    }
}
