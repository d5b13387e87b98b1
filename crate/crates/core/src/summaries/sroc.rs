use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_draws, draw_params, probs_at, test_index, Credible, SummaryError, SummaryOptions};
use crate::dataset::Threshold;
use crate::inference::PosteriorSamples;
use crate::math::{chol_from_packed, expit, logit, mean};
use crate::model::Layout;

/// 95% quantile of χ² with 2 degrees of freedom.
pub const ELLIPSE_RADIUS_SQ: f64 = 5.991464547107979;
const CURVE_POINTS: usize = 100;
const ELLIPSE_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrocPoint {
    pub fpf: f64,
    pub sensitivity: Credible,
}

/// Credible region of the pooled (logit FPF, logit sensitivity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleEllipse {
    /// Posterior mean on the logit scale, (fpf, sensitivity).
    pub center: [f64; 2],
    /// Semi-axes on the logit scale, major first.
    pub axes: [f64; 2],
    /// Angle of the major axis from the logit-FPF axis, radians in (−π/2, π/2].
    pub rotation: f64,
    /// Boundary mapped to (fpf, sensitivity).
    pub boundary: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrocCurve {
    pub test_id: String,
    /// Ordered by FPF. Empty when no curve could be derived.
    pub points: Vec<SrocPoint>,
    pub ellipse: CredibleEllipse,
    /// Reason the curve is missing, if it is.
    pub flag: Option<String>,
}

/// 2 × 2 covariance of the study-level (logit FPF, logit sens) deviations for
/// test `k` in one draw.
fn location_covariance(l: &Layout, v: &[f64], k: usize) -> Option<Matrix2<f64>> {
    let block_cov = |bi: usize| {
        let b = &l.blocks[bi];
        let c = chol_from_packed(b.dim, &v[b.coords()]);
        let s = &c * c.transpose();
        Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)])
    };
    if l.spec.variant.is_anova() {
        let tm = l.tau_m[k]?;
        let mut s = l.study_location_block().map(block_cov).unwrap_or_else(Matrix2::zeros);
        s[(0, 0)] += (2.0 * v[tm[0]]).exp();
        s[(1, 1)] += (2.0 * v[tm[1]]).exp();
        Some(s)
    } else {
        l.location_block_for_test(k).map(block_cov)
    }
}

fn ellipse(points: &[[f64; 2]]) -> CredibleEllipse {
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let n = points.len() as f64;
    let mut cov = Matrix2::<f64>::zeros();
    for p in points {
        let d = [p[0] - mx, p[1] - my];
        for r in 0..2 {
            for c in 0..2 {
                cov[(r, c)] += d[r] * d[c] / (n - 1.0);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let axes = [
        (eig.eigenvalues[major].max(0.0) * ELLIPSE_RADIUS_SQ).sqrt(),
        (eig.eigenvalues[minor].max(0.0) * ELLIPSE_RADIUS_SQ).sqrt(),
    ];
    let dir = eig.eigenvectors.column(major);
    let mut rotation = dir[1].atan2(dir[0]);
    if rotation <= -std::f64::consts::FRAC_PI_2 {
        rotation += std::f64::consts::PI;
    } else if rotation > std::f64::consts::FRAC_PI_2 {
        rotation -= std::f64::consts::PI;
    }
    if cov[(0, 1)] == 0.0 {
        rotation = if axes[0] == axes[1] || major == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    }
    let (sr, cr) = rotation.sin_cos();
    let boundary = (0..=ELLIPSE_POINTS)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / ELLIPSE_POINTS as f64;
            let (a, b) = (axes[0] * t.cos(), axes[1] * t.sin());
            [expit(mx + a * cr - b * sr), expit(my + a * sr + b * cr)]
        })
        .collect();
    CredibleEllipse { center: [mx, my], axes, rotation, boundary }
}

/// Summary ROC curve with pointwise 95% bands in FPF and the credible
/// ellipse of the pooled operating point.
///
/// Each draw implies a straight line on the logit scale: for continuous
/// tests it is the curve traced as the threshold varies, for binary tests
/// the regression of logit sensitivity on logit FPF implied by the
/// random-effects covariance. Sensitivity quantiles are taken across draws
/// at each FPF of the grid. For continuous tests the grid spans the median
/// FPFs at the smallest and largest observed thresholds.
pub fn sroc_curve(samples: &PosteriorSamples, test_id: &str) -> Result<SrocCurve, SummaryError> {
    sroc_curve_with(samples, test_id, &SummaryOptions::default())
}

pub fn sroc_curve_with(samples: &PosteriorSamples, test_id: &str, opts: &SummaryOptions) -> Result<SrocCurve, SummaryError> {
    check_draws(samples)?;
    let l = &samples.layout;
    let k = test_index(l, test_id)?;
    let info = &l.tests[k];
    let params = draw_params(samples, k, opts);
    let at_ref: Vec<[f64; 2]> = params.iter().map(|p| [p[0].0, p[1].0]).collect();
    let ellipse = ellipse(&at_ref);

    // (intercept at logit fpf = 0, slope) of each draw's line
    let mut flag = None;
    let lines: Vec<(f64, f64)> = if info.is_continuous() {
        params
            .iter()
            .map(|p| {
                let slope = (p[0].1 - p[1].1).exp();
                (p[1].0 - slope * p[0].0, slope)
            })
            .collect()
    } else {
        let mut out = Vec::with_capacity(params.len());
        for (p, v) in params.iter().zip(samples.iter_draws()) {
            match location_covariance(l, v, k).filter(|s| s[(0, 0)] > 0.0) {
                Some(s) => {
                    let slope = s[(1, 0)] / s[(0, 0)];
                    out.push((p[1].0 - slope * p[0].0, slope));
                }
                None => {
                    flag = Some("no location covariance for this test; ellipse only".to_string());
                    out.clear();
                    break;
                }
            }
        }
        out
    };

    let (lo, hi) = if info.is_continuous() {
        let fpf_at = |c: Option<f64>| {
            let c = c.expect("continuous test has observed thresholds");
            let [mut f, _] = probs_at(info, &params, Threshold::Value(c));
            logit(Credible::from_draws(&mut f).median)
        };
        let (a, b) = (fpf_at(info.max_threshold), fpf_at(info.min_threshold));
        (a.min(b), a.max(b))
    } else {
        (logit(0.01), logit(0.99))
    };
    let points = if lines.is_empty() {
        Vec::new()
    } else {
        let n = if hi > lo { CURVE_POINTS } else { 1 };
        (0..n)
            .map(|i| {
                let x = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
                let mut sens: Vec<f64> = lines.iter().map(|(a, b)| expit(a + b * x)).collect();
                SrocPoint { fpf: expit(x), sensitivity: Credible::from_draws(&mut sens) }
            })
            .collect()
    };
    Ok(SrocCurve { test_id: test_id.to_string(), points, ellipse, flag })
}

#[cfg(test)]
mod tests {
    use super::super::testing::samples;
    use super::super::{pooled_accuracy, threshold_curve};
    use super::*;
    use crate::model::{CovarianceStructure, ModelVariant};

    fn draws_xy(t: usize) -> (f64, f64) {
        let x = (t as f64 * 0.618_033_988).fract() - 0.5;
        let y = (t as f64 * 0.414_213_562).fract() - 0.5;
        (x, y)
    }

    #[test]
    fn independent_symmetric_posterior_gives_axis_aligned_ellipse() {
        // a 40 × 40 lattice: empirical correlation is exactly zero
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, 1600, |t, v, l| {
            v[l.m[0][0]] = -1.0 + ((t % 40) as f64 - 19.5) * 0.05;
            v[l.m[0][1]] = 1.0 + ((t / 40) as f64 - 19.5) * 0.02;
        });
        let e = sroc_curve(&s, "B").unwrap().ellipse;
        assert!(e.rotation.abs() < 1e-9, "{}", e.rotation);
        assert!(e.axes[0] > e.axes[1]);
        assert!((e.center[0] + 1.0).abs() < 1e-12);
        let sd_x = (0.05f64.powi(2) * (1600.0 / 1599.0) * (40.0 * 40.0 - 1.0) / 12.0).sqrt();
        assert!((e.axes[0] - sd_x * ELLIPSE_RADIUS_SQ.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn correlated_posterior_rotates_ellipse() {
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, 500, |t, v, l| {
            let (x, y) = draws_xy(t);
            v[l.m[0][0]] = x;
            v[l.m[0][1]] = x + 0.1 * y;
        });
        let e = sroc_curve(&s, "B").unwrap().ellipse;
        assert!((e.rotation - std::f64::consts::FRAC_PI_4).abs() < 0.1, "{}", e.rotation);
    }

    #[test]
    fn binary_curve_follows_covariance_regression() {
        // Σ with unit variances and correlation 0.5: slope 0.5 through (m₀, m₁)
        let rho: f64 = 0.5;
        let s = samples(ModelVariant::MetaRegression, CovarianceStructure::Full4, 200, |_, v, l| {
            let b = &l.blocks[0];
            v[b.offset + 1] = rho;
            v[b.offset + 2] = 0.5 * (1.0 - rho * rho).ln();
            v[l.m[0][0]] = -1.0;
            v[l.m[0][1]] = 0.8;
        });
        let c = sroc_curve(&s, "B").unwrap();
        assert!(c.flag.is_none());
        assert_eq!(c.points.len(), 100);
        for p in &c.points {
            let want = expit(0.8 + 0.5 * (logit(p.fpf) + 1.0));
            assert!((p.sensitivity.median - want).abs() < 1e-12);
        }
        assert!(c.points.windows(2).all(|w| w[0].fpf < w[1].fpf));
    }

    #[test]
    fn continuous_curve_matches_pooled_points() {
        let s = samples(ModelVariant::Independent, CovarianceStructure::Full4, 400, |t, v, l| {
            let (x, y) = draws_xy(t);
            v[l.m[1][0]] = -1.0 + 0.2 * x;
            v[l.m[1][1]] = 1.0 + 0.2 * y;
            v[l.s[1].unwrap()[0]] = 0.1 * y;
            v[l.s[1].unwrap()[1]] = -0.1 + 0.1 * x;
        });
        let c = sroc_curve(&s, "C").unwrap();
        let curve = threshold_curve(&s, "C", 20).unwrap();
        for p in &curve.points {
            let f = p.fpf.median;
            if f < c.points[0].fpf || f > c.points.last().unwrap().fpf {
                continue;
            }
            let j = c.points.iter().position(|q| q.fpf >= f).unwrap().max(1);
            let (a, b) = (&c.points[j - 1], &c.points[j]);
            let w = (f - a.fpf) / (b.fpf - a.fpf);
            let interp = a.sensitivity.median + w * (b.sensitivity.median - a.sensitivity.median);
            assert!((interp - p.sensitivity.median).abs() < 0.01, "{f}: {interp} vs {}", p.sensitivity.median);
        }
        for p in &c.points {
            assert!(p.sensitivity.lower <= p.sensitivity.median && p.sensitivity.median <= p.sensitivity.upper);
        }
        let ends = pooled_accuracy(&s, "C", Threshold::Value(20.0)).unwrap();
        assert!((c.points[0].fpf - ends.fpf.median).abs() < 1e-12);
    }

    #[test]
    fn anova_binary_uses_study_covariance_plus_interaction() {
        let s = samples(ModelVariant::Anova, CovarianceStructure::Reduced2, 150, |_, v, l| {
            v[l.tau_m[0].unwrap()[0]] = 0.0;
            v[l.tau_m[0].unwrap()[1]] = 0.0;
        });
        let c = sroc_curve(&s, "B").unwrap();
        // Σ_η = I, τ = 1: covariance 2I, slope 0
        assert!(c.points.iter().all(|p| (p.sensitivity.median - 0.5).abs() < 1e-12));
    }
}
