//! With the likelihood switched off the sampler must reproduce the priors.

use dtanet::dataset::{Dataset, DiseaseGroup, TestDescriptor, Threshold, ThresholdSeries};
use dtanet::inference::{run_mcmc, SamplerConfig};
use dtanet::math::{mean, quantile_sorted};
use dtanet::model::{CovarianceStructure, ModelSpec, ModelVariant, WishartConvention};

fn network() -> Dataset {
    let mut s = Vec::new();
    for i in 0..6 {
        for (test, thr) in [("C", vec![Threshold::Value(2.0), Threshold::Value(4.0)]), ("B", vec![Threshold::NotApplicable])] {
            if test == "B" && i % 2 == 1 {
                continue;
            }
            for g in DiseaseGroup::ALL {
                s.push(ThresholdSeries {
                    study_id: format!("S{i}"),
                    test_id: test.into(),
                    group: g,
                    group_size: 40,
                    positives: vec![10; thr.len()],
                    thresholds: thr.clone(),
                });
            }
        }
    }
    Dataset::new(vec![TestDescriptor::binary("B"), TestDescriptor::continuous("C", 3.0)], s).unwrap()
}

fn cfg(seed: u64) -> SamplerConfig {
    SamplerConfig { chains: 2, warmup_iters: 2000, keep_iters: 40_000, seed, prior_only: true, ..SamplerConfig::default() }
}

fn sigma11(spec: &ModelSpec, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let s = run_mcmc(&network(), spec, &cfg(seed)).unwrap();
    let block = s.layout.blocks.iter().position(|b| b.label.starts_with("Sigma:C")).unwrap();
    let l00 = s.layout.blocks[block].offset;
    let sig: Vec<f64> = s.pooled(l00).iter().map(|t| (2.0 * t).exp()).collect();
    let m = s.pooled(s.layout.coord("m[C,0]").unwrap());
    (sig, m)
}

#[test]
fn precision_wishart_prior_marginal() {
    // Σ ~ IW(I, 4) on a 4 × 4 block: Σ₁₁ is 1/χ²₁ with median 2.198
    let spec = ModelSpec::new(ModelVariant::Independent, CovarianceStructure::Full4);
    let (mut sig, m) = sigma11(&spec, 5);
    sig.sort_by(f64::total_cmp);
    let med = quantile_sorted(&sig, 0.5);
    assert!((med / 2.198 - 1.0).abs() < 0.06, "median Σ11 {med}");
    let sd = dtanet::math::variance(&m).sqrt();
    assert!((sd / 1000f64.sqrt() - 1.0).abs() < 0.06, "sd m {sd}");
}

#[test]
fn covariance_wishart_prior_marginal() {
    // Σ ~ W(I, 4): Σ₁₁ ~ χ²₄ with mean 4
    let spec = ModelSpec::new(ModelVariant::Independent, CovarianceStructure::Full4)
        .with_wishart(WishartConvention::Covariance);
    let (sig, _) = sigma11(&spec, 6);
    let mu = mean(&sig);
    assert!((mu / 4.0 - 1.0).abs() < 0.06, "mean Σ11 {mu}");
}

#[test]
fn uniform_tau_prior() {
    let spec = ModelSpec::new(ModelVariant::Anova, CovarianceStructure::Full4);
    let s = run_mcmc(&network(), &spec, &cfg(7)).unwrap();
    let c = s.layout.coord("log_tau_m[C,0]").unwrap();
    let tau: Vec<f64> = s.pooled(c).iter().map(|x| x.exp()).collect();
    let mu = mean(&tau);
    assert!((mu - 2.5).abs() < 0.1, "mean τ {mu}");
}
