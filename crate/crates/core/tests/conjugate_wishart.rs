//! With the random effects held and the likelihood off, the covariance
//! updates draw from the inverse-Wishart full conditional; its moments are
//! known in closed form.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use dtanet::dataset::{Dataset, DiseaseGroup, TestDescriptor, Threshold, ThresholdSeries};
use dtanet::inference::{run_mcmc, HoldSet, SamplerConfig};
use dtanet::math::chol_from_packed;
use dtanet::model::{build_layout, CovarianceStructure, ModelSpec, ModelVariant};

fn network(studies: usize) -> Dataset {
    let mut series = Vec::new();
    for i in 0..studies {
        for t in ["A", "B"] {
            for g in DiseaseGroup::ALL {
                series.push(ThresholdSeries {
                    study_id: format!("S{i:02}"),
                    test_id: t.into(),
                    group: g,
                    group_size: 50,
                    thresholds: vec![Threshold::NotApplicable],
                    positives: vec![20],
                });
            }
        }
    }
    Dataset::new(vec![TestDescriptor::binary("A"), TestDescriptor::binary("B")], series).unwrap()
}

#[test]
fn covariance_full_conditional_matches_inverse_wishart() {
    let d = network(6);
    let spec = ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::Reduced2);
    let layout = build_layout(&d, &spec).unwrap();
    // fixed random effects with a clear correlation
    let mut init = BTreeMap::new();
    let mut scatter = DMatrix::<f64>::zeros(2, 2);
    for (p, e) in layout.eps.iter().enumerate() {
        let a = 0.6 * ((p as f64) * 0.9).sin() + 0.2;
        let b = 0.5 * a + 0.3 * ((p as f64) * 1.7).cos();
        init.insert(layout.names[e[0]].clone(), a);
        init.insert(layout.names[e[1]].clone(), b);
        let v = DMatrix::from_column_slice(2, 1, &[a, b]);
        scatter += &v * v.transpose();
    }
    let n = layout.eps.len() as f64;
    let cfg = SamplerConfig {
        chains: 1,
        warmup_iters: 100,
        keep_iters: 100_000,
        seed: 3,
        prior_only: true,
        hold: HoldSet { fixed_effects: true, random_effects: true, ..HoldSet::default() },
        init,
        ..SamplerConfig::default()
    };
    let s = run_mcmc(&d, &spec, &cfg).unwrap();
    let b = &s.layout.blocks[0];
    let draws: Vec<DMatrix<f64>> = s
        .iter_draws()
        .map(|v| {
            let l = chol_from_packed(2, &v[b.coords()]);
            &l * l.transpose()
        })
        .collect();

    // Σ ~ IW(Ψ, ν) with Ψ = I + S, ν = 2 + n
    let psi = DMatrix::<f64>::identity(2, 2) + scatter;
    let nu = 2.0 + n;
    let p = 2.0;
    let mean = &psi / (nu - p - 1.0);
    let var = |i: usize, j: usize| {
        ((nu - p + 1.0) * psi[(i, j)].powi(2) + (nu - p - 1.0) * psi[(i, i)] * psi[(j, j)])
            / ((nu - p) * (nu - p - 1.0).powi(2) * (nu - p - 3.0))
    };
    let count = draws.len() as f64;
    for (i, j) in [(0, 0), (1, 0), (1, 1)] {
        let x: Vec<f64> = draws.iter().map(|m| m[(i, j)]).collect();
        let m = x.iter().sum::<f64>() / count;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (count - 1.0);
        let rel_m = (m / mean[(i, j)] - 1.0).abs();
        let rel_v = (v / var(i, j) - 1.0).abs();
        assert!(rel_m < 0.02, "E[Σ{i}{j}] {m} vs {}", mean[(i, j)]);
        assert!(rel_v < 0.05, "Var[Σ{i}{j}] {v} vs {}", var(i, j));
    }
}
