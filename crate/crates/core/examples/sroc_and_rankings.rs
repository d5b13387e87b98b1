//! Summary ROC curves with 95% credible ellipses, and rankings of the tests
//! by Youden index at their reference thresholds.

use std::collections::BTreeMap;

use dtanet::inference::{run_mcmc, SamplerConfig};
use dtanet::networks::small_network;
use dtanet::summaries::{rankings_with, sroc_curve_with, sroc_svg, SummaryMode, SummaryOptions};

fn main() {
    let a = small_network(4);
    let samples = run_mcmc(&a.dataset, &a.spec, &SamplerConfig::quick(8)).expect("fit");
    let out = std::env::temp_dir().join("dtanet-sroc");
    std::fs::create_dir_all(&out).unwrap();

    for mode in [SummaryMode::Population, SummaryMode::Predictive] {
        let opts = SummaryOptions { mode, seed: 2 };
        println!("{mode:?}");
        for t in &samples.layout.tests {
            let c = sroc_curve_with(&samples, &t.id, &opts).unwrap();
            let e = &c.ellipse;
            println!(
                "  {}: {} curve points, ellipse centre (fpf {:.3}, sens {:.3}), half-axes {:.3} / {:.3} on the logit scale",
                t.id,
                c.points.len(),
                dtanet::math::expit(e.center[0]),
                dtanet::math::expit(e.center[1]),
                e.axes[0],
                e.axes[1]
            );
            if mode == SummaryMode::Population {
                std::fs::write(out.join(format!("{}.svg", t.id)), sroc_svg(&c, &t.name)).unwrap();
            }
        }
        let ids: Vec<&str> = samples.layout.tests.iter().map(|t| t.id.as_str()).collect();
        let r = rankings_with(&samples, &ids, &BTreeMap::new(), &opts).unwrap();
        for t in &r.tests {
            let probs: Vec<String> = t.rank_probabilities.iter().map(|p| format!("{p:.2}")).collect();
            println!("  rank of {}: median {}, P(rank) [{}], Youden {:.3}", t.test_id, t.median_rank, probs.join(", "), t.youden.median);
        }
        for p in &r.pairwise {
            println!("  {} − {}: Δsens {:+.3}, Δspec {:+.3}", p.first, p.second, p.sensitivity.median, p.specificity.median);
        }
    }
    println!("figures in {}", out.display());
}
