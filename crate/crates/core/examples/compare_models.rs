//! DIC comparison of every model variant the prostate analog admits.

use dtanet::dataset::{build_network_graph, validate_for_model};
use dtanet::inference::{dic, run_mcmc, SamplerConfig};
use dtanet::model::{CovarianceStructure, ModelSpec, ModelVariant};
use dtanet::networks::bundled_prostate;

fn main() {
    let d = bundled_prostate();
    let g = build_network_graph(&d);
    let cfg = SamplerConfig { warmup_iters: 3_000, keep_iters: 3_000, seed: 5, ..SamplerConfig::default() };
    let mut rows = Vec::new();
    for variant in ModelVariant::ALL {
        if !validate_for_model(&d, &g, variant).is_ok() {
            println!("{variant}: not applicable to this network");
            continue;
        }
        let spec = ModelSpec::new(variant, CovarianceStructure::BlockDiag22);
        let r = dic(&run_mcmc(&d, &spec, &cfg).expect("fit")).unwrap();
        rows.push((spec.to_string(), r));
    }
    rows.sort_by(|a, b| a.1.dic.total_cmp(&b.1.dic));
    println!("{:<28} {:>9} {:>8} {:>9}", "model", "D̄res", "pV", "DIC");
    for (i, (name, r)) in rows.iter().enumerate() {
        let mark = if i == 0 { "  lowest" } else { "" };
        println!("{name:<28} {:>9.1} {:>8.1} {:>9.1}{mark}", r.mean_residual_deviance, r.p_v, r.dic);
    }
}
