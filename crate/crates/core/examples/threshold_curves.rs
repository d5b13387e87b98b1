//! Pooled sensitivity and specificity across the observed threshold range of
//! each continuous test, written as SVG figures with embedded data.
//!
//! ```text
//! cargo run --example threshold_curves -- [out_dir]
//! ```

use std::path::PathBuf;

use dtanet::inference::{run_mcmc, SamplerConfig};
use dtanet::networks::small_network;
use dtanet::summaries::{threshold_curve, threshold_curve_svg, DEFAULT_GRID_SIZE};

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dtanet-curves"));
    std::fs::create_dir_all(&out).unwrap();
    let a = small_network(2);
    let samples = run_mcmc(&a.dataset, &a.spec, &SamplerConfig::quick(3)).expect("fit");
    for t in samples.layout.tests.iter().filter(|t| t.is_continuous()) {
        let c = threshold_curve(&samples, &t.id, DEFAULT_GRID_SIZE).unwrap();
        println!("{} (C* = {})", t.name, t.c_star.unwrap());
        for p in c.points.iter().step_by(DEFAULT_GRID_SIZE / 5) {
            println!(
                "  {:>8.2}  sens {:.3} ({:.3}, {:.3})  spec {:.3}",
                p.threshold.value().unwrap(),
                p.sensitivity.median,
                p.sensitivity.lower,
                p.sensitivity.upper,
                p.specificity().median
            );
        }
        let path = out.join(format!("{}.svg", t.id));
        std::fs::write(&path, threshold_curve_svg(&c, &t.name)).unwrap();
        println!("  -> {}", path.display());
    }
}
