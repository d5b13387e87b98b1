//! Simulates small networks from known parameters, refits them, and reports
//! how often the 95% intervals of the fixed effects cover the truth.
//!
//! ```text
//! cargo run --release --example posterior_recovery -- [replicates]
//! ```

use dtanet::inference::{run_mcmc, SamplerConfig};
use dtanet::networks::small_network;
use dtanet::summaries::Credible;

fn main() {
    let reps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let (mut covered, mut total) = (0, 0);
    for r in 0..reps {
        let a = small_network(100 + r);
        let cfg = SamplerConfig { warmup_iters: 2_000, keep_iters: 2_000, seed: r, ..SamplerConfig::default() };
        let s = run_mcmc(&a.dataset, &a.spec, &cfg).expect("fit");
        let l = &s.layout;
        let mut line = Vec::new();
        for c in (0..l.dim()).filter(|&c| l.kinds[c].is_fixed_effect()) {
            let ci = Credible::from_draws(&mut s.pooled(c));
            let t = a.truth.values()[c];
            let hit = ci.lower <= t && t <= ci.upper;
            covered += usize::from(hit);
            total += 1;
            if !hit {
                line.push(format!("{} truth {t:.2} outside ({:.2}, {:.2})", l.names[c], ci.lower, ci.upper));
            }
        }
        println!("replicate {r}: {}", if line.is_empty() { "all covered".into() } else { line.join("; ") });
    }
    println!("coverage {covered}/{total} = {:.1}%", 100.0 * covered as f64 / total as f64);
}
