//! Regenerates the bundled analog datasets.
//!
//! ```text
//! cargo run --example generate_analogs -- [out_dir] [seed]
//! ```

use std::path::PathBuf;

use dtanet::dataset::{build_network_graph, write_dataset};
use dtanet::networks::{hcc_analog, prostate_analog, BUNDLED_SEED};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(BUNDLED_SEED);
    std::fs::create_dir_all(&out)?;
    for analog in [hcc_analog(seed), prostate_analog(seed)] {
        let d = &analog.dataset;
        let path = out.join(format!("{}_analog.csv", analog.name));
        std::fs::write(&path, write_dataset(d))?;
        let reduced = d.at_reference_thresholds();
        println!(
            "{}: {} studies, {} tests, {} series; {} component(s), {} after reduction to C*",
            path.display(),
            d.studies().len(),
            d.tests().len(),
            d.series().len(),
            build_network_graph(d).components.len(),
            build_network_graph(&reduced).components.len(),
        );
    }
    Ok(())
}
