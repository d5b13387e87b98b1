//! The command-line workflow driven from code: simulate a network, fit it
//! from the generated run config, then compare two variants.

use dtanet::cli::{read_manifest, run_from};

fn main() {
    let dir = std::env::temp_dir().join("dtanet-workflow");
    let _ = std::fs::remove_dir_all(&dir);
    let d = dir.to_str().unwrap();
    assert_eq!(run_from(["dtanet", "simulate", "--preset", "small", "--seed", "9", "--out", d]), 0);

    // shorten the run and add a comparison
    let cfg_path = dir.join("small.toml");
    let cfg = std::fs::read_to_string(&cfg_path).unwrap();
    let cfg = cfg.replace("warmup_iters = 10000", "warmup_iters = 1000").replace("keep_iters = 20000", "keep_iters = 1000");
    let cfg = format!("{cfg}\n[[compare]]\nvariant = \"Anova\"\ncov = \"Reduced2\"\n\n[[compare]]\nvariant = \"MetaRegression\"\ncov = \"Reduced2\"\n");
    std::fs::write(&cfg_path, cfg).unwrap();

    let c = cfg_path.to_str().unwrap();
    assert_eq!(run_from(["dtanet", "validate", "--data", &format!("{d}/small.csv"), "--variant", "anova"]), 0);
    assert_eq!(run_from(["dtanet", "fit", "--config", c, "--seed", "4"]), 0);
    let m = read_manifest(&dir.join("small-fit")).unwrap();
    println!("\nmanifest: config {} data {}", &m.config_hash[..12], &m.data_fingerprint[..12]);
    for a in &m.artifacts {
        println!("  {} {}", &a.sha256[..12], a.path);
    }
    println!();
    assert_eq!(run_from(["dtanet", "compare", "--config", c, "--out", &format!("{d}/compare")]), 0);
}
