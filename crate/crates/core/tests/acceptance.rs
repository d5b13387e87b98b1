//! Acceptance checks, one line per criterion.
//!
//! ```text
//! cargo test --release --test acceptance            # all
//! cargo test --release --test acceptance -- C3 C4   # a subset
//! DTANET_BLESS=1 cargo test --test acceptance -- C5 # rewrite baselines
//! ```

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dtanet::cli::{cmd_fit, FitArgs, CONTAINER_FILE};
use dtanet::dataset::{
    build_network_graph, validate_for_model, Dataset, DiseaseGroup, TestDescriptor, Threshold, ThresholdSeries,
};
use dtanet::inference::{dic, run_mcmc, effective_sample_size, DicReport, HoldSet, PosteriorSamples, SamplerConfig};
use dtanet::likelihood::chain_loglik;
use dtanet::math::{expit, logit};
use dtanet::model::{
    build_layout, draw_random_effects, simulate_dataset, CovarianceStructure, DesignCell, ModelSpec, ModelVariant,
    ParameterState, SimulationDesign,
};
use dtanet::networks::{bundled_hcc, bundled_prostate, small_network, BUNDLED_SEED};
use dtanet::summaries::{pooled_accuracy, Credible};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// C1 ----------------------------------------------------------------------

fn likelihood_oracle() -> Outcome {
    const CASES: usize = 10_000;
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let t = rng.random_range(1..=6);
        let n: u64 = rng.random_range(1..=30);
        let mut p: Vec<f64> = (0..t).map(|_| rng.random_range(0.001..0.999)).collect();
        p.sort_by(|a, b| b.total_cmp(a));
        p.dedup();
        let t = p.len();
        let mut x: Vec<u64> = (0..t).map(|_| rng.random_range(0..=n)).collect();
        x.sort_by(|a, b| b.cmp(a));
        let s = ThresholdSeries {
            study_id: "S".into(),
            test_id: "T".into(),
            group: DiseaseGroup::Diseased,
            group_size: n,
            thresholds: (1..=t).map(|c| Threshold::Value(c as f64)).collect(),
            positives: x.clone(),
        };
        let chain = chain_loglik(&s, &p).expect("valid instance");
        let oracle = common::multinomial_loglik(n, &x, &p);
        worst = worst.max((chain - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < TOL && secs < 10.0,
        format!("{CASES} cases, max |chain - multinomial| = {worst:.2e} (< {TOL:.0e}), {secs:.2} s (< 10 s)"),
    )
}

// C2 ----------------------------------------------------------------------

/// Three binary tests in 16 studies, each study reporting two or three.
fn binary_design() -> SimulationDesign {
    let tests = ["T1", "T2", "T3"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cells = Vec::new();
    for i in 0..16 {
        let which: Vec<usize> = if i % 4 == 0 { vec![0, 1, 2] } else { vec![i % 3, (i + 1) % 3] };
        for k in which {
            for g in DiseaseGroup::ALL {
                cells.push(DesignCell {
                    study: format!("S{i:02}"),
                    test: tests[k].into(),
                    group: g,
                    thresholds: vec![Threshold::NotApplicable],
                    group_size: rng.random_range(40..=200),
                });
            }
        }
    }
    SimulationDesign { tests: tests.iter().map(|t| TestDescriptor::binary(*t)).collect(), cells }
}

fn binary_data(spec: &ModelSpec) -> Dataset {
    let design = binary_design();
    let layout = Arc::new(build_layout(&design.skeleton().unwrap(), spec).unwrap());
    let mut truth = ParameterState::zeros(layout.clone());
    let acc = [(0.80, 0.85), (0.70, 0.92), (0.88, 0.75)];
    for (k, (se, sp)) in acc.iter().enumerate() {
        let v = truth.values_mut();
        v[layout.m[k][1]] = logit(*se);
        v[layout.m[k][0]] = logit(1.0 - sp);
    }
    let cov = DMatrix::from_row_slice(2, 2, &[0.25, -0.05, -0.05, 0.25]);
    for b in 0..layout.blocks.len() {
        truth.set_covariance(b, &cov).unwrap();
    }
    for t in layout.tau_m.iter().flatten() {
        let v = truth.values_mut();
        v[t[0]] = 0.3f64.ln();
        v[t[1]] = 0.3f64.ln();
    }
    draw_random_effects(&mut truth, &mut ChaCha8Rng::seed_from_u64(8));
    simulate_dataset(spec, &truth, &design, 9).unwrap()
}

/// Posterior medians of (sensitivity, specificity) per test.
fn medians(draws: impl Iterator<Item = Vec<[f64; 2]>>, k: usize) -> Vec<(f64, f64)> {
    let mut se: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut sp: Vec<Vec<f64>> = vec![Vec::new(); k];
    for d in draws {
        for t in 0..k {
            se[t].push(expit(d[t][1]));
            sp[t].push(1.0 - expit(d[t][0]));
        }
    }
    (0..k).map(|t| (common::median(&mut se[t]), common::median(&mut sp[t]))).collect()
}

fn engine_m(samples: &PosteriorSamples) -> impl Iterator<Item = Vec<[f64; 2]>> + '_ {
    let l = samples.layout.clone();
    samples.iter_draws().map(move |v| l.m.iter().map(|m| [v[m[0]], v[m[1]]]).collect())
}

fn degeneracy_ladder() -> Outcome {
    const TOL: f64 = 0.01;
    let cfg = SamplerConfig { chains: 3, warmup_iters: 5_000, keep_iters: 15_000, seed: 21, ..SamplerConfig::default() };
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for variant in [ModelVariant::MetaRegression, ModelVariant::Anova] {
        let spec = ModelSpec::new(variant, CovarianceStructure::Reduced2);
        let d = binary_data(&spec);
        let net = common::BinaryNetwork::from_dataset(&d);
        let samples = run_mcmc(&d, &spec, &cfg).expect("engine fit");
        let reference = match variant {
            ModelVariant::MetaRegression => common::reference_meta_regression(&net, 5_000, 45_000, 22),
            _ => common::reference_anova(&net, 5_000, 45_000, 22),
        };
        let k = net.tests.len();
        let a = medians(engine_m(&samples), k);
        let b = medians(reference.into_iter(), k);
        let dmax = a.iter().zip(&b).map(|(x, y)| (x.0 - y.0).abs().max((x.1 - y.1).abs())).fold(0.0, f64::max);
        worst = worst.max(dmax);
        parts.push(format!("{variant}: max |Δ median| {dmax:.4}"));
    }
    outcome(worst < TOL, format!("{} (< {TOL}) against fully Gibbs reference samplers", parts.join(", ")))
}

// C3 ----------------------------------------------------------------------

fn posterior_recovery() -> Outcome {
    const REPLICATES: u64 = 20;
    const MIN_COVERAGE: f64 = 0.88;
    let start = Instant::now();
    let (mut covered, mut total) = (0, 0);
    for r in 0..REPLICATES {
        let a = small_network(1000 + r);
        let cfg = SamplerConfig { chains: 3, warmup_iters: 2_000, keep_iters: 2_000, seed: 500 + r, ..SamplerConfig::default() };
        let s = run_mcmc(&a.dataset, &a.spec, &cfg).expect("fit");
        let l = &s.layout;
        for m in &l.m {
            for &c in m {
                let ci = Credible::from_draws(&mut s.pooled(c));
                let t = a.truth.values()[c];
                covered += usize::from(ci.lower <= t && t <= ci.upper);
                total += 1;
            }
        }
    }
    let cov = covered as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        cov >= MIN_COVERAGE && secs < 900.0,
        format!("{covered}/{total} m intervals cover the truth ({:.1}% >= 88%), {secs:.0} s (< 900 s)", 100.0 * cov),
    )
}

// C4 ----------------------------------------------------------------------

fn quadrature() -> Outcome {
    const DRAWS: usize = 50_000;
    const TOL: f64 = 0.02;
    let thresholds = [5.0, 10.0, 20.0];
    let c_star = 10.0;
    let (n, x) = (200u64, [121u64, 74, 31]);
    let series = |g: DiseaseGroup, n: u64, x: &[u64]| ThresholdSeries {
        study_id: "S1".into(),
        test_id: "C".into(),
        group: g,
        group_size: n,
        thresholds: thresholds.iter().map(|&t| Threshold::Value(t)).collect(),
        positives: x.to_vec(),
    };
    let d = Dataset::new(
        vec![TestDescriptor::continuous("C", c_star)],
        vec![series(DiseaseGroup::NonDiseased, n, &x), series(DiseaseGroup::Diseased, 150, &[140, 120, 90])],
    )
    .unwrap();
    let spec = ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::Full4);
    let cfg = SamplerConfig {
        chains: 2,
        warmup_iters: 5_000,
        keep_iters: DRAWS / 2,
        thin: 4,
        seed: 31,
        hold: HoldSet {
            random_effects: true,
            variance_components: true,
            coords: vec!["m[C,1]".into(), "s[C,1]".into()],
            ..HoldSet::default()
        },
        ..SamplerConfig::default()
    };
    let s = run_mcmc(&d, &spec, &cfg).expect("fit");
    let l = s.layout.clone();
    let (mc, sc) = (l.m[0][0], l.s[0].unwrap()[0]);
    // held random effects shift the series parameters
    let first = s.draw(0, 0);
    let eps = first[l.eps[0][0]];
    let u = l.u[0].map_or(0.0, |u| first[u[0]]);
    let logp = |mu: f64, ls: f64| {
        let p: Vec<f64> = thresholds.iter().map(|&t| expit(mu + eps + (c_star / t).ln() * (-(ls + u)).exp())).collect();
        common::multinomial_loglik(n, &x, &p) - mu * mu / 2000.0 - ls * ls / 2000.0
    };
    let (mu_draws, ls_draws) = (s.pooled(mc), s.pooled(sc));
    let range = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        (mean - 10.0 * sd, mean + 10.0 * sd)
    };
    let (rm, rs) = (range(&mu_draws), range(&ls_draws));
    let (gm, fm) = common::quadrature_marginal(logp, rm, rs, 801);
    let (gs, fs) = common::quadrature_marginal(|a, b| logp(b, a), rs, rm, 801);
    let ks_m = common::ks_distance(&mu_draws, |v| common::interp(&gm, &fm, v));
    let ks_s = common::ks_distance(&ls_draws, |v| common::interp(&gs, &fs, v));
    outcome(
        ks_m < TOL && ks_s < TOL && mu_draws.len() == DRAWS,
        format!("{} draws; KS(location) {ks_m:.4}, KS(log-scale) {ks_s:.4} (< {TOL})", mu_draws.len()),
    )
}

// C5 ----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Baseline {
    dic: DicReport,
    /// (test, sensitivity median, specificity median) at each C*.
    reference: Vec<(String, f64, f64)>,
}

fn baseline_fit(d: &Dataset, spec: &ModelSpec, seed: u64) -> Baseline {
    let cfg = SamplerConfig { chains: 2, warmup_iters: 1_500, keep_iters: 1_500, seed, ..SamplerConfig::default() };
    let s = run_mcmc(d, spec, &cfg).expect("fit");
    let reference = s
        .layout
        .tests
        .iter()
        .filter(|t| t.is_continuous())
        .map(|t| {
            let a = pooled_accuracy(&s, &t.id, Threshold::Value(t.c_star.unwrap())).unwrap();
            (t.id.clone(), a.sensitivity.median, a.specificity().median)
        })
        .collect();
    Baseline { dic: dic(&s).unwrap(), reference }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn baseline_matches(a: &Baseline, b: &Baseline) -> bool {
    let (x, y) = (&a.dic, &b.dic);
    close(x.mean_residual_deviance, y.mean_residual_deviance)
        && close(x.p_v, y.p_v)
        && close(x.dic, y.dic)
        && a.reference.len() == b.reference.len()
        && a.reference.iter().zip(&b.reference).all(|(p, q)| p.0 == q.0 && close(p.1, q.1) && close(p.2, q.2))
}

fn analog_baselines() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/baselines/analogs.toml");
    let hcc = bundled_hcc();
    let prostate = bundled_prostate();
    let mut notes = Vec::new();

    let shape_ok = hcc.studies().len() == 130
        && hcc.tests().len() == 28
        && prostate.studies().len() == 37
        && prostate.tests().len() == 4
        && build_network_graph(&hcc).is_connected()
        && build_network_graph(&prostate).is_connected();
    notes.push(format!(
        "shapes {}/{} and {}/{}",
        hcc.studies().len(),
        hcc.tests().len(),
        prostate.studies().len(),
        prostate.tests().len()
    ));
    let hcc_ok = validate_for_model(&hcc, &build_network_graph(&hcc), ModelVariant::AnovaPlus).is_ok();
    let reduced = prostate.at_reference_thresholds();
    let prostate_reduced_rejected = !validate_for_model(&reduced, &build_network_graph(&reduced), ModelVariant::Anova).is_ok();

    let mut fits = BTreeMap::new();
    fits.insert(
        "hcc".to_string(),
        baseline_fit(&hcc, &ModelSpec::new(ModelVariant::AnovaPlus, CovarianceStructure::Reduced2), BUNDLED_SEED),
    );
    fits.insert(
        "prostate".to_string(),
        baseline_fit(&prostate, &ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::BlockDiag22), BUNDLED_SEED),
    );
    if std::env::var_os("DTANET_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, toml::to_string(&fits).unwrap()).unwrap();
        notes.push("baseline rewritten".into());
    }
    let stored: Option<BTreeMap<String, Baseline>> =
        std::fs::read_to_string(&path).ok().and_then(|t| toml::from_str(&t).ok());
    let baseline_ok = match &stored {
        None => {
            notes.push(format!("no baseline at {}", path.display()));
            false
        }
        Some(b) => {
            let ok = b.len() == fits.len() && fits.iter().all(|(k, v)| b.get(k).is_some_and(|w| baseline_matches(v, w)));
            for (k, v) in &fits {
                notes.push(format!("{k} DIC {:.2}", v.dic.dic));
            }
            ok
        }
    };
    if let Some(afp) = fits["hcc"].reference.iter().find(|r| r.0 == "AFP") {
        notes.push(format!("AFP@20 sens {:.3} spec {:.3} (generating 0.61/0.90)", afp.1, afp.2));
    }
    outcome(
        shape_ok && hcc_ok && prostate_reduced_rejected && baseline_ok,
        format!(
            "analog replacement: {}; HCC valid for anova-plus: {hcc_ok}; reduced prostate rejected for anova: \
             {prostate_reduced_rejected}; frozen-seed baseline reproduced: {baseline_ok}",
            notes.join(", ")
        ),
    )
}

// C6 ----------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let a = small_network(77);
    std::fs::write(root.join("data.csv"), dtanet::dataset::write_dataset(&a.dataset)).unwrap();
    let config = "data = \"data.csv\"\n[model]\nvariant = \"Anova\"\ncov = \"Reduced2\"\n\
                  [sampler]\nchains = 4\nwarmup_iters = 400\nkeep_iters = 300\nseed = 5\n\
                  [outputs]\ncurves = false\nsroc = false\nrankings = false\n";
    std::fs::write(root.join("run.toml"), config).unwrap();
    let run = |out: &str, threads: Option<usize>| -> Vec<u8> {
        let args = FitArgs { threads, out: Some(root.join(out)), ..FitArgs::new(root.join("run.toml")) };
        cmd_fit(&args).expect("fit");
        std::fs::read(root.join(out).join(CONTAINER_FILE)).unwrap()
    };
    let first = run("a", None);
    let second = run("b", None);
    let one = run("t1", Some(1));
    let eight = run("t8", Some(8));
    let ok = first == second && one == eight && first == one;
    outcome(
        ok,
        format!(
            "{} byte container; repeat run identical: {}; 1 vs 8 threads identical: {}",
            first.len(),
            first == second,
            one == eight
        ),
    )
}

// C7 ----------------------------------------------------------------------

fn prior_recovery() -> Outcome {
    const SD_TOL: f64 = 0.03;
    // Kolmogorov critical value at α = 0.01
    const KS_CRIT: f64 = 1.6276;
    let a = small_network(1);
    let spec = ModelSpec::new(ModelVariant::Anova, CovarianceStructure::Reduced2);
    let cfg = SamplerConfig { chains: 4, warmup_iters: 2_000, keep_iters: 50_000, seed: 41, prior_only: true, ..SamplerConfig::default() };
    let s = run_mcmc(&a.dataset, &spec, &cfg).expect("fit");
    let l = s.layout.clone();
    let target = 1000f64.sqrt();
    let mut worst_sd = 0.0f64;
    let mut min_ess = f64::INFINITY;
    for m in &l.m {
        for &c in m {
            let x = s.pooled(c);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
            worst_sd = worst_sd.max((sd / target - 1.0).abs());
            min_ess = min_ess.min(effective_sample_size(&s.trace(c)));
        }
    }
    // thin each τs trace to roughly independent draws
    let mut worst_ks = 0.0f64;
    let mut ks_n = 0;
    for t in l.tau_s.iter().flatten() {
        for &c in t {
            let ess = effective_sample_size(&s.trace(c));
            let total = s.n_draws();
            let step = ((total as f64 / ess).ceil() as usize).max(1);
            let x: Vec<f64> = s.pooled(c).iter().step_by(step).map(|v| v.exp()).collect();
            let ks = common::ks_distance(&x, |v| (v / 5.0).clamp(0.0, 1.0));
            worst_ks = worst_ks.max(ks * (x.len() as f64).sqrt());
            ks_n = x.len();
        }
    }
    let stat = worst_ks;
    outcome(
        worst_sd < SD_TOL && stat < KS_CRIT,
        format!(
            "max |sd(m)/√1000 − 1| = {:.4} (< {SD_TOL}, min ESS {min_ess:.0}); worst √n·KS(τs, U(0,5)) = {stat:.3} \
             (< {KS_CRIT}, n ≈ {ks_n})",
            worst_sd
        ),
    )
}

// C8 ----------------------------------------------------------------------

fn binary_dataset(arms: &[(&str, &str)]) -> Dataset {
    let tests: std::collections::BTreeSet<&str> = arms.iter().map(|a| a.1).collect();
    let series = arms
        .iter()
        .flat_map(|(s, t)| {
            DiseaseGroup::ALL.map(|g| ThresholdSeries {
                study_id: s.to_string(),
                test_id: t.to_string(),
                group: g,
                group_size: 40,
                thresholds: vec![Threshold::NotApplicable],
                positives: vec![if g == DiseaseGroup::Diseased { 30 } else { 6 }],
            })
        })
        .collect();
    Dataset::new(tests.into_iter().map(TestDescriptor::binary).collect(), series).unwrap()
}

fn validation_matrix() -> Outcome {
    // two components {A, B} and {C, D}; every test in two studies
    let disconnected =
        binary_dataset(&[("S1", "A"), ("S1", "B"), ("S2", "A"), ("S2", "B"), ("S3", "C"), ("S3", "D"), ("S4", "C"), ("S4", "D")]);
    // connected; E appears in one study only
    let one_study = binary_dataset(&[("S1", "A"), ("S1", "B"), ("S2", "A"), ("S2", "B"), ("S3", "B"), ("S3", "E")]);
    let expected = [
        (ModelVariant::Independent, true, false),
        (ModelVariant::MetaRegression, true, true),
        (ModelVariant::Anova, false, false),
        (ModelVariant::AnovaPlus, false, true),
    ];
    let mut cells = Vec::new();
    let mut ok = true;
    for (variant, disc_ok, one_ok) in expected {
        for (label, d, want) in [("disconnected", &disconnected, disc_ok), ("one-study", &one_study, one_ok)] {
            let report = validate_for_model(d, &build_network_graph(d), variant);
            let layout_ok = build_layout(d, &ModelSpec::new(variant, CovarianceStructure::Reduced2)).is_ok();
            let good = report.is_ok() == want && layout_ok == want;
            ok &= good;
            cells.push(format!("{variant}/{label}={}{}", if want { "accept" } else { "reject" }, if good { "" } else { "!" }));
        }
    }
    outcome(ok, format!("8 cells: {}", cells.join(" ")))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 8] = [
        ("C1", "likelihood oracle equivalence", likelihood_oracle),
        ("C2", "degeneracy ladder", degeneracy_ladder),
        ("C3", "posterior recovery", posterior_recovery),
        ("C4", "quadrature cross-check", quadrature),
        ("C5", "analog regression baselines", analog_baselines),
        ("C6", "determinism", determinism),
        ("C7", "prior recovery", prior_recovery),
        ("C8", "validation matrix", validation_matrix),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took: Duration = start.elapsed();
        println!(
            "{id} {:<30} {}  {} [{:.1} s]",
            name,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
