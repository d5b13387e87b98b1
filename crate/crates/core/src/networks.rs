//! Synthetic evidence networks with known parameters.
//!
//! * [`hcc_analog`]: 130 studies and 28 tests, four of them continuous
//!   biomarkers; the hub biomarker is reported at 157 distinct thresholds,
//!   up to 48 in one study. Connected as a whole, but it falls apart when
//!   each continuous test is cut back to its reference threshold.
//! * [`prostate_analog`]: 37 studies, three continuous biomarkers and one
//!   test treated as binary. No two tests share a study at their reference
//!   thresholds, so the reduced network has no edges at all.
//! * [`small_network`]: 20 studies, 3 continuous tests, 3 thresholds per
//!   study, drawn under the ANOVA variant for recovery experiments.
//!
//! Each analog carries its design, the spec it was drawn under and the true
//! parameter state, so fits can be checked against the truth.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{parse_dataset_str, Dataset, DiseaseGroup, TestDescriptor, Threshold};
use crate::math::logit;
use crate::model::{
    build_layout, draw_random_effects, simulate_dataset, CovarianceStructure, DesignCell, ModelError, ModelSpec,
    ModelVariant, ParameterState, SimulationDesign,
};

/// Seed of the bundled copies under `data/`.
pub const BUNDLED_SEED: u64 = 20_240_601;

const HCC_CSV: &str = include_str!("../data/hcc_analog.csv");
const PROSTATE_CSV: &str = include_str!("../data/prostate_analog.csv");

#[derive(Debug, Clone)]
pub struct Analog {
    pub name: &'static str,
    pub dataset: Dataset,
    pub design: SimulationDesign,
    pub spec: ModelSpec,
    pub truth: ParameterState,
}

/// Population accuracy used for the truth: (sensitivity, specificity) at the
/// reference threshold, plus log-scales for continuous tests.
struct TestTruth {
    descriptor: TestDescriptor,
    sens: f64,
    spec: f64,
    log_scale: [f64; 2],
}

fn binary(id: &str, name: &str, sens: f64, spec: f64) -> TestTruth {
    TestTruth { descriptor: TestDescriptor::binary(id).with_name(name), sens, spec, log_scale: [0.0; 2] }
}

fn continuous(id: &str, name: &str, c: f64, sens: f64, spec: f64, log_scale: [f64; 2]) -> TestTruth {
    TestTruth { descriptor: TestDescriptor::continuous(id, c).with_name(name), sens, spec, log_scale }
}

fn study_id(i: usize) -> String {
    format!("S{i:03}")
}

/// Cells for one (study, test), both groups sharing the thresholds.
fn cells(study: usize, test: &str, thresholds: &[Threshold], rng: &mut ChaCha8Rng) -> [DesignCell; 2] {
    let n1 = rng.random_range(20..=150);
    let n0 = rng.random_range(50..=400);
    let mut t = thresholds.to_vec();
    t.sort_by(|a, b| a.value().unwrap_or(0.0).total_cmp(&b.value().unwrap_or(0.0)));
    t.dedup();
    [
        DesignCell { study: study_id(study), test: test.into(), group: DiseaseGroup::NonDiseased, thresholds: t.clone(), group_size: n0 },
        DesignCell { study: study_id(study), test: test.into(), group: DiseaseGroup::Diseased, thresholds: t, group_size: n1 },
    ]
}

fn pick(pool: &[f64], k: usize, must: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<Threshold> {
    let mut v: Vec<f64> = pool.choose_multiple(rng, k.min(pool.len())).copied().collect();
    if let Some(c) = must {
        if !v.contains(&c) {
            v.push(c);
        }
    }
    v.into_iter().map(Threshold::Value).collect()
}

/// Sets fixed effects from the truth table, then variance components via
/// `variance`, then draws the random effects.
fn truth_state(
    design: &SimulationDesign,
    spec: &ModelSpec,
    tests: &[TestTruth],
    rng: &mut ChaCha8Rng,
    variance: impl FnOnce(&mut ParameterState, &mut ChaCha8Rng),
) -> Result<ParameterState, ModelError> {
    let layout = Arc::new(build_layout(&design.skeleton()?, spec)?);
    let mut state = ParameterState::zeros(layout.clone());
    for t in tests {
        let k = layout.test_index(&t.descriptor.id).expect("test in layout");
        let v = state.values_mut();
        v[layout.m[k][0]] = logit(1.0 - t.spec);
        v[layout.m[k][1]] = logit(t.sens);
        if let Some(s) = layout.s[k] {
            v[s[0]] = t.log_scale[0];
            v[s[1]] = t.log_scale[1];
        }
    }
    variance(&mut state, rng);
    draw_random_effects(&mut state, rng);
    Ok(state)
}

fn corr2(sd: [f64; 2], rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[sd[0] * sd[0], rho * sd[0] * sd[1], rho * sd[0] * sd[1], sd[1] * sd[1]])
}

fn finish(
    name: &'static str,
    tests: Vec<TestTruth>,
    cells: Vec<DesignCell>,
    spec: ModelSpec,
    seed: u64,
    rng: &mut ChaCha8Rng,
    variance: impl FnOnce(&mut ParameterState, &mut ChaCha8Rng),
) -> Analog {
    let design = SimulationDesign { tests: tests.iter().map(|t| t.descriptor.clone()).collect(), cells };
    let truth = truth_state(&design, &spec, &tests, rng, variance).expect("analog design is valid");
    let dataset = simulate_dataset(&spec, &truth, &design, seed.wrapping_add(1)).expect("analog design is valid");
    Analog { name, dataset, design, spec, truth }
}

fn hcc_tests() -> Vec<TestTruth> {
    vec![
        continuous("AFP", "alpha-fetoprotein (ng/mL)", 20.0, 0.61, 0.90, [0.35, 0.15]),
        continuous("AFP-L3", "AFP-L3 (%)", 10.0, 0.51, 0.94, [-0.1, -0.3]),
        binary("AFP-rate", "AFP progression rate", 0.64, 0.99),
        binary("US", "B-mode US", 0.70, 0.95),
        binary("CEUS", "CEUS", 0.94, 0.98),
        binary("AFP-index", "Combined AFP index", 0.81, 0.62),
        continuous("DCP-mAU", "DCP (mAU/mL)", 40.0, 0.78, 0.72, [0.2, 0.3]),
        continuous("DCP-ng", "DCP (ng/mL)", 7.5, 0.57, 0.95, [0.0, -0.2]),
        binary("Model1", "Model based on DCP AFP gender and age", 0.86, 0.90),
        binary("Doylestown", "Doylestown algorithm", 0.50, 0.94),
        binary("MRI-contrast", "Dynamic contrast-enhanced MRI", 0.91, 0.92),
        binary("GALAD", "GALAD", 0.81, 0.79),
        binary("HCC-ART", "HCC-ART", 0.85, 0.84),
        binary("HES", "HES algorithm", 0.49, 0.91),
        binary("GALAD-long", "Longitudinal GALAD", 0.70, 0.91),
        binary("mFB-I", "mFB-I", 0.72, 0.91),
        binary("mFB-J", "mFB-J", 0.72, 0.91),
        binary("Model2", "Model based on AFP and DCP", 0.75, 0.86),
        binary("Model3", "Model based on age gender AFP and DCP", 0.66, 0.90),
        binary("CT", "Multiphase CT", 0.89, 0.92),
        binary("MRI-noncontrast", "Noncontrast MRI", 0.91, 0.98),
        binary("PEB-AFP", "PEB algorithm (AFP)", 0.85, 0.91),
        binary("PEB-DCP", "PEB algorithm (DCP)", 0.72, 0.91),
        binary("PM-DL", "PM-DL model", 0.96, 0.99),
        binary("SerialAFP-1", "Serial AFP", 0.86, 0.90),
        binary("SerialAFP-2", "Serial AFP any increase", 0.69, 0.70),
        binary("uFB-AFP", "uFB (AFP)", 0.88, 0.91),
        binary("uFB-DCP", "uFB (DCP)", 0.81, 0.91),
    ]
}

/// 157 distinct hub thresholds between 1 and 1000 ng/mL, including the
/// usual cut-offs.
fn afp_pool() -> Vec<f64> {
    let common = [20.0, 100.0, 200.0, 400.0];
    let round3 = |x: f64| {
        let e = 10f64.powi(2 - x.log10().floor() as i32);
        (x * e).round() / e
    };
    let mut fine: Vec<f64> = (0..400).map(|i| round3(10f64.powf(3.0 * i as f64 / 399.0))).filter(|x| !common.contains(x)).collect();
    fine.dedup();
    let n = 157 - common.len();
    let mut pool: Vec<f64> = (0..n).map(|j| fine[j * (fine.len() - 1) / (n - 1)]).collect();
    pool.extend(common);
    pool.sort_by(f64::total_cmp);
    pool
}

/// The HCC-shaped analog, drawn under ANOVA with a hierarchical prior on
/// the interaction SDs and the reduced 2 × 2 covariance.
pub fn hcc_analog(seed: u64) -> Analog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = afp_pool();
    let common = [20.0, 100.0, 200.0, 400.0];
    let mut rare: Vec<f64> = pool.iter().copied().filter(|c| !common.contains(c)).collect();
    rare.shuffle(&mut rng);
    let wide: Vec<f64> = {
        let mut w: Vec<f64> = rare.drain(..47).collect();
        w.push(20.0);
        w
    };

    let mut plan: Vec<(usize, Vec<&str>)> = Vec::new();
    for i in 1..=130 {
        let mut tests: Vec<&str> = match i {
            1..=40 => vec!["AFP"],
            41..=55 => vec!["AFP", "AFP-L3"],
            56..=65 => vec!["AFP", "AFP-L3", "DCP-mAU"],
            66..=75 => vec!["AFP", "DCP-mAU"],
            76..=83 => vec!["AFP", "DCP-ng"],
            84..=100 => vec!["AFP", "US"],
            101..=106 => vec!["CT", "MRI-contrast"],
            107..=109 => vec!["MRI-contrast", "MRI-noncontrast"],
            110 => vec!["US", "CEUS"],
            111..=115 => vec!["US"],
            116..=121 => vec!["MRI-contrast"],
            122..=125 => vec!["CT"],
            _ => vec!["DCP-ng"],
        };
        let extra: &[&str] = match i {
            56..=60 => &["GALAD"],
            61 | 62 => &["Doylestown"],
            63 | 64 => &["HES"],
            65..=67 => &["Model2"],
            68 => &["GALAD-long"],
            69 => &["HCC-ART"],
            70 => &["Model1"],
            71 => &["Model3"],
            72 => &["PEB-AFP", "PEB-DCP"],
            73 => &["mFB-I", "mFB-J"],
            74 => &["uFB-AFP", "uFB-DCP"],
            75 | 76 => &["SerialAFP-1"],
            77 => &["SerialAFP-2"],
            78 => &["AFP-rate"],
            79 => &["AFP-index"],
            80 => &["PM-DL"],
            84..=86 => &["CEUS"],
            87..=89 => &["CT"],
            _ => &[],
        };
        tests.extend_from_slice(extra);
        plan.push((i, tests));
    }

    let mut cells_out = Vec::new();
    let mut rare_iter = rare.into_iter();
    for (i, tests) in &plan {
        for &t in tests {
            let thresholds: Vec<Threshold> = match t {
                "AFP" if *i == 1 => wide.iter().copied().map(Threshold::Value).collect(),
                "AFP" if *i >= 84 => pick(&[100.0, 200.0, 400.0], rng.random_range(1..=2), None, &mut rng),
                "AFP" => {
                    let mut v = Vec::new();
                    if rng.random_bool(0.7) {
                        v.push(Threshold::Value(20.0));
                    }
                    if let Some(c) = rare_iter.next() {
                        v.push(Threshold::Value(c));
                    }
                    if rng.random_bool(0.3) {
                        v.push(Threshold::Value(*[100.0, 200.0, 400.0].choose(&mut rng).expect("non-empty")));
                    }
                    if v.is_empty() {
                        v.push(Threshold::Value(20.0));
                    }
                    v
                }
                "AFP-L3" => pick(&[5.0, 7.0, 10.0, 15.0], rng.random_range(1..=3), rng.random_bool(0.8).then_some(10.0), &mut rng),
                "DCP-mAU" => pick(&[20.0, 30.0, 40.0, 60.0, 100.0], rng.random_range(1..=3), rng.random_bool(0.8).then_some(40.0), &mut rng),
                "DCP-ng" => pick(&[2.0, 4.0, 7.5, 10.0, 20.0], rng.random_range(1..=3), rng.random_bool(0.7).then_some(7.5), &mut rng),
                _ => vec![Threshold::NotApplicable],
            };
            cells_out.extend(cells(*i, t, &thresholds, &mut rng));
        }
    }
    // leftover hub thresholds go to the hub-only studies, one each
    for (slot, c) in rare_iter.enumerate() {
        let study = study_id(2 + slot % 39);
        for cell in cells_out.iter_mut().filter(|x| x.study == study && x.test == "AFP") {
            cell.thresholds.push(Threshold::Value(c));
            cell.thresholds.sort_by(|a, b| a.value().unwrap_or(0.0).total_cmp(&b.value().unwrap_or(0.0)));
        }
    }

    let mut spec = ModelSpec::new(ModelVariant::AnovaPlus, CovarianceStructure::Reduced2);
    spec.hierarchical_scale_variances = false;
    finish("hcc", hcc_tests(), cells_out, spec, seed, &mut rng, |state, rng| {
        let l = state.layout().clone();
        let b = l.study_location_block().expect("study block");
        state.set_covariance(b, &corr2([0.35, 0.3], 0.2)).expect("positive definite");
        let (m_a, sd_a) = (0.5f64.ln(), 0.3f64);
        let v = state.values_mut();
        if let Some(h) = l.hyper_m {
            for j in 0..2 {
                v[h.mean[j]] = m_a;
                v[h.log_sd[j]] = sd_a.ln();
            }
        }
        for t in l.tau_m.iter().flatten() {
            for j in 0..2 {
                v[t[j]] = m_a + sd_a * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for t in l.tau_s.iter().flatten() {
            v[t[0]] = 0.15f64.ln();
            v[t[1]] = 0.15f64.ln();
        }
    })
}

fn prostate_tests() -> Vec<TestTruth> {
    vec![
        continuous("4K", "4Kscore", 20.0, 0.78, 0.71, [0.1, 0.3]),
        continuous("PCA3", "PCA3", 35.0, 0.74, 0.49, [0.2, 0.4]),
        continuous("PHI", "Prostate Health Index", 35.0, 0.86, 0.49, [-0.8, -0.6]),
        binary("SelectMDx", "SelectMDx", 0.55, 0.76),
    ]
}

/// The prostate-shaped analog, drawn under meta-regression with
/// block-diagonal covariance.
pub fn prostate_analog(seed: u64) -> Analog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: [(&str, &[f64], f64); 3] = [
        ("4K", &[7.5, 10.0, 15.0, 20.0, 25.0], 20.0),
        ("PCA3", &[20.0, 25.0, 35.0, 50.0], 35.0),
        ("PHI", &[25.0, 27.0, 30.0, 35.0, 40.0, 45.0], 35.0),
    ];
    let mut cells_out = Vec::new();
    for i in 1..=37 {
        let tests: Vec<&str> = match i {
            1..=12 => vec!["PHI"],
            13..=20 => vec!["4K"],
            21..=27 => vec!["PCA3"],
            28..=30 => vec!["SelectMDx"],
            31..=33 => vec!["PHI", "4K"],
            34 | 35 => vec!["PCA3", "PHI"],
            36 => vec!["SelectMDx", "PCA3"],
            _ => vec!["SelectMDx", "PHI"],
        };
        // in shared studies only the first-listed test reaches its reference
        for (pos, &t) in tests.iter().enumerate() {
            let thresholds = match pools.iter().find(|p| p.0 == t) {
                None => vec![Threshold::NotApplicable],
                Some(&(_, pool, c)) => {
                    let shared = tests.len() > 1;
                    let allowed: Vec<f64> = pool.iter().copied().filter(|&x| !(shared && (pos > 0 || tests[0] == "SelectMDx" || i >= 31) && x == c)).collect();
                    let must = (!shared && rng.random_bool(0.8)).then_some(c);
                    pick(&allowed, rng.random_range(1..=3), must, &mut rng)
                }
            };
            cells_out.extend(cells(i, t, &thresholds, &mut rng));
        }
    }
    let spec = ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::BlockDiag22);
    finish("prostate", prostate_tests(), cells_out, spec, seed, &mut rng, |state, _| {
        let l = state.layout().clone();
        for (bi, b) in l.blocks.iter().enumerate() {
            let sd = if b.label.ends_with(":scale") { [0.2, 0.2] } else { [0.5, 0.4] };
            state.set_covariance(bi, &corr2(sd, -0.3)).expect("positive definite");
        }
    })
}

/// Three continuous tests in 20 studies, three thresholds per reported
/// series, drawn under ANOVA with the reduced covariance. Every study reports
/// at least two of the tests.
pub fn small_network(seed: u64) -> Analog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tests = vec![
        continuous("A", "marker A", 10.0, 0.75, 0.80, [0.0, 0.2]),
        continuous("B", "marker B", 5.0, 0.65, 0.90, [-0.2, 0.1]),
        continuous("C", "marker C", 50.0, 0.85, 0.70, [0.3, 0.3]),
    ];
    let pools: [&[f64]; 3] = [&[4.0, 6.0, 8.0, 10.0, 12.0, 15.0, 20.0], &[2.0, 3.0, 4.0, 5.0, 7.0, 9.0], &[20.0, 30.0, 40.0, 50.0, 70.0, 100.0]];
    let mut cells_out = Vec::new();
    for i in 1..=20 {
        let which: Vec<usize> = if i <= 10 { vec![0, 1, 2] } else { vec![(i % 3), (i + 1) % 3] };
        for k in which {
            let c = tests[k].descriptor.c_star.expect("continuous");
            let thresholds = pick(pools[k], 3, None, &mut rng);
            let thresholds = if rng.random_bool(0.5) && !thresholds.contains(&Threshold::Value(c)) {
                let mut t = thresholds;
                t[0] = Threshold::Value(c);
                t
            } else {
                thresholds
            };
            cells_out.extend(cells(i, &tests[k].descriptor.id, &thresholds, &mut rng));
        }
    }
    let spec = ModelSpec::new(ModelVariant::Anova, CovarianceStructure::Reduced2);
    finish("small", tests, cells_out, spec, seed, &mut rng, |state, _| {
        let l = state.layout().clone();
        let b = l.study_location_block().expect("study block");
        state.set_covariance(b, &corr2([0.4, 0.3], 0.3)).expect("positive definite");
        let v = state.values_mut();
        for t in l.tau_m.iter().flatten() {
            v[t[0]] = 0.3f64.ln();
            v[t[1]] = 0.3f64.ln();
        }
        for t in l.tau_s.iter().flatten() {
            v[t[0]] = 0.15f64.ln();
            v[t[1]] = 0.15f64.ln();
        }
    })
}

/// An analog by name: `hcc`, `prostate` or `small`.
pub fn preset(name: &str, seed: u64) -> Option<Analog> {
    match name {
        "hcc" => Some(hcc_analog(seed)),
        "prostate" => Some(prostate_analog(seed)),
        "small" => Some(small_network(seed)),
        _ => None,
    }
}

/// The HCC-shaped analog as shipped under `data/`.
pub fn bundled_hcc() -> Dataset {
    parse_dataset_str(HCC_CSV).expect("bundled data parse")
}

/// The prostate-shaped analog as shipped under `data/`.
pub fn bundled_prostate() -> Dataset {
    parse_dataset_str(PROSTATE_CSV).expect("bundled data parse")
}
