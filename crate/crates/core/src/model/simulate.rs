//! Synthetic data drawn from the model itself, for recovery experiments.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Layout, ModelError, ModelSpec, ParameterState};
use crate::dataset::{Dataset, DiseaseGroup, TestDescriptor, Threshold, ThresholdSeries};
use crate::likelihood::{positive_prob, AccuracyParams};
use crate::math::chol_from_packed;

/// One (study, test, group) cell of a design: which thresholds are reported
/// and how many patients are in the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub study: String,
    pub test: String,
    pub group: DiseaseGroup,
    pub thresholds: Vec<Threshold>,
    pub group_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub tests: Vec<TestDescriptor>,
    pub cells: Vec<DesignCell>,
}

impl SimulationDesign {
    /// The design as a dataset with all counts zero; its layout is the one a
    /// simulated dataset will have.
    pub fn skeleton(&self) -> Result<Dataset, ModelError> {
        let series = self
            .cells
            .iter()
            .map(|c| ThresholdSeries {
                study_id: c.study.clone(),
                test_id: c.test.clone(),
                group: c.group,
                group_size: c.group_size,
                thresholds: c.thresholds.clone(),
                positives: vec![0; c.thresholds.len()],
            })
            .collect();
        Ok(Dataset::new(self.tests.clone(), series)?)
    }
}

/// Draws all random effects given the fixed effects and variance components
/// already in `state`.
pub fn draw_random_effects(state: &mut ParameterState, rng: &mut impl Rng) {
    let layout = state.layout().clone();
    let v = state.values_mut();
    for mem in &layout.members {
        let b = &layout.blocks[mem.block];
        let l = chol_from_packed(b.dim, &v[b.coords()]);
        let z: Vec<f64> = (0..mem.coords.len()).map(|_| rng.sample(StandardNormal)).collect();
        for (i, &c) in mem.coords.iter().enumerate() {
            v[c] = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
        }
    }
    if layout.spec.variant.is_anova() {
        for (p, &(_, k)) in layout.pairs.iter().enumerate() {
            for j in 0..2 {
                let tm = v[layout.tau_m[k].expect("tau_m")[j]].exp();
                v[layout.eps[p][j]] = tm * rng.sample::<f64, _>(StandardNormal);
                if let (Some(u), Some(ts)) = (layout.u[p], layout.tau_s[k]) {
                    let s = v[ts[j]].exp();
                    v[u[j]] = s * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

fn accuracy(layout: &Layout, state: &ParameterState, study: usize, test: usize, j: usize) -> AccuracyParams {
    let pair = layout.pair_index(study, test).expect("pair in layout");
    let (mu, ls) = state.series_params(pair, j);
    match layout.tests[test].c_star {
        Some(c) => AccuracyParams::continuous(mu, ls, c),
        None => AccuracyParams::binary(mu),
    }
}

/// Draws counts by the sequential binomial scheme: x₁ ~ Bin(N, p₁), then
/// x_t ~ Bin(x_{t−1}, p_t / p_{t−1}). Deterministic in `seed`.
pub fn simulate_dataset(
    spec: &ModelSpec,
    true_state: &ParameterState,
    design: &SimulationDesign,
    seed: u64,
) -> Result<Dataset, ModelError> {
    let layout: Arc<Layout> = true_state.layout().clone();
    if layout.spec != *spec {
        return Err(ModelError::LayoutMismatch("true state was laid out for a different spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Vec::with_capacity(design.cells.len());
    for cell in &design.cells {
        let study = layout
            .studies
            .binary_search(&cell.study)
            .map_err(|_| ModelError::LayoutMismatch(format!("study `{}` not in layout", cell.study)))?;
        let test = layout
            .test_index(&cell.test)
            .ok_or_else(|| ModelError::LayoutMismatch(format!("test `{}` not in layout", cell.test)))?;
        let a = accuracy(&layout, true_state, study, test, cell.group.index());
        let mut positives = Vec::with_capacity(cell.thresholds.len());
        let mut prev_n = cell.group_size;
        let mut prev_p = 1.0;
        for &t in &cell.thresholds {
            let p = positive_prob(&a, t)?;
            let cond = if prev_p > 0.0 { (p / prev_p).clamp(0.0, 1.0) } else { 0.0 };
            let x = Binomial::new(prev_n, cond).expect("probability in [0, 1]").sample(&mut rng);
            positives.push(x);
            prev_n = x;
            prev_p = p;
        }
        series.push(ThresholdSeries {
            study_id: cell.study.clone(),
            test_id: cell.test.clone(),
            group: cell.group,
            group_size: cell.group_size,
            thresholds: cell.thresholds.clone(),
            positives,
        });
    }
    Ok(Dataset::new(design.tests.clone(), series)?)
}
