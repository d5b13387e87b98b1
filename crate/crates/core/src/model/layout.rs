use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CovarianceStructure, ModelError, ModelSpec, ModelVariant};
use crate::dataset::{build_network_graph, validate_for_model, Dataset, TestKind};
use crate::math::{packed_index, packed_len};

/// Per-test facts the summaries need without the original dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInfo {
    pub id: String,
    pub name: String,
    pub kind: TestKind,
    pub c_star: Option<f64>,
    pub min_threshold: Option<f64>,
    pub max_threshold: Option<f64>,
    pub n_studies: usize,
}

impl TestInfo {
    pub fn is_continuous(&self) -> bool {
        self.kind == TestKind::Continuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockPart {
    /// (loc₀, loc₁, scale₀, scale₁)
    Full,
    /// (loc₀, loc₁)
    Location,
    /// (scale₀, scale₁)
    Scale,
}

/// A random-effects covariance matrix, stored as a packed lower Cholesky
/// factor with log-diagonal starting at `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovBlock {
    pub label: String,
    pub dim: usize,
    pub part: BlockPart,
    /// Owning test under the independent variant.
    pub test: Option<usize>,
    pub offset: usize,
    pub members: Vec<usize>,
}

impl CovBlock {
    pub fn coords(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + packed_len(self.dim)
    }
}

/// One multivariate-normal random-effects vector. Its coordinates follow the
/// block's order; a shorter vector uses the leading marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub block: usize,
    pub coords: Vec<usize>,
}

/// Coordinates of a hierarchical prior on log-SDs: ln τ ~ N(m_a, σ_a²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub mean: [usize; 2],
    pub log_sd: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordKind {
    FixedLocation,
    FixedScale,
    InteractionLocation,
    InteractionScale,
    StudyLocation,
    StudyScale,
    CholDiag { block: usize },
    CholOffDiag { block: usize },
    LogTauLocation,
    LogTauScale,
    HyperMean,
    HyperLogSd,
}

impl CoordKind {
    pub fn is_fixed_effect(self) -> bool {
        matches!(self, CoordKind::FixedLocation | CoordKind::FixedScale)
    }

    pub fn is_random_effect(self) -> bool {
        matches!(
            self,
            CoordKind::InteractionLocation | CoordKind::InteractionScale | CoordKind::StudyLocation | CoordKind::StudyScale
        )
    }

    pub fn is_variance_component(self) -> bool {
        !self.is_fixed_effect() && !self.is_random_effect()
    }
}

/// Flat parameter vector layout. Depends only on the dataset structure and
/// the model spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub spec: ModelSpec,
    pub tests: Vec<TestInfo>,
    pub studies: Vec<String>,
    /// (study index, test index), sorted.
    pub pairs: Vec<(usize, usize)>,
    pub m: Vec<[usize; 2]>,
    pub s: Vec<Option<[usize; 2]>>,
    pub eps: Vec<[usize; 2]>,
    pub u: Vec<Option<[usize; 2]>>,
    pub eta: Vec<Option<[usize; 2]>>,
    pub gamma: Vec<Option<[usize; 2]>>,
    pub blocks: Vec<CovBlock>,
    pub members: Vec<Member>,
    pub tau_m: Vec<Option<[usize; 2]>>,
    pub tau_s: Vec<Option<[usize; 2]>>,
    pub hyper_m: Option<Hyper>,
    pub hyper_s: Option<Hyper>,
    pub names: Vec<String>,
    pub kinds: Vec<CoordKind>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.tests.iter().position(|t| t.id == id)
    }

    pub fn pair_index(&self, study: usize, test: usize) -> Option<usize> {
        self.pairs.binary_search(&(study, test)).ok()
    }

    pub fn coord(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Pairs of the given test.
    pub fn pairs_of_test(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.pairs.len()).filter(move |&p| self.pairs[p].1 == k)
    }

    /// Pairs of the given study.
    pub fn pairs_of_study(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.pairs.len()).filter(move |&p| self.pairs[p].0 == i)
    }

    /// Covariance block governing a test's location interactions: its own Σ_k
    /// under the independent variant, the shared block under meta-regression.
    pub fn location_block_for_test(&self, k: usize) -> Option<usize> {
        self.blocks.iter().position(|b| {
            matches!(b.part, BlockPart::Full | BlockPart::Location)
                && !self.spec.variant.is_anova()
                && (b.test == Some(k) || b.test.is_none())
        })
    }

    /// Shared study-level location block under the ANOVA variants.
    pub fn study_location_block(&self) -> Option<usize> {
        if !self.spec.variant.is_anova() {
            return None;
        }
        self.blocks.iter().position(|b| matches!(b.part, BlockPart::Full | BlockPart::Location))
    }
}

struct Builder {
    names: Vec<String>,
    kinds: Vec<CoordKind>,
}

impl Builder {
    fn push(&mut self, name: String, kind: CoordKind) -> usize {
        self.names.push(name);
        self.kinds.push(kind);
        self.names.len() - 1
    }

    fn pair(&mut self, base: &str, kind: CoordKind) -> [usize; 2] {
        [self.push(format!("{base},0]"), kind), self.push(format!("{base},1]"), kind)]
    }

    fn chol(&mut self, label: &str, dim: usize, block: usize) -> usize {
        let offset = self.names.len();
        for i in 0..dim {
            for j in 0..=i {
                debug_assert_eq!(self.names.len(), offset + packed_index(i, j));
                let kind = if i == j { CoordKind::CholDiag { block } } else { CoordKind::CholOffDiag { block } };
                self.push(format!("L[{label}][{i},{j}]"), kind);
            }
        }
        offset
    }
}

fn test_info(d: &Dataset) -> Vec<TestInfo> {
    d.tests()
        .iter()
        .map(|t| {
            let values: Vec<f64> =
                d.series_for_test(&t.id).flat_map(|s| s.thresholds.iter().filter_map(|c| c.value())).collect();
            TestInfo {
                id: t.id.clone(),
                name: t.name.clone(),
                kind: t.kind,
                c_star: t.c_star,
                min_threshold: values.iter().copied().reduce(f64::min),
                max_threshold: values.iter().copied().reduce(f64::max),
                n_studies: d.studies_for_test(&t.id).len(),
            }
        })
        .collect()
}

/// Builds the parameter layout after checking the data requirements of the
/// variant.
pub fn build_layout(d: &Dataset, spec: &ModelSpec) -> Result<Layout, ModelError> {
    spec.check()?;
    let report = validate_for_model(d, &build_network_graph(d), spec.variant);
    if !report.is_ok() {
        let reason = report.errors().map(|f| format!("{} ({})", f.rule.label(), f.location)).collect::<Vec<_>>();
        return Err(ModelError::Incompatible { variant: spec.variant, reason: reason.join("; ") });
    }

    let tests = test_info(d);
    let studies: Vec<String> = d.studies().to_vec();
    let pairs: Vec<(usize, usize)> = d
        .study_test_pairs()
        .into_iter()
        .map(|(s, t)| (d.study_index(s).expect("study"), d.test_index(t).expect("test")))
        .collect();
    let variant = spec.variant;
    let cov = spec.cov;
    let anova = variant.is_anova();
    let cont: Vec<bool> = tests.iter().map(|t| t.is_continuous()).collect();
    let any_cont = cont.iter().any(|&c| c);

    let mut b = Builder { names: Vec::new(), kinds: Vec::new() };
    let m: Vec<[usize; 2]> = tests.iter().map(|t| b.pair(&format!("m[{}", t.id), CoordKind::FixedLocation)).collect();
    let s: Vec<Option<[usize; 2]>> = tests
        .iter()
        .map(|t| t.is_continuous().then(|| b.pair(&format!("s[{}", t.id), CoordKind::FixedScale)))
        .collect();
    let pair_name = |p: &(usize, usize)| format!("{},{}", studies[p.0], tests[p.1].id);
    let eps: Vec<[usize; 2]> =
        pairs.iter().map(|p| b.pair(&format!("eps[{}", pair_name(p)), CoordKind::InteractionLocation)).collect();
    // Scale interactions: always under ANOVA (independent normals), and under
    // the other variants whenever the covariance includes scale effects.
    let has_u = |k: usize| cont[k] && (anova || cov != CovarianceStructure::Reduced2);
    let u: Vec<Option<[usize; 2]>> = pairs
        .iter()
        .map(|p| has_u(p.1).then(|| b.pair(&format!("u[{}", pair_name(p)), CoordKind::InteractionScale)))
        .collect();

    let study_has_cont: Vec<bool> =
        (0..studies.len()).map(|i| pairs.iter().any(|&(si, k)| si == i && cont[k])).collect();
    let eta: Vec<Option<[usize; 2]>> = studies
        .iter()
        .map(|st| anova.then(|| b.pair(&format!("eta[{st}"), CoordKind::StudyLocation)))
        .collect();
    let gamma: Vec<Option<[usize; 2]>> = studies
        .iter()
        .enumerate()
        .map(|(i, st)| {
            (anova && cov != CovarianceStructure::Reduced2 && study_has_cont[i])
                .then(|| b.pair(&format!("gamma[{st}"), CoordKind::StudyScale))
        })
        .collect();

    let mut blocks: Vec<CovBlock> = Vec::new();
    let mut members: Vec<Member> = Vec::new();
    let mut add_block = |b: &mut Builder, label: String, dim: usize, part: BlockPart, test: Option<usize>| {
        let idx = blocks.len();
        let offset = b.chol(&label, dim, idx);
        blocks.push(CovBlock { label, dim, part, test, offset, members: Vec::new() });
        idx
    };
    // Member vectors in (loc₀, loc₁, scale₀, scale₁) order.
    let mut vectors: Vec<(Option<usize>, [usize; 2], Option<[usize; 2]>)> = Vec::new();
    if anova {
        for i in 0..studies.len() {
            vectors.push((None, eta[i].expect("eta"), gamma[i]));
        }
    } else {
        for (p, &(_, k)) in pairs.iter().enumerate() {
            vectors.push((Some(k), eps[p], u[p]));
        }
    }
    let owners: Vec<Option<usize>> = if variant == ModelVariant::Independent {
        (0..tests.len()).map(Some).collect()
    } else {
        vec![None]
    };
    for owner in owners {
        let (tag, owner_cont) = match owner {
            Some(k) => (format!("Sigma:{}", tests[k].id), cont[k]),
            None => (if anova { "Sigma:study".to_string() } else { "Sigma:shared".to_string() }, any_cont),
        };
        let with_scale = owner_cont && cov != CovarianceStructure::Reduced2;
        let (loc_block, scale_block) = if with_scale && cov == CovarianceStructure::Full4 {
            let full = add_block(&mut b, tag, 4, BlockPart::Full, owner);
            (full, full)
        } else {
            let loc = add_block(&mut b, format!("{tag}:loc"), 2, BlockPart::Location, owner);
            let scale =
                if with_scale { add_block(&mut b, format!("{tag}:scale"), 2, BlockPart::Scale, owner) } else { usize::MAX };
            (loc, scale)
        };
        for (vk, loc, scale) in &vectors {
            if variant == ModelVariant::Independent && *vk != owner {
                continue;
            }
            match scale {
                Some(sc) if loc_block == scale_block => {
                    members.push(Member { block: loc_block, coords: vec![loc[0], loc[1], sc[0], sc[1]] });
                }
                Some(sc) => {
                    members.push(Member { block: loc_block, coords: loc.to_vec() });
                    members.push(Member { block: scale_block, coords: sc.to_vec() });
                }
                None => members.push(Member { block: loc_block, coords: loc.to_vec() }),
            }
        }
    }
    for (mi, mem) in members.iter().enumerate() {
        blocks[mem.block].members.push(mi);
    }

    let tau_m: Vec<Option<[usize; 2]>> = tests
        .iter()
        .map(|t| anova.then(|| b.pair(&format!("log_tau_m[{}", t.id), CoordKind::LogTauLocation)))
        .collect();
    let tau_s: Vec<Option<[usize; 2]>> = tests
        .iter()
        .map(|t| (anova && t.is_continuous()).then(|| b.pair(&format!("log_tau_s[{}", t.id), CoordKind::LogTauScale)))
        .collect();
    let hyper = |b: &mut Builder, tag: &str| {
        let mean = [0, 1].map(|j| b.push(format!("m_a{tag}[{j}]"), CoordKind::HyperMean));
        let log_sd = [0, 1].map(|j| b.push(format!("log_sigma_a{tag}[{j}]"), CoordKind::HyperLogSd));
        Hyper { mean, log_sd }
    };
    let hyper_m = (variant == ModelVariant::AnovaPlus).then(|| hyper(&mut b, ""));
    let hyper_s = (variant == ModelVariant::AnovaPlus && spec.hierarchical_scale_variances && any_cont)
        .then(|| hyper(&mut b, "_s"));

    let used: BTreeSet<usize> = members.iter().map(|m| m.block).collect();
    debug_assert_eq!(used.len(), blocks.len());

    Ok(Layout {
        spec: spec.clone(),
        tests,
        studies,
        pairs,
        m,
        s,
        eps,
        u,
        eta,
        gamma,
        blocks,
        members,
        tau_m,
        tau_s,
        hyper_m,
        hyper_s,
        names: b.names,
        kinds: b.kinds,
    })
}
