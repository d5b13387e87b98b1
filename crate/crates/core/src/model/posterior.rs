//! The joint log-posterior as a sum of local terms.
//!
//! Each term depends on a handful of flat coordinates, so a sampler that
//! changes one coordinate only re-evaluates the terms listed for it. Term
//! values are on the sampling scale: natural-parameter densities plus the
//! Jacobian of the log and Cholesky transforms.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{build_layout, Layout, ModelError, ModelSpec, ParameterState, WishartConvention};
use crate::dataset::{Dataset, SeriesKey};
use crate::likelihood::{chain_log_coefficients, chain_logit_gradient, chain_loglik_with, saturated_loglik, AccuracyParams};
use crate::math::{ln_mvgamma, normal_logpdf, packed_index, LN_2PI};

pub type TermId = usize;

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Series(usize),
    Member(usize),
    Interaction { coord: usize, log_tau: usize },
    FixedPrior(usize),
    CovPrior(usize),
    Tau { coord: usize, hyper: Option<(usize, usize)> },
    HyperMean(usize),
    HyperSd(usize),
}

#[derive(Debug, Clone)]
struct CompiledSeries {
    key: SeriesKey,
    pair: usize,
    group: usize,
    group_size: u64,
    positives: Vec<u64>,
    log_ratio: Vec<f64>,
    continuous: bool,
    c_star: f64,
    loc: Vec<usize>,
    scale: Vec<usize>,
    ln_coef: f64,
    saturated: f64,
}

impl CompiledSeries {
    fn params(&self, v: &[f64]) -> (f64, f64) {
        let mu = self.loc.iter().map(|&c| v[c]).sum::<f64>();
        let ls = self.scale.iter().map(|&c| v[c]).sum::<f64>();
        (mu, ls)
    }

    fn loglik(&self, v: &[f64]) -> f64 {
        let (mu, ls) = self.params(v);
        if self.continuous {
            let inv = (-ls).exp();
            chain_loglik_with(self.group_size, &self.positives, self.ln_coef, |t| mu + self.log_ratio[t] * inv)
        } else {
            chain_loglik_with(self.group_size, &self.positives, self.ln_coef, |_| mu)
        }
    }
}

#[derive(Debug, Clone)]
struct BlockConst {
    df: f64,
    log_norm: f64,
}

/// A model compiled against a dataset (or against no data, for prior-only
/// evaluation).
#[derive(Debug, Clone)]
pub struct Model {
    layout: Arc<Layout>,
    series: Vec<CompiledSeries>,
    terms: Vec<Term>,
    coord_terms: Vec<Vec<TermId>>,
    block_consts: Vec<BlockConst>,
    fixed_sd: f64,
    saturated: f64,
}

impl Model {
    pub fn new(d: &Dataset, spec: &ModelSpec) -> Result<Model, ModelError> {
        let layout = Arc::new(build_layout(d, spec)?);
        Model::compile(layout, Some(d))
    }

    /// Compiles against a given layout, which must be the one the dataset and
    /// its spec produce.
    pub fn with_layout(d: &Dataset, layout: Arc<Layout>) -> Result<Model, ModelError> {
        let rebuilt = build_layout(d, &layout.spec)?;
        if rebuilt != *layout {
            return Err(ModelError::LayoutMismatch("layout was built from a different dataset or spec".into()));
        }
        Model::compile(layout, Some(d))
    }

    /// Prior and random-effects terms only.
    pub fn without_data(layout: Arc<Layout>) -> Model {
        Model::compile(layout, None).expect("no data to mismatch")
    }

    fn compile(layout: Arc<Layout>, d: Option<&Dataset>) -> Result<Model, ModelError> {
        let l = &layout;
        let mut series = Vec::new();
        if let Some(d) = d {
            for s in d.series() {
                let study = l.studies.binary_search(&s.study_id).map_err(|_| mismatch(&s.study_id))?;
                let test = l.test_index(&s.test_id).ok_or_else(|| mismatch(&s.test_id))?;
                let pair = l.pair_index(study, test).ok_or_else(|| mismatch(&s.study_id))?;
                let j = s.group.index();
                let info = &l.tests[test];
                let c_star = info.c_star.unwrap_or(1.0);
                let log_ratio =
                    s.thresholds.iter().map(|t| t.value().map_or(0.0, |c| (c_star / c).ln())).collect();
                let mut loc = vec![l.m[test][j], l.eps[pair][j]];
                loc.extend(l.eta[study].map(|e| e[j]));
                let mut scale = Vec::new();
                if let Some(sc) = l.s[test] {
                    scale.push(sc[j]);
                    scale.extend(l.u[pair].map(|u| u[j]));
                    scale.extend(l.gamma[study].map(|g| g[j]));
                }
                series.push(CompiledSeries {
                    key: s.key(),
                    pair,
                    group: j,
                    group_size: s.group_size,
                    positives: s.positives.clone(),
                    log_ratio,
                    continuous: info.is_continuous(),
                    c_star,
                    loc,
                    scale,
                    ln_coef: chain_log_coefficients(s.group_size, &s.positives).expect("validated counts"),
                    saturated: saturated_loglik(s),
                });
            }
        }

        let mut terms: Vec<Term> = (0..series.len()).map(Term::Series).collect();
        terms.extend((0..l.members.len()).map(Term::Member));
        if l.spec.variant.is_anova() {
            for (p, &(_, k)) in l.pairs.iter().enumerate() {
                for j in 0..2 {
                    terms.push(Term::Interaction { coord: l.eps[p][j], log_tau: l.tau_m[k].expect("tau_m")[j] });
                    if let (Some(u), Some(ts)) = (l.u[p], l.tau_s[k]) {
                        terms.push(Term::Interaction { coord: u[j], log_tau: ts[j] });
                    }
                }
            }
        }
        for k in 0..l.tests.len() {
            terms.extend(l.m[k].iter().map(|&c| Term::FixedPrior(c)));
            if let Some(s) = l.s[k] {
                terms.extend(s.iter().map(|&c| Term::FixedPrior(c)));
            }
        }
        terms.extend((0..l.blocks.len()).map(Term::CovPrior));
        for k in 0..l.tests.len() {
            for j in 0..2 {
                if let Some(t) = l.tau_m[k] {
                    terms.push(Term::Tau { coord: t[j], hyper: l.hyper_m.map(|h| (h.mean[j], h.log_sd[j])) });
                }
                if let Some(t) = l.tau_s[k] {
                    terms.push(Term::Tau { coord: t[j], hyper: l.hyper_s.map(|h| (h.mean[j], h.log_sd[j])) });
                }
            }
        }
        for h in l.hyper_m.iter().chain(&l.hyper_s) {
            terms.extend(h.mean.iter().map(|&c| Term::HyperMean(c)));
            terms.extend(h.log_sd.iter().map(|&c| Term::HyperSd(c)));
        }

        let mut coord_terms: Vec<Vec<TermId>> = vec![Vec::new(); l.dim()];
        for (id, t) in terms.iter().enumerate() {
            let deps: Vec<usize> = match t {
                Term::Series(s) => series[*s].loc.iter().chain(&series[*s].scale).copied().collect(),
                Term::Member(m) => {
                    let mem = &l.members[*m];
                    mem.coords.iter().copied().chain(l.blocks[mem.block].coords()).collect()
                }
                Term::Interaction { coord, log_tau } => vec![*coord, *log_tau],
                Term::FixedPrior(c) | Term::HyperMean(c) | Term::HyperSd(c) => vec![*c],
                Term::CovPrior(b) => l.blocks[*b].coords().collect(),
                Term::Tau { coord, hyper } => {
                    let mut v = vec![*coord];
                    if let Some((a, b)) = hyper {
                        v.extend([*a, *b]);
                    }
                    v
                }
            };
            for c in deps {
                if coord_terms[c].last() != Some(&id) {
                    coord_terms[c].push(id);
                }
            }
        }

        let block_consts = l
            .blocks
            .iter()
            .map(|b| {
                let df = l.spec.wishart_df(b.dim);
                let d = b.dim as f64;
                BlockConst { df, log_norm: -(df * d / 2.0) * std::f64::consts::LN_2 - ln_mvgamma(b.dim, df / 2.0) }
            })
            .collect();
        let saturated = series.iter().map(|s| s.saturated).sum();
        Ok(Model {
            fixed_sd: l.spec.priors.fixed_effect_variance.sqrt(),
            layout,
            series,
            terms,
            coord_terms,
            block_consts,
            saturated,
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.layout.spec
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// Terms whose value depends on the coordinate.
    pub fn terms_of(&self, coord: usize) -> &[TermId] {
        &self.coord_terms[coord]
    }

    pub fn is_series_term(&self, id: TermId) -> bool {
        matches!(self.terms[id], Term::Series(_))
    }

    /// Term value on the sampling scale.
    pub fn term_value(&self, id: TermId, v: &[f64]) -> f64 {
        let (natural, jac) = self.term_parts(id, v);
        natural + jac
    }

    fn term_parts(&self, id: TermId, v: &[f64]) -> (f64, f64) {
        let l = &self.layout;
        let pr = &l.spec.priors;
        match &self.terms[id] {
            Term::Series(s) => (self.series[*s].loglik(v), 0.0),
            Term::Member(m) => {
                let mem = &l.members[*m];
                let b = &l.blocks[mem.block];
                (mvn_logpdf_packed(&mem.coords, &v[b.coords()], v), 0.0)
            }
            Term::Interaction { coord, log_tau } => (normal_logpdf(v[*coord], 0.0, v[*log_tau].exp()), 0.0),
            Term::FixedPrior(c) => (normal_logpdf(v[*c], 0.0, self.fixed_sd), 0.0),
            Term::CovPrior(bi) => self.cov_prior(*bi, v),
            Term::Tau { coord, hyper } => {
                let lt = v[*coord];
                let natural = match hyper {
                    Some((mean, lsd)) => normal_logpdf(lt, v[*mean], v[*lsd].exp()) - lt,
                    None => uniform_logpdf(lt.exp(), pr.tau_upper),
                };
                (natural, lt)
            }
            Term::HyperMean(c) => {
                let upper = pr.hyper_location_upper.ln();
                // exp(m_a) ~ U(0, A) gives density e^{m_a}/A on m_a < ln A
                (if v[*c] < upper { v[*c] - upper } else { f64::NEG_INFINITY }, 0.0)
            }
            Term::HyperSd(c) => (uniform_logpdf(v[*c].exp(), pr.hyper_scale_upper), v[*c]),
        }
    }

    fn cov_prior(&self, bi: usize, v: &[f64]) -> (f64, f64) {
        let b = &self.layout.blocks[bi];
        let packed = &v[b.coords()];
        let d = b.dim;
        let k = &self.block_consts[bi];
        let theta: Vec<f64> = (0..d).map(|i| packed[packed_index(i, i)]).collect();
        let log_det = 2.0 * theta.iter().sum::<f64>();
        let natural = match self.layout.spec.wishart_convention {
            WishartConvention::Precision => {
                let tr_inv = inverse_frobenius_sq(d, packed);
                k.log_norm - (k.df + d as f64 + 1.0) / 2.0 * log_det - 0.5 * tr_inv
            }
            WishartConvention::Covariance => {
                let mut tr = 0.0;
                for i in 0..d {
                    for j in 0..=i {
                        let x = if i == j { theta[i].exp() } else { packed[packed_index(i, j)] };
                        tr += x * x;
                    }
                }
                k.log_norm + (k.df - d as f64 - 1.0) / 2.0 * log_det - 0.5 * tr
            }
        };
        let jac = d as f64 * std::f64::consts::LN_2
            + theta.iter().enumerate().map(|(i, t)| (d - i + 1) as f64 * t).sum::<f64>();
        (natural, jac)
    }

    /// Human-readable name of a term, for error messages.
    pub fn describe_term(&self, id: TermId) -> String {
        let l = &self.layout;
        match &self.terms[id] {
            Term::Series(s) => format!("likelihood of series {}", self.series[*s].key),
            Term::Member(m) => {
                let mem = &l.members[*m];
                format!("random-effects density of ({})", mem.coords.iter().map(|&c| l.names[c].as_str()).collect::<Vec<_>>().join(", "))
            }
            Term::Interaction { coord, .. } => format!("interaction density of {}", l.names[*coord]),
            Term::FixedPrior(c) | Term::HyperMean(c) | Term::HyperSd(c) | Term::Tau { coord: c, .. } => {
                format!("prior on {}", l.names[*c])
            }
            Term::CovPrior(b) => format!("prior on covariance {}", l.blocks[*b].label),
        }
    }

    /// Pooled empirical logit of each test and group, from the count at the
    /// threshold closest to C* in every series: logit((Σx + ½)/(ΣN + 1)).
    pub fn empirical_logits(&self) -> Vec<[Option<f64>; 2]> {
        let l = &self.layout;
        let mut acc = vec![[(0u64, 0u64); 2]; l.tests.len()];
        for s in &self.series {
            let t = (0..s.log_ratio.len())
                .min_by(|&a, &b| s.log_ratio[a].abs().total_cmp(&s.log_ratio[b].abs()))
                .expect("non-empty series");
            let test = l.pairs[s.pair].1;
            let e = &mut acc[test][s.group];
            e.0 += s.positives[t];
            e.1 += s.group_size;
        }
        acc.iter()
            .map(|g| {
                g.map(|(x, n)| (n > 0).then(|| crate::math::logit((x as f64 + 0.5) / (n as f64 + 1.0))))
            })
            .collect()
    }

    /// Σ of all terms: log-posterior plus log-Jacobian.
    pub fn target(&self, v: &[f64]) -> f64 {
        (0..self.terms.len()).map(|t| self.term_value(t, v)).sum()
    }

    pub fn loglik(&self, v: &[f64]) -> f64 {
        self.series.iter().map(|s| s.loglik(v)).sum()
    }

    /// Sum of the saturated log-likelihoods of every series.
    pub fn saturated_loglik(&self) -> f64 {
        self.saturated
    }

    /// −2 (ℓ − ℓ_sat).
    pub fn residual_deviance(&self, v: &[f64]) -> f64 {
        -2.0 * (self.loglik(v) - self.saturated)
    }

    fn sum_natural(&self, v: &[f64], pick: impl Fn(&Term) -> bool) -> f64 {
        (0..self.terms.len()).filter(|&t| pick(&self.terms[t])).map(|t| self.term_parts(t, v).0).sum()
    }

    pub fn log_prior(&self, v: &[f64]) -> f64 {
        self.sum_natural(v, |t| {
            matches!(t, Term::FixedPrior(_) | Term::CovPrior(_) | Term::Tau { .. } | Term::HyperMean(_) | Term::HyperSd(_))
        })
    }

    pub fn random_effects_logdensity(&self, v: &[f64]) -> Result<f64, ModelError> {
        for b in &self.layout.blocks {
            let bad = b.coords().any(|c| !v[c].is_finite())
                || (0..b.dim).any(|i| !v[b.offset + packed_index(i, i)].exp().is_normal());
            if bad {
                return Err(ModelError::NotPositiveDefinite(b.label.clone()));
            }
        }
        Ok(self.sum_natural(v, |t| matches!(t, Term::Member(_) | Term::Interaction { .. })))
    }

    pub fn log_jacobian(&self, v: &[f64]) -> f64 {
        (0..self.terms.len()).map(|t| self.term_parts(t, v).1).sum()
    }

    pub fn log_posterior(&self, v: &[f64]) -> Result<f64, ModelError> {
        let re = self.random_effects_logdensity(v)?;
        Ok(self.loglik(v) + re + self.log_prior(v))
    }

    /// Per-series location and scale implied by the state.
    pub fn accuracy_params(&self, v: &[f64]) -> BTreeMap<SeriesKey, AccuracyParams> {
        self.series
            .iter()
            .map(|s| {
                let (mu, ls) = s.params(v);
                let a = if s.continuous {
                    AccuracyParams::continuous(mu, ls, s.c_star)
                } else {
                    AccuracyParams::binary(mu)
                };
                (s.key.clone(), a)
            })
            .collect()
    }

    /// (pair, group) of each compiled series, in dataset order.
    pub fn series_index(&self) -> Vec<(usize, usize)> {
        self.series.iter().map(|s| (s.pair, s.group)).collect()
    }

    /// Analytic gradient of the log-posterior with respect to the fixed and
    /// random effects, variance components held fixed. Other entries are 0.
    pub fn effect_gradient(&self, v: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut g = vec![0.0; v.len()];
        for s in &self.series {
            let (mu, ls) = s.params(v);
            let inv = if s.continuous { (-ls).exp() } else { 0.0 };
            let logits: Vec<f64> = s.log_ratio.iter().map(|r| mu + r * inv).collect();
            let gl = chain_logit_gradient(s.group_size, &s.positives, &logits);
            let d_mu: f64 = gl.iter().sum();
            let d_ls: f64 = gl.iter().zip(&s.log_ratio).map(|(a, r)| -a * r * inv).sum();
            for &c in &s.loc {
                g[c] += d_mu;
            }
            for &c in &s.scale {
                g[c] += d_ls;
            }
        }
        for t in &self.terms {
            match t {
                Term::FixedPrior(c) => g[*c] -= v[*c] / (self.fixed_sd * self.fixed_sd),
                Term::Interaction { coord, log_tau } => g[*coord] -= v[*coord] * (-2.0 * v[*log_tau]).exp(),
                Term::Member(m) => {
                    let mem = &l.members[*m];
                    let packed = &v[l.blocks[mem.block].coords()];
                    let x: Vec<f64> = mem.coords.iter().map(|&c| v[c]).collect();
                    let prec_x = solve_packed(&x, packed);
                    for (c, px) in mem.coords.iter().zip(prec_x) {
                        g[*c] -= px;
                    }
                }
                _ => {}
            }
        }
        g
    }
}

fn mismatch(what: &str) -> ModelError {
    ModelError::LayoutMismatch(format!("`{what}` is not in the layout"))
}

fn uniform_logpdf(x: f64, upper: f64) -> f64 {
    if x > 0.0 && x < upper {
        -upper.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn l_entry(packed: &[f64], i: usize, j: usize) -> f64 {
    let v = packed[packed_index(i, j)];
    if i == j {
        v.exp()
    } else {
        v
    }
}

/// ln N(x; 0, LLᵀ) with L given packed (log-diagonal) and x = v[coords],
/// using the leading block when x is shorter than L.
fn mvn_logpdf_packed(coords: &[usize], packed: &[f64], v: &[f64]) -> f64 {
    let k = coords.len();
    let mut y = [0.0f64; 4];
    let mut quad = 0.0;
    let mut log_det_half = 0.0;
    for i in 0..k {
        let mut s = v[coords[i]];
        for j in 0..i {
            s -= l_entry(packed, i, j) * y[j];
        }
        let lii = packed[packed_index(i, i)];
        y[i] = s * (-lii).exp();
        quad += y[i] * y[i];
        log_det_half += lii;
    }
    -0.5 * k as f64 * LN_2PI - log_det_half - 0.5 * quad
}

/// Σ_k⁻¹ x for the leading k×k block of Σ = LLᵀ.
fn solve_packed(x: &[f64], packed: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = x[i];
        for j in 0..i {
            s -= l_entry(packed, i, j) * y[j];
        }
        y[i] = s / l_entry(packed, i, i);
    }
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in i + 1..k {
            s -= l_entry(packed, j, i) * z[j];
        }
        z[i] = s / l_entry(packed, i, i);
    }
    z
}

/// ‖L⁻¹‖²_F = tr(Σ⁻¹).
fn inverse_frobenius_sq(d: usize, packed: &[f64]) -> f64 {
    let mut total = 0.0;
    for col in 0..d {
        let mut y = [0.0f64; 4];
        for i in col..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for j in col..i {
                s -= l_entry(packed, i, j) * y[j];
            }
            y[i] = s / l_entry(packed, i, i);
            total += y[i] * y[i];
        }
    }
    total
}

fn check_spec(state: &ParameterState, spec: &ModelSpec) -> Result<(), ModelError> {
    if state.layout().spec != *spec {
        return Err(ModelError::LayoutMismatch(format!(
            "state was laid out for {} but {} was requested",
            state.layout().spec,
            spec
        )));
    }
    Ok(())
}

/// Sum of prior log-densities of m, s, the covariance matrices, τ and the
/// hyper-parameters, on their natural scales.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec) -> Result<f64, ModelError> {
    check_spec(state, spec)?;
    Ok(Model::without_data(state.layout().clone()).log_prior(state.values()))
}

pub fn random_effects_logdensity(state: &ParameterState, spec: &ModelSpec) -> Result<f64, ModelError> {
    check_spec(state, spec)?;
    Model::without_data(state.layout().clone()).random_effects_logdensity(state.values())
}

/// Log-Jacobian of the map from flat coordinates to natural parameters.
pub fn log_jacobian(state: &ParameterState) -> f64 {
    Model::without_data(state.layout().clone()).log_jacobian(state.values())
}

pub fn log_posterior(d: &Dataset, state: &ParameterState, spec: &ModelSpec) -> Result<f64, ModelError> {
    check_spec(state, spec)?;
    Model::with_layout(d, state.layout().clone())?.log_posterior(state.values())
}
