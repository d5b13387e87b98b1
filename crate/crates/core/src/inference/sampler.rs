//! Adaptive Metropolis-within-Gibbs.
//!
//! One iteration visits, in a fixed order:
//!
//! 1. a random-walk update of every free coordinate;
//! 2. shift moves that add δ to a fixed effect (or study effect) and subtract
//!    it from the interactions built on it, leaving the likelihood unchanged;
//! 3. rescale moves that move ln τ by δ and multiply the interactions it
//!    governs by e^δ, and likewise scale each covariance matrix by e^{2δ}
//!    together with the random effects drawn from it;
//! 4. covariance updates: conjugate Wishart draws under the precision
//!    convention, block random walks on the Cholesky coordinates otherwise.
//!
//! Proposal scales adapt in batches during warmup only and are frozen after.
//! Each chain owns a ChaCha8 stream derived from (seed, chain index), so
//! results do not depend on how many threads run the chains.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChainDraws, InferenceError, PosteriorSamples, SamplerConfig};
use crate::dataset::Dataset;
use crate::math::packed_from_chol;
use crate::model::{CoordKind, Model, ModelSpec, TermId, WishartConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Scalar,
    Shift,
    Rescale,
    Block,
    Gibbs,
}

/// Acceptance counts of one move over the retained phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub name: String,
    pub kind: MoveKind,
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Move {
    name: String,
    kind: MoveKind,
    /// Coordinates moved by +δ (block moves: each by its own δ).
    primary: Vec<usize>,
    /// Shift: moved by −δ. Rescale: multiplied by e^δ.
    partners: Vec<usize>,
    block: Option<usize>,
    terms: Vec<TermId>,
    target: f64,
}

fn union_terms(model: &Model, coords: impl IntoIterator<Item = usize>) -> Vec<TermId> {
    let set: BTreeSet<TermId> = coords.into_iter().flat_map(|c| model.terms_of(c).iter().copied()).collect();
    set.into_iter().collect()
}

fn free_coords(model: &Model, cfg: &SamplerConfig) -> Result<Vec<bool>, InferenceError> {
    let l = model.layout();
    let mut free: Vec<bool> = l
        .kinds
        .iter()
        .map(|k| {
            !((cfg.hold.fixed_effects && k.is_fixed_effect())
                || (cfg.hold.random_effects && k.is_random_effect())
                || (cfg.hold.variance_components && k.is_variance_component()))
        })
        .collect();
    for name in &cfg.hold.coords {
        let c = l.coord(name).ok_or_else(|| InferenceError::Config(format!("hold: unknown coordinate `{name}`")))?;
        free[c] = false;
    }
    Ok(free)
}

fn build_moves(model: &Model, cfg: &SamplerConfig) -> Result<Vec<Move>, InferenceError> {
    let l = model.layout();
    let free = free_coords(model, cfg)?;
    let gibbs = l.spec.wishart_convention == WishartConvention::Precision;
    let mut moves = Vec::new();

    for c in 0..l.dim() {
        let is_chol = matches!(l.kinds[c], CoordKind::CholDiag { .. } | CoordKind::CholOffDiag { .. });
        if !free[c] || (is_chol && gibbs) {
            continue;
        }
        moves.push(Move {
            name: l.names[c].clone(),
            kind: MoveKind::Scalar,
            primary: vec![c],
            partners: Vec::new(),
            block: None,
            terms: model.terms_of(c).to_vec(),
            target: cfg.target_accept,
        });
    }

    let shift = |primary: usize, partners: Vec<usize>, moves: &mut Vec<Move>| {
        if !free[primary] || partners.is_empty() || partners.iter().any(|&p| !free[p]) {
            return;
        }
        moves.push(Move {
            name: format!("shift:{}", l.names[primary]),
            kind: MoveKind::Shift,
            terms: union_terms(model, std::iter::once(primary).chain(partners.iter().copied())),
            primary: vec![primary],
            partners,
            block: None,
            target: cfg.target_accept,
        });
    };
    for k in 0..l.tests.len() {
        let pairs: Vec<usize> = l.pairs_of_test(k).collect();
        for j in 0..2 {
            shift(l.m[k][j], pairs.iter().map(|&p| l.eps[p][j]).collect(), &mut moves);
            if let Some(s) = l.s[k] {
                shift(s[j], pairs.iter().filter_map(|&p| l.u[p].map(|u| u[j])).collect(), &mut moves);
            }
        }
    }
    for i in 0..l.studies.len() {
        let pairs: Vec<usize> = l.pairs_of_study(i).collect();
        for j in 0..2 {
            if let Some(e) = l.eta[i] {
                shift(e[j], pairs.iter().map(|&p| l.eps[p][j]).collect(), &mut moves);
            }
            if let Some(g) = l.gamma[i] {
                shift(g[j], pairs.iter().filter_map(|&p| l.u[p].map(|u| u[j])).collect(), &mut moves);
            }
        }
    }

    for k in 0..l.tests.len() {
        let pairs: Vec<usize> = l.pairs_of_test(k).collect();
        for j in 0..2 {
            let groups = [
                (l.tau_m[k].map(|t| t[j]), pairs.iter().map(|&p| l.eps[p][j]).collect::<Vec<_>>()),
                (l.tau_s[k].map(|t| t[j]), pairs.iter().filter_map(|&p| l.u[p].map(|u| u[j])).collect()),
            ];
            for (tau, partners) in groups {
                let Some(tau) = tau else { continue };
                if !free[tau] || partners.is_empty() || partners.iter().any(|&p| !free[p]) {
                    continue;
                }
                moves.push(Move {
                    name: format!("rescale:{}", l.names[tau]),
                    kind: MoveKind::Rescale,
                    terms: union_terms(model, std::iter::once(tau).chain(partners.iter().copied())),
                    primary: vec![tau],
                    partners,
                    block: None,
                    target: cfg.target_accept,
                });
            }
        }
    }

    // Σ → e^{2δ} Σ together with its members x → e^δ x: the Cholesky
    // log-diagonal moves by δ, everything else is multiplied by e^δ.
    for b in &l.blocks {
        let coords: Vec<usize> = b.coords().collect();
        let member_coords = b.members.iter().flat_map(|&m| l.members[m].coords.iter().copied());
        let (diag, off): (Vec<usize>, Vec<usize>) =
            coords.iter().partition(|&&c| matches!(l.kinds[c], CoordKind::CholDiag { .. }));
        let partners: Vec<usize> = off.into_iter().chain(member_coords).collect();
        if coords.iter().chain(&partners).any(|&c| !free[c]) {
            continue;
        }
        moves.push(Move {
            name: format!("rescale:{}", b.label),
            kind: MoveKind::Rescale,
            terms: union_terms(model, coords.iter().chain(&partners).copied()),
            primary: diag,
            partners,
            block: None,
            target: cfg.target_accept,
        });
    }

    for (bi, b) in l.blocks.iter().enumerate() {
        let coords: Vec<usize> = b.coords().collect();
        if coords.iter().any(|&c| !free[c]) {
            continue;
        }
        moves.push(Move {
            name: format!("{}:{}", if gibbs { "gibbs" } else { "block" }, b.label),
            kind: if gibbs { MoveKind::Gibbs } else { MoveKind::Block },
            terms: union_terms(model, coords.iter().copied()),
            primary: coords,
            partners: Vec::new(),
            block: Some(bi),
            target: cfg.target_accept_block,
        });
    }
    Ok(moves)
}

struct Chain<'a> {
    model: &'a Model,
    cfg: &'a SamplerConfig,
    moves: &'a [Move],
    values: Vec<f64>,
    cache: Vec<f64>,
    log_scales: Vec<f64>,
    batch_accepted: Vec<u32>,
    batch_proposed: Vec<u32>,
    batches: usize,
    stats: Vec<MoveStats>,
    rng: ChaCha8Rng,
    buffer: Vec<f64>,
    saved: Vec<f64>,
}

const INITIAL_LOG_SCALE: f64 = -1.2;

impl<'a> Chain<'a> {
    fn new(model: &'a Model, cfg: &'a SamplerConfig, moves: &'a [Move], values: Vec<f64>, rng: ChaCha8Rng) -> Self {
        let mut chain = Chain {
            model,
            cfg,
            moves,
            cache: vec![0.0; model.n_terms()],
            values,
            log_scales: moves.iter().map(|m| if m.kind == MoveKind::Block { -3.0 } else { INITIAL_LOG_SCALE }).collect(),
            batch_accepted: vec![0; moves.len()],
            batch_proposed: vec![0; moves.len()],
            batches: 0,
            stats: moves
                .iter()
                .map(|m| MoveStats { name: m.name.clone(), kind: m.kind, proposed: 0, accepted: 0 })
                .collect(),
            rng,
            buffer: Vec::new(),
            saved: Vec::new(),
        };
        chain.refresh_cache();
        chain
    }

    fn term(&self, id: TermId) -> f64 {
        if self.cfg.prior_only && self.model.is_series_term(id) {
            0.0
        } else {
            self.model.term_value(id, &self.values)
        }
    }

    fn refresh_cache(&mut self) {
        for id in 0..self.cache.len() {
            self.cache[id] = self.term(id);
        }
    }

    fn metropolis(&mut self, mi: usize, keep_phase: bool) {
        let moves = self.moves;
        let mv = &moves[mi];
        let scale = self.log_scales[mi].exp();
        self.saved.clear();
        self.saved.extend(mv.primary.iter().chain(&mv.partners).map(|&c| self.values[c]));
        let mut log_jac = 0.0;
        match mv.kind {
            MoveKind::Scalar | MoveKind::Block => {
                for &c in &mv.primary {
                    let z: f64 = self.rng.sample(StandardNormal);
                    self.values[c] += scale * z;
                }
            }
            MoveKind::Shift => {
                let delta = scale * self.rng.sample::<f64, _>(StandardNormal);
                self.values[mv.primary[0]] += delta;
                for &p in &mv.partners {
                    self.values[p] -= delta;
                }
            }
            MoveKind::Rescale => {
                let delta = scale * self.rng.sample::<f64, _>(StandardNormal);
                for &c in &mv.primary {
                    self.values[c] += delta;
                }
                let factor = delta.exp();
                for &p in &mv.partners {
                    self.values[p] *= factor;
                }
                log_jac = mv.partners.len() as f64 * delta;
            }
            MoveKind::Gibbs => unreachable!("gibbs moves are not metropolis"),
        }
        let mut buffer = std::mem::take(&mut self.buffer);
        buffer.clear();
        let mut diff = log_jac;
        for &t in &mv.terms {
            let v = self.term(t);
            buffer.push(v);
            diff += v - self.cache[t];
        }
        let u: f64 = self.rng.random();
        let accept = u.ln() < diff;
        if accept {
            for (&t, &v) in mv.terms.iter().zip(&buffer) {
                self.cache[t] = v;
            }
        } else {
            for (&c, &v) in mv.primary.iter().chain(&mv.partners).zip(&self.saved) {
                self.values[c] = v;
            }
        }
        self.buffer = buffer;
        self.batch_proposed[mi] += 1;
        self.batch_accepted[mi] += accept as u32;
        if keep_phase {
            self.stats[mi].proposed += 1;
            self.stats[mi].accepted += accept as u64;
        }
    }

    /// Conjugate update of a covariance block under the precision-Wishart
    /// prior. Members shorter than the block are first completed by drawing
    /// their missing coordinates from the conditional normal.
    fn gibbs(&mut self, mi: usize, keep_phase: bool) {
        let moves = self.moves;
        let mv = &moves[mi];
        let model = self.model;
        let l = model.layout();
        let bi = mv.block.expect("gibbs move has a block");
        let b = &l.blocks[bi];
        let d = b.dim;
        let packed = &self.values[b.coords()];
        let chol = crate::math::chol_from_packed(d, packed);
        let mut scatter = DMatrix::<f64>::identity(d, d);
        let mut x = vec![0.0; d];
        for &m in &b.members {
            let mem = &l.members[m];
            let k = mem.coords.len();
            for (i, &c) in mem.coords.iter().enumerate() {
                x[i] = self.values[c];
            }
            if k < d {
                let z_obs = crate::math::forward_solve_prefix(&chol, &x[..k]);
                let z_mis: Vec<f64> = (k..d).map(|_| self.rng.sample(StandardNormal)).collect();
                for i in k..d {
                    let mut s = 0.0;
                    for (j, zo) in z_obs.iter().enumerate() {
                        s += chol[(i, j)] * zo;
                    }
                    for j in k..=i {
                        s += chol[(i, j)] * z_mis[j - k];
                    }
                    x[i] = s;
                }
            }
            for r in 0..d {
                for c in 0..d {
                    scatter[(r, c)] += x[r] * x[c];
                }
            }
        }
        let n = b.members.len() as f64;
        let df = model.spec().wishart_df(d) + n;
        // Σ ~ IW(Ψ, df) with Ψ = I + S = U Uᵀ. Bartlett on the precision gives
        // Σ = Yᵀ Y with A Y = Uᵀ, A lower triangular with χ diagonal.
        let mut a = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            let chi = ChiSquared::new(df - i as f64).expect("positive degrees of freedom");
            a[(i, i)] = chi.sample(&mut self.rng).sqrt();
            for j in 0..i {
                a[(i, j)] = self.rng.sample(StandardNormal);
            }
        }
        let updated = scatter.cholesky().and_then(|u| {
            let y = a.solve_lower_triangular(&u.l().transpose())?;
            let sigma = y.transpose() * y;
            let sigma = (&sigma + sigma.transpose()) * 0.5;
            let packed = packed_from_chol(&sigma.cholesky()?.l());
            packed.iter().all(|p| p.is_finite()).then_some(packed)
        });
        if let Some(packed) = updated {
            self.values[b.coords()].copy_from_slice(&packed);
            for &t in &mv.terms {
                self.cache[t] = self.term(t);
            }
        }
        if keep_phase {
            self.stats[mi].proposed += 1;
            self.stats[mi].accepted += 1;
        }
    }

    fn iterate(&mut self, keep_phase: bool) {
        for mi in 0..self.moves.len() {
            if self.moves[mi].kind == MoveKind::Gibbs {
                self.gibbs(mi, keep_phase);
            } else {
                self.metropolis(mi, keep_phase);
            }
        }
    }

    fn adapt(&mut self) {
        self.batches += 1;
        let step = (1.0 / (self.batches as f64).sqrt()).min(0.5);
        for mi in 0..self.moves.len() {
            if self.batch_proposed[mi] == 0 {
                continue;
            }
            let rate = self.batch_accepted[mi] as f64 / self.batch_proposed[mi] as f64;
            let dir = if rate > self.moves[mi].target { 1.0 } else { -1.0 };
            self.log_scales[mi] = (self.log_scales[mi] + dir * step).clamp(-15.0, 6.0);
            self.batch_accepted[mi] = 0;
            self.batch_proposed[mi] = 0;
        }
    }

    fn run_keep(&mut self, keep: usize, out: &mut ChainDraws) {
        let dim = self.values.len();
        out.draws.reserve(keep * dim);
        out.deviance.reserve(keep);
        for it in 0..keep * self.cfg.thin {
            self.iterate(true);
            if (it + 1) % self.cfg.thin == 0 {
                out.draws.extend_from_slice(&self.values);
                out.deviance.push(self.model.residual_deviance(&self.values));
            }
        }
        out.stats = self.stats.clone();
        out.final_log_scales = self.log_scales.clone();
        out.final_values = self.values.clone();
        out.rng_word_pos = self.rng.get_word_pos();
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_values(model: &Model, cfg: &SamplerConfig, chain: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, InferenceError> {
    let l = model.layout();
    let mut base = vec![0.0; l.dim()];
    for (k, logits) in model.empirical_logits().iter().enumerate() {
        for j in 0..2 {
            base[l.m[k][j]] = logits[j].unwrap_or(0.0).clamp(-4.0, 4.0);
        }
    }
    for t in l.tau_m.iter().chain(&l.tau_s).flatten() {
        base[t[0]] = 0.5f64.ln();
        base[t[1]] = 0.5f64.ln();
    }
    for h in l.hyper_m.iter().chain(&l.hyper_s) {
        for j in 0..2 {
            base[h.mean[j]] = 0.5f64.ln();
            base[h.log_sd[j]] = 0.0;
        }
    }
    let mut overrides = Vec::new();
    for (name, &v) in &cfg.init {
        let c = l.coord(name).ok_or_else(|| InferenceError::Config(format!("init: unknown coordinate `{name}`")))?;
        overrides.push((c, v));
    }
    let free = free_coords(model, cfg)?;

    let mut last_bad = Vec::new();
    for attempt in 0..100 {
        let mut v = base.clone();
        if chain > 0 || attempt > 0 {
            for c in 0..l.dim() {
                if l.kinds[c].is_fixed_effect() && free[c] {
                    v[c] += 0.5 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        for &(c, x) in &overrides {
            v[c] = x;
        }
        let bad: Vec<TermId> = (0..model.n_terms())
            .filter(|&t| !(cfg.prior_only && model.is_series_term(t)))
            .filter(|&t| !model.term_value(t, &v).is_finite())
            .collect();
        if bad.is_empty() {
            return Ok(v);
        }
        last_bad = bad;
    }
    let listed: Vec<String> = last_bad.iter().take(5).map(|&t| model.describe_term(t)).collect();
    Err(InferenceError::Initialization(format!(
        "chain {chain}: log-posterior not finite after 100 draws; offending terms: {}",
        listed.join("; ")
    )))
}

fn run_chain(model: &Model, cfg: &SamplerConfig, moves: &[Move], chain: usize) -> Result<ChainDraws, InferenceError> {
    let mut rng = chain_rng(cfg.seed, chain);
    let values = initial_values(model, cfg, chain, &mut rng)?;
    let mut c = Chain::new(model, cfg, moves, values, rng);
    for it in 0..cfg.warmup_iters {
        c.iterate(false);
        if (it + 1) % cfg.adapt_window == 0 {
            c.adapt();
        }
    }
    let mut out = ChainDraws { warmup_scales: c.log_scales.clone(), ..ChainDraws::default() };
    c.run_keep(cfg.keep_iters, &mut out);
    Ok(out)
}

/// Fits a model to data.
pub fn run_mcmc(d: &Dataset, spec: &ModelSpec, cfg: &SamplerConfig) -> Result<PosteriorSamples, InferenceError> {
    let model = Model::new(d, spec)?;
    run_mcmc_with_model(&model, cfg, d.fingerprint())
}

/// Runs the sampler on an already compiled model. Chains run on the current
/// rayon pool.
pub fn run_mcmc_with_model(
    model: &Model,
    cfg: &SamplerConfig,
    data_fingerprint: String,
) -> Result<PosteriorSamples, InferenceError> {
    cfg.check()?;
    let moves = build_moves(model, cfg)?;
    let chains: Vec<ChainDraws> =
        (0..cfg.chains).into_par_iter().map(|ch| run_chain(model, cfg, &moves, ch)).collect::<Result<_, _>>()?;
    Ok(PosteriorSamples { layout: model.layout().clone(), config: cfg.clone(), data_fingerprint, chains })
}

/// Extends every chain of a finished run by `extra_keep` retained draws.
/// The result is identical to a single run with the larger `keep_iters`.
pub fn resume_mcmc(d: &Dataset, samples: &PosteriorSamples, extra_keep: usize) -> Result<PosteriorSamples, InferenceError> {
    if d.fingerprint() != samples.data_fingerprint {
        return Err(InferenceError::Container("data differ from the data the samples were drawn from".into()));
    }
    let model = Model::with_layout(d, samples.layout.clone())?;
    let cfg = &samples.config;
    let moves = build_moves(&model, cfg)?;
    let extended: Vec<ChainDraws> = samples
        .chains
        .par_iter()
        .enumerate()
        .map(|(ch, old)| {
            let mut rng = chain_rng(cfg.seed, ch);
            rng.set_word_pos(old.rng_word_pos);
            let mut c = Chain::new(&model, cfg, &moves, old.final_values.clone(), rng);
            c.log_scales = old.final_log_scales.clone();
            c.stats = old.stats.clone();
            let mut out = old.clone();
            c.run_keep(extra_keep, &mut out);
            out
        })
        .collect();
    let mut config = cfg.clone();
    config.keep_iters += extra_keep;
    Ok(PosteriorSamples {
        layout: samples.layout.clone(),
        config,
        data_fingerprint: samples.data_fingerprint.clone(),
        chains: extended,
    })
}
