use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Layout, ModelError};
use crate::math::{chol_from_packed, packed_from_chol, packed_len};

/// One point of the parameter space: a flat vector interpreted through its
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    /// m[k][j]
    pub m: Vec<[f64; 2]>,
    /// s[k][j], continuous tests only
    pub s: Vec<Option<[f64; 2]>>,
}

/// Random effects, indexed like the layout: ε and u per (study, test) pair,
/// η and γ per study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub eps: Vec<[f64; 2]>,
    pub u: Vec<Option<[f64; 2]>>,
    pub eta: Vec<Option<[f64; 2]>>,
    pub gamma: Vec<Option<[f64; 2]>>,
}

/// A covariance matrix held as its packed Cholesky factor (log-diagonal),
/// which is what the flat vector stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFactor {
    pub label: String,
    pub dim: usize,
    pub packed: Vec<f64>,
}

impl CovarianceFactor {
    pub fn from_matrix(label: impl Into<String>, sigma: &DMatrix<f64>) -> Result<Self, ModelError> {
        let label = label.into();
        let chol = sigma.clone().cholesky().ok_or_else(|| ModelError::NotPositiveDefinite(label.clone()))?;
        Ok(CovarianceFactor { label, dim: sigma.nrows(), packed: packed_from_chol(&chol.l()) })
    }

    pub fn identity(label: impl Into<String>, dim: usize) -> Self {
        CovarianceFactor { label: label.into(), dim, packed: vec![0.0; packed_len(dim)] }
    }

    pub fn chol(&self) -> DMatrix<f64> {
        chol_from_packed(self.dim, &self.packed)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.chol();
        &l * l.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub covariances: Vec<CovarianceFactor>,
    pub log_tau_m: Vec<Option<[f64; 2]>>,
    pub log_tau_s: Vec<Option<[f64; 2]>>,
    pub m_a: Option<[f64; 2]>,
    pub log_sigma_a: Option<[f64; 2]>,
    pub m_a_scale: Option<[f64; 2]>,
    pub log_sigma_a_scale: Option<[f64; 2]>,
}

impl VarianceComponents {
    pub fn tau_m(&self, k: usize) -> Option<[f64; 2]> {
        self.log_tau_m[k].map(|v| v.map(f64::exp))
    }

    pub fn tau_s(&self, k: usize) -> Option<[f64; 2]> {
        self.log_tau_s[k].map(|v| v.map(f64::exp))
    }

    pub fn sigma_a(&self) -> Option<[f64; 2]> {
        self.log_sigma_a.map(|v| v.map(f64::exp))
    }
}

fn get2(values: &[f64], idx: [usize; 2]) -> [f64; 2] {
    [values[idx[0]], values[idx[1]]]
}

fn put2(values: &mut [f64], idx: [usize; 2], v: [f64; 2]) {
    values[idx[0]] = v[0];
    values[idx[1]] = v[1];
}

fn put_opt(
    values: &mut [f64],
    idx: &[Option<[usize; 2]>],
    v: &[Option<[f64; 2]>],
    what: &str,
) -> Result<(), ModelError> {
    if idx.len() != v.len() {
        return Err(ModelError::LayoutMismatch(format!("{what}: {} entries, layout has {}", v.len(), idx.len())));
    }
    for (i, (a, b)) in idx.iter().zip(v).enumerate() {
        match (a, b) {
            (Some(a), Some(b)) => put2(values, *a, *b),
            (None, None) => {}
            _ => return Err(ModelError::LayoutMismatch(format!("{what}[{i}] presence differs from layout"))),
        }
    }
    Ok(())
}

fn put_hyper(values: &mut [f64], idx: Option<[usize; 2]>, v: Option<[f64; 2]>, what: &str) -> Result<(), ModelError> {
    match (idx, v) {
        (Some(a), Some(b)) => put2(values, a, b),
        (None, None) => {}
        _ => return Err(ModelError::LayoutMismatch(format!("{what} presence differs from layout"))),
    }
    Ok(())
}

impl ParameterState {
    /// All coordinates zero: identity covariances, τ = σ_a = 1, m_a = 0.
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.dim()];
        ParameterState { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != layout.dim() {
            return Err(ModelError::LayoutMismatch(format!("{} values for dimension {}", values.len(), layout.dim())));
        }
        Ok(ParameterState { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn fixed(&self) -> FixedEffects {
        let l = &self.layout;
        FixedEffects {
            m: l.m.iter().map(|&i| get2(&self.values, i)).collect(),
            s: l.s.iter().map(|i| i.map(|i| get2(&self.values, i))).collect(),
        }
    }

    pub fn random(&self) -> RandomEffects {
        let l = &self.layout;
        let opt = |v: &[Option<[usize; 2]>]| v.iter().map(|i| i.map(|i| get2(&self.values, i))).collect();
        RandomEffects {
            eps: l.eps.iter().map(|&i| get2(&self.values, i)).collect(),
            u: opt(&l.u),
            eta: opt(&l.eta),
            gamma: opt(&l.gamma),
        }
    }

    pub fn variance(&self) -> VarianceComponents {
        let l = &self.layout;
        let opt = |v: &[Option<[usize; 2]>]| v.iter().map(|i| i.map(|i| get2(&self.values, i))).collect();
        VarianceComponents {
            covariances: l
                .blocks
                .iter()
                .map(|b| CovarianceFactor {
                    label: b.label.clone(),
                    dim: b.dim,
                    packed: self.values[b.coords()].to_vec(),
                })
                .collect(),
            log_tau_m: opt(&l.tau_m),
            log_tau_s: opt(&l.tau_s),
            m_a: l.hyper_m.map(|h| get2(&self.values, h.mean)),
            log_sigma_a: l.hyper_m.map(|h| get2(&self.values, h.log_sd)),
            m_a_scale: l.hyper_s.map(|h| get2(&self.values, h.mean)),
            log_sigma_a_scale: l.hyper_s.map(|h| get2(&self.values, h.log_sd)),
        }
    }

    /// Inverse of (`fixed`, `random`, `variance`).
    pub fn from_parts(
        layout: Arc<Layout>,
        fixed: &FixedEffects,
        random: &RandomEffects,
        var: &VarianceComponents,
    ) -> Result<Self, ModelError> {
        let mut values = vec![0.0; layout.dim()];
        let l = &layout;
        if fixed.m.len() != l.m.len() || random.eps.len() != l.eps.len() {
            return Err(ModelError::LayoutMismatch("number of tests or pairs differs".into()));
        }
        for (i, v) in l.m.iter().zip(&fixed.m) {
            put2(&mut values, *i, *v);
        }
        put_opt(&mut values, &l.s, &fixed.s, "s")?;
        for (i, v) in l.eps.iter().zip(&random.eps) {
            put2(&mut values, *i, *v);
        }
        put_opt(&mut values, &l.u, &random.u, "u")?;
        put_opt(&mut values, &l.eta, &random.eta, "eta")?;
        put_opt(&mut values, &l.gamma, &random.gamma, "gamma")?;
        if var.covariances.len() != l.blocks.len() {
            return Err(ModelError::LayoutMismatch("number of covariance blocks differs".into()));
        }
        for (b, c) in l.blocks.iter().zip(&var.covariances) {
            if c.dim != b.dim || c.packed.len() != packed_len(b.dim) {
                return Err(ModelError::LayoutMismatch(format!("covariance `{}` has wrong dimension", b.label)));
            }
            values[b.coords()].copy_from_slice(&c.packed);
        }
        put_opt(&mut values, &l.tau_m, &var.log_tau_m, "log_tau_m")?;
        put_opt(&mut values, &l.tau_s, &var.log_tau_s, "log_tau_s")?;
        put_hyper(&mut values, l.hyper_m.map(|h| h.mean), var.m_a, "m_a")?;
        put_hyper(&mut values, l.hyper_m.map(|h| h.log_sd), var.log_sigma_a, "log_sigma_a")?;
        put_hyper(&mut values, l.hyper_s.map(|h| h.mean), var.m_a_scale, "m_a_scale")?;
        put_hyper(&mut values, l.hyper_s.map(|h| h.log_sd), var.log_sigma_a_scale, "log_sigma_a_scale")?;
        Ok(ParameterState { layout, values })
    }

    pub fn chol(&self, block: usize) -> DMatrix<f64> {
        let b = &self.layout.blocks[block];
        chol_from_packed(b.dim, &self.values[b.coords()])
    }

    pub fn covariance(&self, block: usize) -> DMatrix<f64> {
        let l = self.chol(block);
        &l * l.transpose()
    }

    pub fn set_covariance(&mut self, block: usize, sigma: &DMatrix<f64>) -> Result<(), ModelError> {
        let b = self.layout.blocks[block].clone();
        if sigma.nrows() != b.dim || sigma.ncols() != b.dim {
            return Err(ModelError::LayoutMismatch(format!("covariance `{}` must be {}×{}", b.label, b.dim, b.dim)));
        }
        let f = CovarianceFactor::from_matrix(b.label.clone(), sigma)?;
        self.values[b.coords()].copy_from_slice(&f.packed);
        Ok(())
    }

    /// Sets every τm (and τs) to the given value.
    pub fn set_all_tau(&mut self, tau: f64) {
        let lt = tau.ln();
        let l = self.layout.clone();
        for i in l.tau_m.iter().chain(&l.tau_s).flatten() {
            put2(&mut self.values, *i, [lt, lt]);
        }
    }

    /// Location and log-scale of series (pair, group).
    pub fn series_params(&self, pair: usize, j: usize) -> (f64, f64) {
        let l = &self.layout;
        let (study, test) = l.pairs[pair];
        let v = &self.values;
        let mut mu = v[l.m[test][j]] + v[l.eps[pair][j]];
        if let Some(e) = l.eta[study] {
            mu += v[e[j]];
        }
        let mut ls = 0.0;
        if let Some(s) = l.s[test] {
            ls = v[s[j]];
            if let Some(u) = l.u[pair] {
                ls += v[u[j]];
            }
            if let Some(g) = l.gamma[study] {
                ls += v[g[j]];
            }
        }
        (mu, ls)
    }
}
