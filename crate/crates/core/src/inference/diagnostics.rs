//! Convergence diagnostics: rank-normalized split R̂ and effective sample
//! size from FFT autocovariances with Geyer's initial monotone sequence.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{MoveKind, PosteriorSamples};

/// R̂ above this flags a coordinate.
pub const RHAT_FLAG: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess_bulk: f64,
    /// No movement in any chain.
    pub stuck: bool,
}

/// Acceptance rate of one move pooled over chains, retained phase only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptRate {
    pub name: String,
    pub kind: MoveKind,
    /// `None` when the move was never proposed.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub coords: Vec<CoordDiagnostics>,
    pub accept_rates: Vec<AcceptRate>,
    pub max_rhat: Option<f64>,
    /// Smallest bulk ESS over coordinates that moved.
    pub min_ess: Option<f64>,
    /// Names with R̂ above the flag level or stuck chains.
    pub flagged: Vec<String>,
    pub warnings: Vec<String>,
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(&c[..h]);
        out.push(&c[c.len() - h..]);
    }
    out
}

fn autocov_fft(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = crate::math::mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> =
        x.iter().map(|v| Complex::new(v - m, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in &mut buf {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|z| z.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of the pooled draws, computed over split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let n = parts.first().map_or(0, |p| p.len());
    let m = parts.len();
    if n < 4 {
        return (m * n) as f64;
    }
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = parts.iter().map(|p| autocov_fft(p, &mut planner)).collect();
    let means: Vec<f64> = parts.iter().map(|p| crate::math::mean(p)).collect();
    let w = acov.iter().map(|a| a[0] * n as f64 / (n as f64 - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { crate::math::variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) || !(w > 0.0) {
        return 1.0;
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut p = rho(t) + rho(t + 1);
        if p <= 0.0 {
            break;
        }
        if p > prev {
            p = prev;
        }
        sum += p;
        prev = p;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / ((m * n) as f64).log10().max(1.0));
    (m * n) as f64 / tau
}

fn plain_rhat(parts: &[Vec<f64>]) -> f64 {
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| crate::math::mean(p)).collect();
    let w = parts.iter().map(|p| crate::math::variance(p)).sum::<f64>() / parts.len() as f64;
    let b = n * crate::math::variance(&means);
    if w <= 0.0 {
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn rank_normalize(parts: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        all.extend(p.iter().enumerate().map(|(j, &x)| (x, i, j)));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = parts.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut k = 0;
    while k < all.len() {
        let mut e = k;
        while e + 1 < all.len() && all[e + 1].0 == all[k].0 {
            e += 1;
        }
        let rank = (k + e) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &all[k..=e] {
            out[item.1][item.2] = z;
        }
        k = e + 1;
    }
    out
}

/// Rank-normalized split R̂: the larger of the bulk and folded versions.
/// `None` with fewer than two chains or four draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let parts = split(chains);
    let all: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    if all.iter().all(|&x| x == all[0]) {
        return Some(1.0);
    }
    let bulk = plain_rhat(&rank_normalize(&parts));
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let med = crate::math::quantile_sorted(&sorted, 0.5);
    let folded: Vec<Vec<f64>> = parts.iter().map(|p| p.iter().map(|x| (x - med).abs()).collect()).collect();
    let folded_refs: Vec<&[f64]> = folded.iter().map(|f| f.as_slice()).collect();
    let tail = plain_rhat(&rank_normalize(&folded_refs));
    Some(bulk.max(tail))
}

fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
    effective_sample_size(&rank_normalize(&refs))
}

pub fn diagnostics(samples: &PosteriorSamples) -> FitDiagnostics {
    let l = &samples.layout;
    let mut coords = Vec::with_capacity(l.dim());
    let mut warnings = Vec::new();
    if samples.chains.len() < 2 {
        warnings.push("a single chain was run: R̂ is not available".to_string());
    }
    for c in 0..l.dim() {
        let trace = samples.trace(c);
        let stuck = trace.iter().all(|t| t.iter().all(|&x| x == t[0]));
        let (rhat, ess) = if stuck { (Some(1.0), 1.0) } else { (split_rhat(&trace), bulk_ess(&trace)) };
        coords.push(CoordDiagnostics { name: l.names[c].clone(), rhat, ess_bulk: ess, stuck });
    }
    let max_rhat = coords.iter().filter_map(|c| c.rhat).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))));
    let min_ess = coords.iter().filter(|c| !c.stuck).map(|c| c.ess_bulk).reduce(f64::min);
    let flagged: Vec<String> = coords
        .iter()
        .filter(|c| c.stuck || c.rhat.is_some_and(|r| r > RHAT_FLAG))
        .map(|c| c.name.clone())
        .collect();
    if !flagged.is_empty() {
        warnings.push(format!("{} coordinates flagged (R̂ > {RHAT_FLAG} or no movement)", flagged.len()));
    }
    let accept_rates = match samples.chains.first() {
        Some(first) => (0..first.stats.len())
            .map(|i| {
                let (p, a) = samples
                    .chains
                    .iter()
                    .fold((0u64, 0u64), |(p, a), c| (p + c.stats[i].proposed, a + c.stats[i].accepted));
                AcceptRate {
                    name: first.stats[i].name.clone(),
                    kind: first.stats[i].kind,
                    rate: (p > 0).then(|| a as f64 / p as f64),
                }
            })
            .collect(),
        None => Vec::new(),
    };
    FitDiagnostics { coords, accept_rates, max_rhat, min_ess, flagged, warnings }
}
