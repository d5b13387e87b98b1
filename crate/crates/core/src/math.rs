//! Small numeric helpers shared across modules.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ln expit(x).
pub fn log_expit(x: f64) -> f64 {
    -softplus(-x)
}

/// ln(1 − e^a) for a ≤ 0, accurate on both ends (Mächler 2012).
pub fn log1mexp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// x·ln y with 0·ln 0 = 0.
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `count · log_p` where a zero count contributes nothing even if log_p = −∞.
pub fn weighted_log(count: u64, log_p: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_p
    }
}

/// ln of the multivariate gamma function Γ_p(a).
pub fn ln_mvgamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut s = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for i in 0..p {
        s += ln_gamma(a - i as f64 / 2.0);
    }
    s
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with n − 1 denominator.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Number of entries in a packed lower triangle of a d×d matrix.
pub fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Row-major position of (i, j), j ≤ i, in a packed lower triangle.
pub fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Lower Cholesky factor from packed coordinates with log-diagonal.
pub fn chol_from_packed(d: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = packed[packed_index(i, j)];
            l[(i, j)] = if i == j { v.exp() } else { v };
        }
    }
    l
}

/// Inverse of [`chol_from_packed`].
pub fn packed_from_chol(l: &DMatrix<f64>) -> Vec<f64> {
    let d = l.nrows();
    let mut out = vec![0.0; packed_len(d)];
    for i in 0..d {
        for j in 0..=i {
            out[packed_index(i, j)] = if i == j { l[(i, j)].ln() } else { l[(i, j)] };
        }
    }
    out
}

/// Solves L y = b for lower-triangular L restricted to its leading k×k block.
pub fn forward_solve_prefix(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// ln N(v; 0, L Lᵀ) using only the leading block of L matching v's length.
pub fn mvn_logpdf_chol(v: &[f64], l: &DMatrix<f64>) -> f64 {
    let k = v.len();
    let y = forward_solve_prefix(l, v);
    let log_det_half: f64 = (0..k).map(|i| l[(i, i)].ln()).sum();
    -0.5 * k as f64 * LN_2PI - log_det_half - 0.5 * y.iter().map(|a| a * a).sum::<f64>()
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}
