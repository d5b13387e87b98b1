//! Oracles written independently of the library: a direct multinomial
//! likelihood, fully Gibbs reference samplers for all-binary networks, and
//! grid quadrature.
#![allow(dead_code)]

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use dtanet::dataset::{Dataset, DiseaseGroup};

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Multinomial log-likelihood over the intervals cut by decreasing
/// cumulative positive probabilities `p` with cumulative counts `x`.
pub fn multinomial_loglik(n: u64, x: &[u64], p: &[f64]) -> f64 {
    let t = x.len();
    let mut cells = Vec::with_capacity(t + 1);
    let mut probs = Vec::with_capacity(t + 1);
    cells.push(n - x[0]);
    probs.push(1.0 - p[0]);
    for i in 0..t {
        let next_x = if i + 1 < t { x[i + 1] } else { 0 };
        let next_p = if i + 1 < t { p[i + 1] } else { 0.0 };
        cells.push(x[i] - next_x);
        probs.push(p[i] - next_p);
    }
    let mut ll = ln_factorial(n);
    for (&c, &q) in cells.iter().zip(&probs) {
        ll -= ln_factorial(c);
        if c > 0 {
            ll += c as f64 * q.ln();
        }
    }
    ll
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ln_expit(x: f64) -> f64 {
    if x > 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn binom_ll(x: u64, n: u64, theta: f64) -> f64 {
    x as f64 * ln_expit(theta) + (n - x) as f64 * ln_expit(-theta)
}

/// One (study, test) of an all-binary network; index 0 is the
/// non-diseased group.
#[derive(Debug, Clone)]
pub struct Arm {
    pub study: usize,
    pub test: usize,
    pub x: [u64; 2],
    pub n: [u64; 2],
}

#[derive(Debug, Clone)]
pub struct BinaryNetwork {
    pub tests: Vec<String>,
    pub n_studies: usize,
    pub arms: Vec<Arm>,
}

impl BinaryNetwork {
    pub fn from_dataset(d: &Dataset) -> Self {
        let tests: Vec<String> = d.tests().iter().map(|t| t.id.clone()).collect();
        let mut arms: Vec<Arm> = Vec::new();
        for s in d.series() {
            assert_eq!(s.thresholds.len(), 1, "binary data only");
            let study = d.study_index(&s.study_id).unwrap();
            let test = d.test_index(&s.test_id).unwrap();
            let j = if s.group == DiseaseGroup::Diseased { 1 } else { 0 };
            let pos = arms.iter().position(|a| a.study == study && a.test == test);
            let a = match pos {
                Some(p) => &mut arms[p],
                None => {
                    arms.push(Arm { study, test, x: [0; 2], n: [0; 2] });
                    arms.last_mut().unwrap()
                }
            };
            a.x[j] = s.positives[0];
            a.n[j] = s.group_size;
        }
        BinaryNetwork { tests, n_studies: d.studies().len(), arms }
    }
}

/// Σ ~ IW(Ψ, df) as the inverse of a Bartlett-constructed Wishart(Ψ⁻¹, df).
pub fn inverse_wishart(psi: &Matrix2<f64>, df: f64, rng: &mut impl Rng) -> Matrix2<f64> {
    let l = psi.try_inverse().unwrap().cholesky().unwrap().l();
    let c0 = ChiSquared::new(df).unwrap().sample(rng).sqrt();
    let c1 = ChiSquared::new(df - 1.0).unwrap().sample(rng).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    let a = Matrix2::new(c0, 0.0, z, c1);
    let la = l * a;
    (la * la.transpose()).try_inverse().unwrap()
}

fn mvn(mean: &Vector2<f64>, cov: &Matrix2<f64>, rng: &mut impl Rng) -> Vector2<f64> {
    let l = cov.cholesky().unwrap().l();
    let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    mean + l * z
}

/// Per-coordinate random-walk Metropolis scales tuned toward 0.44 during
/// warmup.
struct Rw {
    log_h: Vec<f64>,
    acc: Vec<u32>,
    tries: u32,
    batches: u32,
}

impl Rw {
    fn new(n: usize) -> Self {
        Rw { log_h: vec![-0.5; n], acc: vec![0; n], tries: 0, batches: 0 }
    }

    fn step(&mut self, i: usize, cur: f64, rng: &mut impl Rng, lp: impl Fn(f64) -> f64) -> f64 {
        let prop = cur + self.log_h[i].exp() * rng.sample::<f64, _>(StandardNormal);
        if rng.random::<f64>().ln() < lp(prop) - lp(cur) {
            self.acc[i] += 1;
            prop
        } else {
            cur
        }
    }

    fn end_iter(&mut self, warmup: bool) {
        self.tries += 1;
        if self.tries == 50 {
            if warmup {
                self.batches += 1;
                let d = (1.0 / (self.batches as f64).sqrt()).min(0.5);
                for (h, &a) in self.log_h.iter_mut().zip(&self.acc) {
                    *h += if a as f64 / 50.0 > 0.44 { d } else { -d };
                }
            }
            self.tries = 0;
            self.acc.iter_mut().for_each(|a| *a = 0);
        }
    }
}

const PRIOR_VAR: f64 = 1000.0;

/// Bivariate random-effects meta-regression on binary data with one 2×2
/// covariance shared by all tests: θ_ik ~ N(m_k, Σ), Σ ~ IW(I, 2),
/// m_kj ~ N(0, 1000). Returns m per retained iteration, [test][group].
pub fn reference_meta_regression(net: &BinaryNetwork, warmup: usize, keep: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = net.tests.len();
    let mut theta: Vec<Vector2<f64>> = net
        .arms
        .iter()
        .map(|a| Vector2::from_fn(|j, _| ((a.x[j] as f64 + 0.5) / (a.n[j] as f64 - a.x[j] as f64 + 0.5)).ln()))
        .collect();
    let mut m = vec![Vector2::zeros(); k];
    let mut sigma = Matrix2::identity();
    let mut rw = Rw::new(2 * net.arms.len());
    let mut out = Vec::with_capacity(keep);
    for it in 0..warmup + keep {
        let prec = sigma.try_inverse().unwrap();
        for (p, a) in net.arms.iter().enumerate() {
            for j in 0..2 {
                let cond = |t: f64| {
                    let mut v = theta[p];
                    v[j] = t;
                    let d = v - m[a.test];
                    binom_ll(a.x[j], a.n[j], t) - 0.5 * (d.transpose() * prec * d)[0]
                };
                theta[p][j] = rw.step(2 * p + j, theta[p][j], &mut rng, cond);
            }
        }
        for (t, mt) in m.iter_mut().enumerate() {
            let members: Vec<usize> = (0..net.arms.len()).filter(|&p| net.arms[p].test == t).collect();
            let sum: Vector2<f64> = members.iter().map(|&p| theta[p]).sum();
            let post_prec = Matrix2::identity() / PRIOR_VAR + prec * members.len() as f64;
            let cov = post_prec.try_inverse().unwrap();
            *mt = mvn(&(cov * prec * sum), &cov, &mut rng);
        }
        let mut scatter = Matrix2::identity();
        for (p, a) in net.arms.iter().enumerate() {
            let d = theta[p] - m[a.test];
            scatter += d * d.transpose();
        }
        sigma = inverse_wishart(&scatter, 2.0 + net.arms.len() as f64, &mut rng);
        rw.end_iter(it < warmup);
        if it >= warmup {
            out.push(m.iter().map(|v| [v[0], v[1]]).collect());
        }
    }
    out
}

/// τ given n residuals with sum of squares ss under τ ~ U(0, upper): the
/// precision 1/τ² is Gamma((n−1)/2, ss/2) truncated below at 1/upper².
fn draw_tau(n: usize, ss: f64, upper: f64, rng: &mut impl Rng) -> f64 {
    let g = Gamma::new((n as f64 - 1.0) / 2.0, ss / 2.0).unwrap();
    let lo = g.cdf(1.0 / (upper * upper));
    let u = lo + (1.0 - lo) * rng.random::<f64>();
    let w = g.inverse_cdf(u.min(1.0 - 1e-15));
    1.0 / w.sqrt()
}

/// Standard ANOVA model on binary data: θ_ikj = m_kj + η_ij + ε_ikj with
/// η_i ~ N(0, Σ), Σ ~ IW(I, 2), ε_ikj ~ N(0, τ_kj²), τ_kj ~ U(0, 5).
pub fn reference_anova(net: &BinaryNetwork, warmup: usize, keep: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = net.tests.len();
    let mut theta: Vec<[f64; 2]> = net
        .arms
        .iter()
        .map(|a| [0, 1].map(|j| ((a.x[j] as f64 + 0.5) / (a.n[j] as f64 - a.x[j] as f64 + 0.5)).ln()))
        .collect();
    let mut m = vec![[0.0f64; 2]; k];
    let mut eta = vec![Vector2::zeros(); net.n_studies];
    let mut tau = vec![[0.5f64; 2]; k];
    let mut sigma = Matrix2::identity();
    let mut rw = Rw::new(2 * net.arms.len());
    let mut out = Vec::with_capacity(keep);
    for it in 0..warmup + keep {
        for (p, a) in net.arms.iter().enumerate() {
            for j in 0..2 {
                let mean: f64 = m[a.test][j] + eta[a.study][j];
                let sd: f64 = tau[a.test][j];
                let cond = |t: f64| binom_ll(a.x[j], a.n[j], t) - 0.5 * ((t - mean) / sd).powi(2);
                theta[p][j] = rw.step(2 * p + j, theta[p][j], &mut rng, cond);
            }
        }
        for t in 0..k {
            for j in 0..2 {
                let r: Vec<f64> =
                    net.arms.iter().enumerate().filter(|(_, a)| a.test == t).map(|(p, a)| theta[p][j] - eta[a.study][j]).collect();
                let w = 1.0 / (tau[t][j] * tau[t][j]);
                let prec = 1.0 / PRIOR_VAR + r.len() as f64 * w;
                let mean = w * r.iter().sum::<f64>() / prec;
                m[t][j] = mean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
            }
        }
        let sigma_inv = sigma.try_inverse().unwrap();
        for (i, e) in eta.iter_mut().enumerate() {
            let mut prec = sigma_inv;
            let mut lin = Vector2::zeros();
            for (p, a) in net.arms.iter().enumerate().filter(|(_, a)| a.study == i) {
                for j in 0..2 {
                    let w = 1.0 / (tau[a.test][j] * tau[a.test][j]);
                    prec[(j, j)] += w;
                    lin[j] += w * (theta[p][j] - m[a.test][j]);
                }
            }
            let cov = prec.try_inverse().unwrap();
            *e = mvn(&(cov * lin), &cov, &mut rng);
        }
        let mut scatter = Matrix2::identity();
        for e in &eta {
            scatter += e * e.transpose();
        }
        sigma = inverse_wishart(&scatter, 2.0 + net.n_studies as f64, &mut rng);
        for t in 0..k {
            for j in 0..2 {
                let res: Vec<f64> = net
                    .arms
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.test == t)
                    .map(|(p, a)| theta[p][j] - m[t][j] - eta[a.study][j])
                    .collect();
                let ss: f64 = res.iter().map(|r| r * r).sum();
                tau[t][j] = draw_tau(res.len(), ss, 5.0, &mut rng);
            }
        }
        rw.end_iter(it < warmup);
        if it >= warmup {
            out.push(m.clone());
        }
    }
    out
}

pub fn median(x: &mut [f64]) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Marginal CDF of the first coordinate of a 2-D log density, by
/// trapezoidal quadrature on a regular grid. Returns (grid, cdf).
pub fn quadrature_marginal(
    logp: impl Fn(f64, f64) -> f64,
    x: (f64, f64),
    y: (f64, f64),
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..n).map(|i| x.0 + (x.1 - x.0) * i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = (0..n).map(|i| y.0 + (y.1 - y.0) * i as f64 / (n - 1) as f64).collect();
    let lp: Vec<Vec<f64>> = xs.iter().map(|&a| ys.iter().map(|&b| logp(a, b)).collect()).collect();
    let top = lp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let dy = ys[1] - ys[0];
    let marg: Vec<f64> = lp
        .iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|l| (l - top).exp()).collect();
            dy * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1]))
        })
        .collect();
    let dx = xs[1] - xs[0];
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1] + 0.5 * dx * (marg[i - 1] + marg[i]);
    }
    let total = cdf[n - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    (xs, cdf)
}

pub fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[grid.len() - 1] {
        return values[values.len() - 1];
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    values[i] + t * (values[i + 1] - values[i])
}
