//! Ridge regression, exact low-variance ratios and empirical hypercontractivity
//! estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, RANK_TOL};
use crate::mdp::{MdpError, MdpModel, PolicyContext, PolicySpec};
use crate::rng::{derived_rng, stream};
use crate::tabular::{self, ValueTables};

#[derive(Debug, thiserror::Error)]
pub enum RegressionError {
    #[error("no samples")]
    Empty,
    #[error("negative regularizer {0}")]
    NegativeLambda(f64),
    #[error("dimension mismatch")]
    Shape,
    #[error("need at least two samples")]
    TooFew,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub theta: Vec<f64>,
    /// Set when `λ = 0` and the Gram matrix is singular; `theta` is then the
    /// minimum-norm least-squares solution.
    pub rank_deficient: bool,
}

/// Running sums `Σ x xᵀ` and `Σ x y`.
#[derive(Clone, Debug)]
pub struct RidgeStats {
    pub gram: DMatrix<f64>,
    pub xy: DVector<f64>,
    pub n: usize,
}

impl RidgeStats {
    pub fn new(d: usize) -> Self {
        RidgeStats { gram: DMatrix::zeros(d, d), xy: DVector::zeros(d), n: 0 }
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        linalg::add_outer(&mut self.gram, x, 1.0);
        for (acc, xi) in self.xy.iter_mut().zip(x) {
            *acc += xi * y;
        }
        self.n += 1;
    }
}

/// Solves `(A + shift·I) θ = b` for symmetric `A` with Cholesky, falling back
/// to a span-restricted pseudo-inverse when the system is not positive
/// definite. The flag reports the fallback.
pub fn solve_shifted(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    linalg::symmetrize(&mut m);
    if shift > 0.0 {
        if let Some(ch) = m.clone().cholesky() {
            return (ch.solve(b), false);
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let full = eig.eigenvalues.iter().all(|&l| l > RANK_TOL * lmax);
    (linalg::pinv_sym(&m, RANK_TOL) * b, !full)
}

/// `θ̂ = (Σ x xᵀ + N λ I)⁻¹ Σ x y`. With `λ = 0` the minimum-norm solution is
/// computed from an SVD of the design matrix.
pub fn ridge_fit(data: &[RegressionSample], lambda: f64) -> Result<RidgeFit, RegressionError> {
    if data.is_empty() {
        return Err(RegressionError::Empty);
    }
    if lambda < 0.0 {
        return Err(RegressionError::NegativeLambda(lambda));
    }
    let d = data[0].x.len();
    if data.iter().any(|s| s.x.len() != d) {
        return Err(RegressionError::Shape);
    }
    if lambda == 0.0 {
        let x = DMatrix::from_fn(data.len(), d, |i, j| data[i].x[j]);
        let y = DVector::from_iterator(data.len(), data.iter().map(|s| s.y));
        let svd = x.svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
        let theta = if smax == 0.0 { DVector::zeros(d) } else { svd.solve(&y, RANK_TOL * smax).expect("both factors computed") };
        return Ok(RidgeFit { theta: theta.iter().cloned().collect(), rank_deficient: rank < d });
    }
    let mut stats = RidgeStats::new(d);
    for s in data {
        stats.push(&s.x, s.y);
    }
    let (theta, flag) = solve_shifted(&stats.gram, data.len() as f64 * lambda, &stats.xy);
    Ok(RidgeFit { theta: theta.iter().cloned().collect(), rank_deficient: flag })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVarReport {
    /// Largest defined per-level ratio; `None` when every level is 0/0.
    pub estimate: Option<f64>,
    /// `E[Δ²] / (E|Δ|)²` at each level, `Δ = V* − Vπ` under `D^π_h`.
    pub per_level: Vec<Option<f64>>,
    pub samples_used: usize,
}

impl CVarReport {
    /// True when the ratio is undefined everywhere (π optimal on its support).
    pub fn vacuous(&self) -> bool {
        self.estimate.is_none()
    }
}

/// Exact low-variance ratio of one policy, from DP tables and visitation
/// distributions. This certifies the supplied policy only.
pub fn estimate_c_var(mdp: &MdpModel, policy: &PolicySpec, ctx: &PolicyContext<'_>, oracle: &ValueTables) -> Result<CVarReport, RegressionError> {
    let pv = tabular::policy_evaluation(mdp, policy, ctx)?;
    let mut per_level = Vec::with_capacity(mdp.horizon());
    for h in 1..=mdp.horizon() {
        let dist = tabular::visitation_distribution(mdp, policy, ctx, h)?;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (s, &p) in dist.iter().enumerate() {
            if p > 0.0 {
                let delta = (oracle.v[h - 1][s] - pv.v[h - 1][s]).abs();
                m1 += p * delta;
                m2 += p * delta * delta;
            }
        }
        per_level.push(if m1 > 0.0 { Some(m2 / (m1 * m1)) } else { None });
    }
    let estimate = per_level.iter().flatten().cloned().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    Ok(CVarReport { estimate, per_level, samples_used: 0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperMode {
    Sampled,
    /// Adds eigenvectors of the second-moment matrix and of the whitened
    /// fourth-moment contraction `E[‖z‖² z zᵀ]` as candidate directions.
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperReport {
    /// Largest ratio over the candidate directions; a lower bound on the
    /// true constant.
    pub estimate: f64,
    pub lower_bound: bool,
    pub per_direction: Vec<f64>,
    /// Supplied directions with zero empirical variance.
    pub skipped: Vec<usize>,
    pub samples_used: usize,
}

fn kurtosis_ratio(samples: &[&[f64]], v: &[f64]) -> Option<f64> {
    let n = samples.len() as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for x in samples {
        let p = linalg::dot(x, v);
        let p2 = p * p;
        m2 += p2;
        m4 += p2 * p2;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return None;
    }
    Some(m4 / (m2 * m2))
}

/// Empirical `sup_v E[(φᵀv)⁴] / (E[(φᵀv)²])²` over candidate directions.
pub fn estimate_c_hyper(samples: &[&[f64]], directions: &[&[f64]], mode: HyperMode) -> Result<HyperReport, RegressionError> {
    if samples.len() < 2 {
        return Err(RegressionError::TooFew);
    }
    let d = samples[0].len();
    let mut per_direction = Vec::new();
    let mut skipped = Vec::new();
    let mut estimate: f64 = 0.0;
    for (i, v) in directions.iter().enumerate() {
        if v.len() != d {
            return Err(RegressionError::Shape);
        }
        match kurtosis_ratio(samples, v) {
            Some(r) => {
                estimate = estimate.max(r);
                per_direction.push(r);
            }
            None => {
                skipped.push(i);
                per_direction.push(f64::NAN);
            }
        }
    }
    if mode == HyperMode::Spectral {
        let n = samples.len() as f64;
        let mut m2 = DMatrix::zeros(d, d);
        for x in samples {
            linalg::add_outer(&mut m2, x, 1.0 / n);
        }
        linalg::symmetrize(&mut m2);
        let eig = SymmetricEigen::new(m2.clone());
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        // whitening on the span: W = Σ λ^{-1/2} u uᵀ
        let mut whiten = DMatrix::zeros(d, d);
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            let u = eig.eigenvectors.column(k);
            candidates.push(u.iter().cloned().collect());
            if l > RANK_TOL * lmax {
                whiten += (u * u.transpose()) / l.sqrt();
            }
        }
        let mut m4 = DMatrix::zeros(d, d);
        for x in samples {
            let z = &whiten * DVector::from_column_slice(x);
            let w = z.norm_squared() / n;
            m4.ger(w, &z, &z, 1.0);
        }
        linalg::symmetrize(&mut m4);
        let eig4 = SymmetricEigen::new(m4);
        for k in 0..d {
            let dir = &whiten * eig4.eigenvectors.column(k);
            if dir.norm() > 0.0 {
                candidates.push(dir.iter().cloned().collect());
            }
        }
        for c in &candidates {
            if let Some(r) = kurtosis_ratio(samples, c) {
                estimate = estimate.max(r);
            }
        }
    }
    Ok(HyperReport { estimate, lower_bound: true, per_direction, skipped, samples_used: samples.len() })
}

/// `ε_N = sqrt(d ln(d/δ) / N)`.
pub fn eps_n(d: usize, n: usize, delta: f64) -> f64 {
    ((d as f64) * ((d as f64) / delta).ln() / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    /// Bias drawn independently of the covariate direction.
    Random,
    /// Bias sign follows the projection on the smallest-variance direction.
    Aligned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub seed: u64,
    pub risk: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Covariance of the Gaussian covariates used by the risk checks: diagonal
/// with entries `1, 1/2, ..., 1/d`, so the last axis has the least variance.
fn covariate_scales(d: usize) -> Vec<f64> {
    (0..d).map(|i| (1.0 / (i + 1) as f64).sqrt()).collect()
}

fn unit_theta<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = linalg::norm(&t);
    t.iter_mut().for_each(|x| *x /= n);
    t
}

fn excess_risk(theta_hat: &[f64], theta: &[f64], scales: &[f64]) -> f64 {
    theta_hat.iter().zip(theta).zip(scales).map(|((a, b), s)| ((a - b) * s).powi(2)).sum()
}

/// Dense-bias check: `y = θᵀx + b + ξ` with `|b| = sqrt(η)` (so `E[b²] = η`)
/// and `ξ ∼ U[-1, 1]`; bound `4(η + ε_N + λ)`.
pub fn ridge_risk_check(d: usize, n: usize, eta: f64, lambda: f64, delta: f64, seeds: u64, base_seed: u64) -> Vec<RiskRow> {
    let bound = 4.0 * (eta + eps_n(d, n, delta) + lambda);
    let scales = covariate_scales(d);
    (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut rng = derived_rng(base_seed, stream::MONTE_CARLO, seed);
            let theta = unit_theta(&mut rng, d);
            let data: Vec<RegressionSample> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = scales.iter().map(|s| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
                    let b = eta.sqrt() * if x[0] >= 0.0 { 1.0 } else { -1.0 };
                    let xi: f64 = rng.random_range(-1.0..=1.0);
                    RegressionSample { y: linalg::dot(&theta, &x) + b + xi, x }
                })
                .collect();
            let fit = ridge_fit(&data, lambda).expect("nonempty data");
            let risk = excess_risk(&fit.theta, &theta, &scales);
            RiskRow { seed, risk, bound, pass: risk <= bound }
        })
        .collect()
}

/// `8(ε_N + λ) + 288 η^1.5 C^2.5 d^4.5 δ^-0.5`.
pub fn sparse_bias_bound(d: usize, n: usize, eta: f64, lambda: f64, c_hyper: f64, delta: f64) -> f64 {
    8.0 * (eps_n(d, n, delta) + lambda) + 288.0 * eta.powf(1.5) * c_hyper.powf(2.5) * (d as f64).powf(4.5) * delta.powf(-0.5)
}

/// Sparse-bias check with Gaussian covariates (`C = 3`): `b ≠ 0` with
/// probability `η`, `|b| ≤ 1`, `ξ ∼ U[-1, 1]`.
pub fn sparse_bias_risk_check(d: usize, n: usize, eta: f64, lambda: f64, delta: f64, bias: BiasKind, seeds: u64, base_seed: u64) -> Vec<RiskRow> {
    let bound = sparse_bias_bound(d, n, eta, lambda, 3.0, delta);
    let scales = covariate_scales(d);
    (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut rng = derived_rng(base_seed, stream::MONTE_CARLO, seed);
            let theta = unit_theta(&mut rng, d);
            let data: Vec<RegressionSample> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = scales.iter().map(|s| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
                    let b = if rng.random_bool(eta) {
                        match bias {
                            BiasKind::Random => rng.random_range(-1.0..=1.0),
                            BiasKind::Aligned => if x[d - 1] >= 0.0 { 1.0 } else { -1.0 },
                        }
                    } else {
                        0.0
                    };
                    let xi: f64 = rng.random_range(-1.0..=1.0);
                    RegressionSample { y: linalg::dot(&theta, &x) + b + xi, x }
                })
                .collect();
            let fit = ridge_fit(&data, lambda).expect("nonempty data");
            let risk = excess_risk(&fit.theta, &theta, &scales);
            RiskRow { seed, risk, bound, pass: risk <= bound }
        })
        .collect()
}
