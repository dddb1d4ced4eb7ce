//! G-optimal (equivalently D-optimal) designs over finite vector sets.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, RANK_TOL};
use crate::mdp::{DesignProvider, FeatureMap, MdpModel, StateId};

pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("empty input set")]
    Empty,
    #[error("every input vector is zero")]
    Degenerate,
    #[error("state distribution is invalid: {0}")]
    BadDistribution(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDistribution {
    /// Indices into the input set carrying positive weight.
    pub support: Vec<usize>,
    /// Weights aligned with `support`.
    pub weights: Vec<f64>,
    /// `Σ w_i x_i x_iᵀ`, row-major.
    pub covariance: Vec<Vec<f64>>,
    /// Max leverage over the whole input set, recomputed by exhaustive scan.
    pub g_value: f64,
    pub effective_dim: usize,
    pub certified: bool,
    pub iterations: usize,
}

impl DesignDistribution {
    /// Weights over the full input set of size `n`.
    pub fn full_weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for (&i, &p) in self.support.iter().zip(&self.weights) {
            w[i] = p;
        }
        w
    }
}

/// Coordinates of the inputs in an orthonormal basis of their span. When the
/// inputs span the whole space the raw coordinates are kept.
fn span_coordinates(xs: &[&[f64]], dim: usize) -> Vec<DVector<f64>> {
    let basis = linalg::row_span_basis(xs, dim, RANK_TOL);
    if basis.ncols() == dim {
        return xs.iter().map(|x| DVector::from_column_slice(x)).collect();
    }
    xs.iter().map(|x| basis.transpose() * DVector::from_column_slice(x)).collect()
}

/// Greedy volume-maximizing start: repeatedly take the vector with the largest
/// component orthogonal to those already chosen.
fn volume_start(ys: &[DVector<f64>], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    let mut residual: Vec<DVector<f64>> = ys.to_vec();
    let scale = ys.iter().map(|y| y.norm()).fold(0.0_f64, f64::max);
    while chosen.len() < k {
        let (best, norm) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, r)| (i, r.norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == usize::MAX || norm <= RANK_TOL * scale {
            break;
        }
        chosen.push(best);
        let q = &residual[best] / norm;
        for r in residual.iter_mut() {
            let c = q.dot(r);
            r.axpy(-c, &q, 1.0);
        }
    }
    chosen
}

fn weighted_cov(ys: &[DVector<f64>], w: &[f64], k: usize) -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(k, k);
    for (y, &p) in ys.iter().zip(w) {
        if p > 0.0 {
            cov.ger(p, y, y, 1.0);
        }
    }
    linalg::symmetrize(&mut cov);
    cov
}

/// `yᵀ Σ⁻¹ y` for every input via one LU factorization; `None` if singular.
fn leverages(ys: &[DVector<f64>], cov: &DMatrix<f64>) -> Option<Vec<f64>> {
    let lu = cov.clone().lu();
    ys.iter().map(|y| lu.solve(y).map(|z| y.dot(&z))).collect()
}

/// Frank–Wolfe (Fedorov–Wynn) ascent on `log det Σ` restricted to the span of
/// the inputs, stopped once the max leverage is at most `k(1 + eps)`.
pub fn kw_design(xs: &[&[f64]], eps: f64, max_iter: usize) -> Result<DesignDistribution, DesignError> {
    if xs.is_empty() {
        return Err(DesignError::Empty);
    }
    let dim = xs[0].len();
    if xs.iter().all(|x| x.iter().all(|&v| v == 0.0)) {
        return Err(DesignError::Degenerate);
    }
    let ys = span_coordinates(xs, dim);
    let k = ys[0].len();
    if k == 0 {
        return Err(DesignError::Degenerate);
    }
    let start = volume_start(&ys, k);
    let k = start.len();
    let mut w = vec![0.0; ys.len()];
    for &i in &start {
        w[i] = 1.0 / k as f64;
    }
    let kf = k as f64;
    let target = kf * (1.0 + eps);
    let mut iterations = 0;
    #[cfg(debug_assertions)]
    let mut last_logdet = f64::NEG_INFINITY;
    loop {
        let cov = weighted_cov(&ys, &w, k);
        let Some(lev) = leverages(&ys, &cov) else { break };
        #[cfg(debug_assertions)]
        {
            let ld = cov.clone().cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>());
            if let Some(ld) = ld {
                debug_assert!(ld >= last_logdet - 1e-9 * ld.abs().max(1.0), "log det decreased: {last_logdet} -> {ld}");
                last_logdet = ld;
            }
        }
        let (j, g) = lev.iter().cloned().enumerate().fold((0, f64::NEG_INFINITY), |a, x| if x.1 > a.1 { x } else { a });
        if g <= target || iterations >= max_iter || g <= 1.0 {
            break;
        }
        let alpha = (g - kf) / (kf * (g - 1.0));
        for p in w.iter_mut() {
            *p *= 1.0 - alpha;
        }
        w[j] += alpha;
        iterations += 1;
    }

    // Certificate from the final weights, over every input.
    let cov_y = weighted_cov(&ys, &w, k);
    let g_value = leverages(&ys, &cov_y).map(|lev| lev.into_iter().fold(f64::NEG_INFINITY, f64::max)).unwrap_or(f64::INFINITY);
    let mut covariance = DMatrix::zeros(dim, dim);
    for (x, &p) in xs.iter().zip(&w) {
        if p > 0.0 {
            linalg::add_outer(&mut covariance, x, p);
        }
    }
    let (support, weights): (Vec<usize>, Vec<f64>) = w.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).unzip();
    Ok(DesignDistribution {
        support,
        weights,
        covariance: (0..dim).map(|r| covariance.row(r).iter().cloned().collect()).collect(),
        g_value,
        effective_dim: k,
        certified: g_value <= target,
        iterations,
    })
}

/// `max_x xᵀ Σ⁺ x` over `xs` for the design's covariance.
pub fn max_leverage(xs: &[&[f64]], covariance: &[Vec<f64>]) -> f64 {
    let d = covariance.len();
    let cov = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
    let pinv = linalg::pinv_sym(&cov, RANK_TOL);
    xs.iter().map(|x| linalg::quad_form(&pinv, x)).fold(f64::NEG_INFINITY, f64::max)
}

/// Per-state design `ρ_s` with `eps = 0.01`.
pub fn state_design(features: &FeatureMap, s: StateId) -> Result<DesignDistribution, DesignError> {
    let xs: Vec<&[f64]> = features.state(s).iter().map(|x| x.as_slice()).collect();
    kw_design(&xs, DEFAULT_EPS, DEFAULT_MAX_ITER)
}

/// Lazily filled per-state design cache. Lookups share a read lock; misses
/// compute outside the lock and insert under the write lock.
pub struct DesignCache<'a> {
    features: &'a FeatureMap,
    cache: RwLock<HashMap<StateId, Option<Arc<Vec<f64>>>>>,
}

impl<'a> DesignCache<'a> {
    pub fn new(features: &'a FeatureMap) -> Self {
        DesignCache { features, cache: RwLock::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("design cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DesignProvider for DesignCache<'_> {
    fn design(&self, s: StateId) -> Option<Arc<Vec<f64>>> {
        if let Some(hit) = self.cache.read().expect("design cache poisoned").get(&s) {
            return hit.clone();
        }
        let n = self.features.state(s).len();
        let computed = state_design(self.features, s).ok().map(|d| Arc::new(d.full_weights(n)));
        self.cache.write().expect("design cache poisoned").entry(s).or_insert(computed).clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgDesignReport {
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// Mass of `ν` on states whose features are all zero.
    pub excluded_mass: f64,
}

/// `E_{s∼ν}[max_a φ(s,a)ᵀ Σ⁺ φ(s,a)]` with `Σ = E_{s∼ν} Σ_s`, compared to `d²`.
pub fn avg_design_bound(mdp: &MdpModel, features: &FeatureMap, nu: &[f64], designs: &dyn DesignProvider) -> Result<AvgDesignReport, DesignError> {
    if nu.len() != mdp.num_states() || nu.iter().any(|&p| !(p >= 0.0)) || (nu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DesignError::BadDistribution(format!("length {} / sum {}", nu.len(), nu.iter().sum::<f64>())));
    }
    let d = features.dim();
    let mut cov = DMatrix::zeros(d, d);
    let mut excluded_mass = 0.0;
    let mut included = Vec::new();
    for (s, &p) in nu.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        match designs.design(s) {
            Some(w) => {
                for (x, &q) in features.state(s).iter().zip(w.iter()) {
                    if q > 0.0 {
                        linalg::add_outer(&mut cov, x, p * q);
                    }
                }
                included.push((s, p));
            }
            None => excluded_mass += p,
        }
    }
    linalg::symmetrize(&mut cov);
    let pinv = linalg::pinv_sym(&cov, RANK_TOL);
    let value = included
        .iter()
        .map(|&(s, p)| p * features.state(s).iter().map(|x| linalg::quad_form(&pinv, x)).fold(0.0, f64::max))
        .sum();
    let bound = (d * d) as f64;
    Ok(AvgDesignReport { value, bound, pass: value <= bound, excluded_mass })
}
