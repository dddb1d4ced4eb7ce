//! Certified packs of nearly orthogonal unit vectors.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng::{derived_rng, stream};

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("invalid pack parameters: {0}")]
    Invalid(String),
    #[error("retry budget exhausted after placing {achieved} of {requested} vectors")]
    Infeasible { achieved: usize, requested: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorPack {
    pub d: usize,
    pub m: usize,
    pub gamma: f64,
    pub vectors: Vec<Vec<f64>>,
    pub max_abs_inner: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackReport {
    pub max_abs_inner: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub max_norm_deviation: f64,
}

impl PackReport {
    pub fn certifies(&self, gamma: f64) -> bool {
        self.max_abs_inner <= gamma && self.max_norm_deviation <= 1e-12
    }
}

impl VectorPack {
    /// The standard basis of `R^d` (`m = d`).
    pub fn orthonormal(d: usize, gamma: f64) -> Self {
        let vectors = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        VectorPack { d, m: d, gamma, vectors, max_abs_inner: 0.0, seed: 0 }
    }

    #[inline]
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        linalg::dot(&self.vectors[i], &self.vectors[j])
    }
}

pub struct PackOptions {
    pub retry_budget: u64,
    /// Return the standard basis when `m == d`.
    pub exact_basis: bool,
    /// When greedy sampling stalls, complete the set at random and run a
    /// coherence-reducing descent before certifying.
    pub refine: bool,
}

impl Default for PackOptions {
    fn default() -> Self {
        PackOptions { retry_budget: 1_000_000, exact_basis: false, refine: true }
    }
}

const REFINE_EXPONENTS: [i32; 5] = [8, 16, 32, 64, 128];
const REFINE_ITERS: usize = 1500;
const REFINE_STEP: f64 = 0.02;
const REFINE_RESTARTS: u64 = 4;

fn max_coherence(vs: &[Vec<f64>]) -> f64 {
    let mut mx: f64 = 0.0;
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            mx = mx.max(linalg::dot(&vs[i], &vs[j]).abs());
        }
    }
    mx
}

fn random_unit<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&v);
        if n >= 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Descent on `Σ_{i≠j} (⟨v_i,v_j⟩ / c)^p` over the product of spheres with an
/// increasing exponent `p`, a smooth surrogate for the maximum coherence `c`.
/// Stops once the coherence reaches `target`; returns the best iterate seen.
fn refine(mut vs: Vec<Vec<f64>>, target: f64) -> (Vec<Vec<f64>>, f64) {
    let (m, d) = (vs.len(), vs[0].len());
    let mut best = vs.clone();
    let mut best_c = max_coherence(&vs);
    let mut grad = vec![vec![0.0; d]; m];
    for &p in &REFINE_EXPONENTS {
        for _ in 0..REFINE_ITERS {
            let mut gram = vec![0.0; m * m];
            let mut c: f64 = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    let g = linalg::dot(&vs[i], &vs[j]);
                    gram[i * m + j] = g;
                    gram[j * m + i] = g;
                    c = c.max(g.abs());
                }
            }
            if c < best_c {
                best_c = c;
                best.clone_from(&vs);
            }
            if best_c <= target {
                return (best, best_c);
            }
            let mut gmax: f64 = 0.0;
            for i in 0..m {
                grad[i].iter_mut().for_each(|x| *x = 0.0);
                for j in 0..m {
                    if i != j {
                        let w = (gram[i * m + j] / c).powi(p - 1);
                        for k in 0..d {
                            grad[i][k] += w * vs[j][k];
                        }
                    }
                }
                let radial = linalg::dot(&grad[i], &vs[i]);
                for k in 0..d {
                    grad[i][k] -= radial * vs[i][k];
                }
                gmax = gmax.max(linalg::norm(&grad[i]));
            }
            if gmax < 1e-300 {
                break;
            }
            let scale = REFINE_STEP * c / gmax;
            for i in 0..m {
                for k in 0..d {
                    vs[i][k] -= scale * grad[i][k];
                }
                let n = linalg::norm(&vs[i]);
                vs[i].iter_mut().for_each(|x| *x /= n);
            }
        }
    }
    let c = max_coherence(&vs);
    if c < best_c {
        return (vs, c);
    }
    (best, best_c)
}

/// Greedy rejection sampling: draw normalized Gaussians and keep those whose
/// inner products with every accepted vector are at most `gamma` in absolute
/// value. `retry_budget` caps the total number of candidates. If the greedy
/// phase stalls and `opts.refine` is set, the partial set is completed at
/// random and refined; the result is accepted only if the exhaustive pair
/// check certifies `gamma`.
pub fn build_pack(d: usize, m: usize, gamma: f64, seed: u64, opts: &PackOptions) -> Result<VectorPack, PackError> {
    if d == 0 || m == 0 {
        return Err(PackError::Invalid("d and m must be positive".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(PackError::Invalid(format!("gamma {gamma} outside (0, 1)")));
    }
    if opts.exact_basis && m == d {
        let mut p = VectorPack::orthonormal(d, gamma);
        p.seed = seed;
        return Ok(p);
    }
    let mut rng = derived_rng(seed, stream::PACK, 0);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut tries = 0u64;
    while accepted.len() < m && tries < opts.retry_budget {
        tries += 1;
        let v = random_unit(d, &mut rng);
        if accepted.iter().all(|u| linalg::dot(u, &v).abs() <= gamma) {
            accepted.push(v);
        }
    }
    let vectors = if accepted.len() == m {
        accepted
    } else if opts.refine && m > 1 {
        let mut found = None;
        for restart in 0..REFINE_RESTARTS {
            let mut start = if restart == 0 { accepted.clone() } else { Vec::new() };
            let mut fill = derived_rng(seed, stream::PACK, 1 + restart);
            while start.len() < m {
                start.push(random_unit(d, &mut fill));
            }
            let (vs, c) = refine(start, gamma);
            if c <= gamma {
                found = Some(vs);
                break;
            }
        }
        found.ok_or(PackError::Infeasible { achieved: accepted.len(), requested: m })?
    } else {
        return Err(PackError::Infeasible { achieved: accepted.len(), requested: m });
    };
    let mut pack = VectorPack { d, m, gamma, vectors, max_abs_inner: 0.0, seed };
    let report = verify_pack(&pack);
    if !report.certifies(gamma) {
        return Err(PackError::Infeasible { achieved: 0, requested: m });
    }
    pack.max_abs_inner = report.max_abs_inner;
    Ok(pack)
}

/// Exhaustive pairwise recomputation of the certificate.
pub fn verify_pack(pack: &VectorPack) -> PackReport {
    let mut max_abs_inner: f64 = 0.0;
    let mut worst_pair = None;
    let mut max_norm_deviation: f64 = 0.0;
    for i in 0..pack.vectors.len() {
        max_norm_deviation = max_norm_deviation.max((linalg::norm(&pack.vectors[i]) - 1.0).abs());
        for j in (i + 1)..pack.vectors.len() {
            let ip = pack.inner(i, j).abs();
            if worst_pair.is_none() || ip > max_abs_inner {
                max_abs_inner = ip;
                worst_pair = Some((i, j));
            }
        }
    }
    PackReport { max_abs_inner, worst_pair, max_norm_deviation }
}
