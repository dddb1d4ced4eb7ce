//! Backward least-squares planning with a generative model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{kw_design, DEFAULT_EPS, DEFAULT_MAX_ITER};
use crate::mdp::{GenerativeModel, MdpError, PolicySpec, StateId};
use crate::regression::{solve_shifted, RidgeStats};
use crate::rng::{derived_rng, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub query_budget: u64,
    /// Queries spent per level, split across design points by weight.
    pub per_level_samples: usize,
    /// States examined per level; every state when the model has fewer.
    pub state_samples: usize,
    /// Ridge parameter; zero gives the minimum-norm least-squares fit.
    pub lambda: f64,
}

impl PlannerConfig {
    /// Spreads `budget` evenly across the levels, keeping a small reserve
    /// for design points whose share rounds up to one query.
    pub fn for_budget(budget: u64, horizon: usize) -> Self {
        PlannerConfig {
            query_budget: budget,
            per_level_samples: (budget as f64 * 0.98 / horizon.max(1) as f64) as usize,
            state_samples: 4096,
            lambda: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutcome {
    pub policy: PolicySpec,
    pub thetas: Vec<Vec<f64>>,
    pub queries: u64,
    pub truncated: bool,
    /// Design support size per level; zero for levels never reached.
    pub support_sizes: Vec<usize>,
}

fn greedy_value(model: &GenerativeModel<'_>, s: StateId, theta: &[f64]) -> f64 {
    model.features().scores(s, theta).fold(f64::NEG_INFINITY, f64::max)
}

/// For `h = H, …, 1`: design over the features of the sampled states, query
/// each design point `⌈w·per_level⌉` times, regress `r + max_a φ(s', a)ᵀθ_{h+1}`.
/// Running out of queries returns the levels fitted so far with the rest at
/// zero and `truncated` set.
pub fn generative_planner(model: &mut GenerativeModel<'_>, cfg: &PlannerConfig, seed: u64) -> Result<PlannerOutcome, MdpError> {
    let horizon = model.horizon();
    let d = model.features().dim();
    let mut rng = derived_rng(seed, stream::LEARNER, 1);
    let mut thetas = vec![vec![0.0; d]; horizon];
    let mut support_sizes = vec![0; horizon];
    let start = model.queries();
    let mut truncated = false;
    'levels: for h in (1..=horizon).rev() {
        let n = model.num_states();
        let states: Vec<StateId> = if n <= cfg.state_samples {
            (0..n).collect()
        } else {
            let mut v: Vec<StateId> = (0..cfg.state_samples).map(|_| rng.random_range(0..n)).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut points: Vec<(StateId, usize)> = Vec::new();
        for &s in &states {
            for (k, x) in model.features().state(s).iter().enumerate() {
                if x.iter().any(|&v| v != 0.0) {
                    points.push((s, k));
                }
            }
        }
        if points.is_empty() {
            continue;
        }
        let xs: Vec<&[f64]> = points.iter().map(|&(s, k)| model.features().at(s, k)).collect();
        let design = kw_design(&xs, DEFAULT_EPS, DEFAULT_MAX_ITER).map_err(|e| MdpError::Invalid(e.to_string()))?;
        support_sizes[h - 1] = design.support.len();
        let mut stats = RidgeStats::new(d);
        for (&idx, &w) in design.support.iter().zip(&design.weights) {
            let (s, k) = points[idx];
            let a = model.admissible()[s][k];
            let reps = ((w * cfg.per_level_samples as f64).floor() as usize).max(1);
            for _ in 0..reps {
                if model.queries() - start >= cfg.query_budget {
                    truncated = true;
                    break 'levels;
                }
                let (r, next) = model.query(h, s, a)?;
                let cont = if h < horizon { greedy_value(model, next, &thetas[h]) } else { 0.0 };
                stats.push(xs[idx], r + cont);
            }
        }
        let (theta, _) = solve_shifted(&stats.gram, cfg.lambda * stats.n as f64, &stats.xy);
        thetas[h - 1] = theta.iter().cloned().collect();
    }
    Ok(PlannerOutcome { policy: PolicySpec::LinearGreedy { thetas: thetas.clone() }, thetas, queries: model.queries() - start, truncated, support_sizes })
}
