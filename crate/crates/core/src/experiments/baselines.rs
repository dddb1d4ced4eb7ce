//! Control learners for the separation study.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{greedy_index, MdpError, OnlineEnv, PolicySpec, StateId};
use crate::regression::{solve_shifted, RidgeStats};
use crate::rng::{derived_rng, stream};

/// Plays uniformly for `budget` episodes and returns the uniform policy.
pub fn uniform_random(env: &mut OnlineEnv<'_>, budget: u64, seed: u64) -> Result<PolicySpec, MdpError> {
    let ctx = env.context();
    let mut rng = derived_rng(seed, stream::LEARNER, 2);
    for _ in 0..budget {
        env.run_episode(&PolicySpec::Uniform, &ctx, &mut rng)?;
    }
    Ok(PolicySpec::Uniform)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsviConfig {
    pub lambda: f64,
    pub epsilon: f64,
    /// Episodes before the first refit; epochs double afterwards.
    pub first_epoch: u64,
}

impl Default for LsviConfig {
    fn default() -> Self {
        LsviConfig { lambda: 1.0, epsilon: 0.1, first_epoch: 100 }
    }
}

/// Transition counts of one level keyed by `(s, action index, s')`.
struct LevelData {
    stats: RidgeStats,
    counts: HashMap<(StateId, usize, StateId), (f64, f64)>,
}

/// ε-greedy least-squares value iteration. Data from all epochs is kept;
/// after each epoch every level is refitted backward with targets
/// `r + max_a φ(s', a)ᵀθ_{h+1}`.
pub fn lsvi_greedy(env: &mut OnlineEnv<'_>, budget: u64, cfg: &LsviConfig, seed: u64) -> Result<PolicySpec, MdpError> {
    let features = env.features();
    let (d, horizon) = (features.dim(), env.horizon());
    let admissible = env.admissible();
    let mut rng = derived_rng(seed, stream::LEARNER, 3);
    let mut thetas = vec![vec![0.0; d]; horizon];
    let mut data: Vec<LevelData> = (0..horizon).map(|_| LevelData { stats: RidgeStats::new(d), counts: HashMap::new() }).collect();
    let mut played = 0;
    let mut epoch = cfg.first_epoch.max(1);
    while played < budget {
        let this = epoch.min(budget - played);
        for _ in 0..this {
            let mut s = env.reset()?;
            for h in 1..=horizon {
                let acts = &admissible[s];
                let k = if rng.random_bool(cfg.epsilon) { rng.random_range(0..acts.len()) } else { greedy_index(features, s, &thetas[h - 1]) };
                let out = env.step(acts[k])?;
                let lvl = &mut data[h - 1];
                lvl.stats.push(features.at(s, k), 0.0);
                let e = lvl.counts.entry((s, k, out.next_state)).or_insert((0.0, 0.0));
                e.0 += 1.0;
                e.1 += out.reward;
                s = out.next_state;
            }
        }
        played += this;
        epoch *= 2;
        for h in (1..=horizon).rev() {
            let lvl = &data[h - 1];
            if lvl.stats.n == 0 {
                continue;
            }
            let mut xy = nalgebra::DVector::zeros(d);
            let mut keys: Vec<_> = lvl.counts.iter().collect();
            keys.sort_by_key(|(k, _)| **k);
            for (&(s, k, next), &(count, rsum)) in keys {
                let cont = if h < horizon { features.scores(next, &thetas[h]).fold(f64::NEG_INFINITY, f64::max) } else { 0.0 };
                let y = rsum + count * cont;
                for (acc, xi) in xy.iter_mut().zip(features.at(s, k)) {
                    *acc += xi * y;
                }
            }
            let (theta, _) = solve_shifted(&lvl.stats.gram, cfg.lambda, &xy);
            thetas[h - 1] = theta.iter().cloned().collect();
        }
    }
    Ok(PolicySpec::LinearGreedy { thetas })
}
