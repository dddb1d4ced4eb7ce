//! Monte Carlo survival probabilities `Pr[s_h ≠ f]` on hard instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hard::{HardError, HardInstance, Variant};
use crate::mdp::{sample_trajectory, MdpModel, PolicyContext, PolicySpec};
use crate::rng::{derive_seed, stream};
use crate::tabular::{visitation_distribution, ValueTables};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub policy: String,
    pub h: usize,
    pub episodes: u64,
    pub empirical: f64,
    pub std_err: f64,
    /// Exact value from the visitation distribution.
    pub exact: f64,
    /// `(3γ)^{h-1}`.
    pub cap: f64,
    pub pass: bool,
}

/// Mixes the greedy action of `tables` with uniform exploration at rate `eps`.
pub fn epsilon_greedy(mdp: &MdpModel, tables: &ValueTables, eps: f64) -> PolicySpec {
    let table = (0..mdp.horizon())
        .map(|lvl| {
            (0..mdp.num_states())
                .map(|s| {
                    let acts = mdp.actions(s);
                    let u = eps / acts.len() as f64;
                    let g = tables.greedy[lvl][s];
                    acts.iter().map(|&a| (a, if a == g { u + 1.0 - eps } else { u })).collect()
                })
                .collect()
        })
        .collect();
    PolicySpec::Tabular { table }
}

/// Survival per level for each named policy. A row passes when the
/// estimate stays below the cap plus three standard errors.
pub fn survival_decay(inst: &HardInstance, policies: &[(String, PolicySpec)], episodes: u64, seed: u64) -> Result<Vec<SurvivalRow>, HardError> {
    if !matches!(inst.variant, Variant::Base | Variant::Reference) {
        return Err(HardError::Unsupported(inst.variant));
    }
    let mdp = &inst.mdp;
    let horizon = mdp.horizon();
    let f = inst.terminal();
    let ctx = PolicyContext::new(mdp.admissible()).with_features(&inst.features);
    let mut rows = Vec::new();
    for (p_idx, (name, policy)) in policies.iter().enumerate() {
        let base = derive_seed(seed, stream::MONTE_CARLO, p_idx as u64);
        let alive = (0..episodes)
            .into_par_iter()
            .map(|i| -> Result<Vec<u64>, HardError> {
                let t = sample_trajectory(mdp, policy, &ctx, derive_seed(base, stream::EPISODE, i))?;
                Ok((1..=horizon).map(|h| u64::from(t.state_at(h) != f)).collect())
            })
            .try_reduce(|| vec![0; horizon], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
        for h in 1..=horizon {
            let p = alive[h - 1] as f64 / episodes as f64;
            let se = (p * (1.0 - p) / episodes as f64).sqrt();
            let exact = 1.0 - visitation_distribution(mdp, policy, &ctx, h)?[f];
            let cap = (3.0 * inst.pack.gamma).powi(h as i32 - 1);
            rows.push(SurvivalRow { policy: name.clone(), h, episodes, empirical: p, std_err: se, exact, cap, pass: p <= cap + 3.0 * se });
        }
    }
    Ok(rows)
}
