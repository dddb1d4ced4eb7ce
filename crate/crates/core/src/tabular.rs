//! Exact backward induction on explicit models.

use serde::{Deserialize, Serialize};

use crate::mdp::{ActionId, MdpError, MdpModel, PolicyContext, PolicySpec, StateId};

/// Gaps at or below this are treated as ties between optimal actions.
pub const TOL_ZERO: f64 = 1e-10;

/// `q[h-1][s][k]` for the `k`-th admissible action, `v[h-1][s]`,
/// `greedy[h-1][s]`. `V_{H+1}` is implicitly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub greedy: Vec<Vec<ActionId>>,
}

impl ValueTables {
    pub fn q_at(&self, mdp: &MdpModel, h: usize, s: StateId, a: ActionId) -> Option<f64> {
        mdp.action_index(s, a).map(|k| self.q[h - 1][s][k])
    }

    /// The greedy policy as an explicit deterministic table.
    pub fn greedy_policy(&self) -> PolicySpec {
        PolicySpec::Tabular {
            table: self.greedy.iter().map(|lvl| lvl.iter().map(|&a| vec![(a, 1.0)]).collect()).collect(),
        }
    }

    pub fn value_at(&self, mu: &[f64]) -> f64 {
        mu.iter().zip(&self.v[0]).map(|(p, v)| p * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `None` when every included gap is a tie.
    pub delta_min: Option<f64>,
    pub witness: Option<(usize, StateId, ActionId)>,
    pub excluded_states: Vec<StateId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValues {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub value_at_mu: f64,
}

fn expected_next(mdp: &MdpModel, h: usize, s: StateId, k: usize, next_v: Option<&[f64]>) -> f64 {
    let r = mdp.reward(h, s, k).mean();
    match next_v {
        None => r,
        Some(v) => r + mdp.row(h, s, k).iter().map(|&(t, p)| p * v[t]).sum::<f64>(),
    }
}

pub fn optimal_values(mdp: &MdpModel) -> ValueTables {
    let (n, big_h) = (mdp.num_states(), mdp.horizon());
    let mut q = vec![Vec::new(); big_h];
    let mut v = vec![vec![0.0; n]; big_h];
    let mut greedy = vec![vec![0; n]; big_h];
    for h in (1..=big_h).rev() {
        let (lower, upper) = v.split_at_mut(h);
        let next = upper.first().map(|x| x.as_slice());
        let mut qh = Vec::with_capacity(n);
        for s in 0..n {
            let row: Vec<f64> = (0..mdp.actions(s).len()).map(|k| expected_next(mdp, h, s, k, next)).collect();
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            lower[h - 1][s] = row[best];
            greedy[h - 1][s] = mdp.actions(s)[best];
            qh.push(row);
        }
        q[h - 1] = qh;
    }
    ValueTables { q, v, greedy }
}

/// Largest `|Q_h(s,a) − E R_h − Σ P V_{h+1}|` over all entries.
pub fn bellman_residual(mdp: &MdpModel, tables: &ValueTables) -> f64 {
    let mut worst: f64 = 0.0;
    for h in 1..=mdp.horizon() {
        let next = tables.v.get(h).map(|x| x.as_slice());
        for s in 0..mdp.num_states() {
            for k in 0..mdp.actions(s).len() {
                let target = expected_next(mdp, h, s, k, next);
                worst = worst.max((tables.q[h - 1][s][k] - target).abs());
            }
        }
    }
    worst
}

/// Exact evaluation of a Markov policy. Mixtures are rejected; use
/// [`policy_value`] for their value at `μ`.
pub fn policy_evaluation(mdp: &MdpModel, policy: &PolicySpec, ctx: &PolicyContext<'_>) -> Result<PolicyValues, MdpError> {
    let (n, big_h) = (mdp.num_states(), mdp.horizon());
    let mut q = vec![Vec::new(); big_h];
    let mut v = vec![vec![0.0; n]; big_h];
    for h in (1..=big_h).rev() {
        let (lower, upper) = v.split_at_mut(h);
        let next = upper.first().map(|x| x.as_slice());
        let mut qh = Vec::with_capacity(n);
        for s in 0..n {
            let row: Vec<f64> = (0..mdp.actions(s).len()).map(|k| expected_next(mdp, h, s, k, next)).collect();
            let mut val = 0.0;
            for (a, p) in policy.action_distribution(ctx, h, s)? {
                let k = mdp.action_index(s, a).ok_or(MdpError::ContractViolation { h, s, a })?;
                val += p * row[k];
            }
            lower[h - 1][s] = val;
            qh.push(row);
        }
        q[h - 1] = qh;
    }
    let value_at_mu = mdp.initial_dist().iter().zip(&v[0]).map(|(p, x)| p * x).sum();
    Ok(PolicyValues { q, v, value_at_mu })
}

/// `E_{s1∼μ} V^π_1(s1)`; mixtures are averaged over their components.
pub fn policy_value(mdp: &MdpModel, policy: &PolicySpec, ctx: &PolicyContext<'_>) -> Result<f64, MdpError> {
    match policy {
        PolicySpec::Mixture { components } if !components.is_empty() => {
            let mut total = 0.0;
            for c in components {
                total += policy_value(mdp, c, ctx)?;
            }
            Ok(total / components.len() as f64)
        }
        other => Ok(policy_evaluation(mdp, other, ctx)?.value_at_mu),
    }
}

/// Distribution of `s_h` under `policy` (mixtures averaged).
pub fn visitation_distribution(
    mdp: &MdpModel,
    policy: &PolicySpec,
    ctx: &PolicyContext<'_>,
    h: usize,
) -> Result<Vec<f64>, MdpError> {
    if h == 0 || h > mdp.horizon() + 1 {
        return Err(MdpError::LevelOutOfRange(h));
    }
    if let PolicySpec::Mixture { components } = policy {
        if !components.is_empty() {
            let mut acc = vec![0.0; mdp.num_states()];
            for c in components {
                for (x, y) in acc.iter_mut().zip(visitation_distribution(mdp, c, ctx, h)?) {
                    *x += y / components.len() as f64;
                }
            }
            return Ok(acc);
        }
    }
    let mut d = mdp.initial_dist().to_vec();
    for level in 1..h {
        let mut next = vec![0.0; mdp.num_states()];
        for (s, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, p) in policy.action_distribution(ctx, level, s)? {
                let k = mdp.action_index(s, a).ok_or(MdpError::ContractViolation { h: level, s, a })?;
                for &(t, q) in mdp.row(level, s, k) {
                    next[t] += mass * p * q;
                }
            }
        }
        d = next;
    }
    Ok(d)
}

pub fn min_gap(mdp: &MdpModel, tables: &ValueTables, excluded_states: &[StateId]) -> GapReport {
    let mut excluded = vec![false; mdp.num_states()];
    for &s in excluded_states {
        if s < excluded.len() {
            excluded[s] = true;
        }
    }
    let mut best: Option<(f64, (usize, StateId, ActionId))> = None;
    for h in 1..=mdp.horizon() {
        for s in (0..mdp.num_states()).filter(|&s| !excluded[s]) {
            let vs = tables.v[h - 1][s];
            for (k, &a) in mdp.actions(s).iter().enumerate() {
                let gap = vs - tables.q[h - 1][s][k];
                if gap > TOL_ZERO && best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, (h, s, a)));
                }
            }
        }
    }
    GapReport {
        delta_min: best.map(|b| b.0),
        witness: best.map(|b| b.1),
        excluded_states: excluded_states.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{LevelTables, RewardSpec};

    fn bandit(rewards: &[f64]) -> MdpModel {
        let n = rewards.len();
        MdpModel::new(
            1,
            1,
            vec![(0..n).collect()],
            LevelTables::homogeneous(vec![vec![vec![(0, 1.0)]; n]], 1),
            LevelTables::homogeneous(vec![rewards.iter().map(|&r| RewardSpec::Deterministic(r)).collect()], 1),
            vec![1.0],
        )
        .unwrap()
    }

    /// States 0 → 1 → 2 → ... deterministically, reward 1 only at the last.
    fn chain(len: usize) -> MdpModel {
        let rows = (0..len).map(|s| vec![vec![((s + 1).min(len - 1), 1.0)]]).collect();
        let rew = (0..len).map(|_| vec![RewardSpec::Deterministic(0.0)]).collect();
        let mut mu = vec![0.0; len];
        mu[0] = 1.0;
        MdpModel::new(len, len - 1, vec![vec![0]; len], LevelTables::homogeneous(rows, len - 1), LevelTables::homogeneous(rew, len - 1), mu).unwrap()
    }

    #[test]
    fn one_step_bandit() {
        let m = bandit(&[0.0, 1.0]);
        let t = optimal_values(&m);
        assert_eq!(t.v[0][0], 1.0);
        assert_eq!(t.greedy[0][0], 1);
        let g = min_gap(&m, &t, &[]);
        assert_eq!(g.delta_min, Some(1.0));
        assert_eq!(g.witness, Some((1, 0, 0)));
    }

    #[test]
    fn ties_report_no_positive_gap_and_pick_lowest() {
        let m = bandit(&[0.5, 0.5, 0.5]);
        let t = optimal_values(&m);
        assert_eq!(t.greedy[0][0], 0);
        assert_eq!(min_gap(&m, &t, &[]).delta_min, None);
    }

    #[test]
    fn zero_reward_value_and_chain_visitation() {
        let m = chain(5);
        let ctx = PolicyContext::new(m.admissible());
        assert_eq!(policy_value(&m, &PolicySpec::Uniform, &ctx).unwrap(), 0.0);
        for h in 1..=4 {
            let d = visitation_distribution(&m, &PolicySpec::Uniform, &ctx, h).unwrap();
            assert_eq!(d[h - 1], 1.0);
        }
        assert_eq!(visitation_distribution(&m, &PolicySpec::Uniform, &ctx, 1).unwrap(), m.initial_dist());
    }

    #[test]
    fn greedy_policy_recovers_optimal_values() {
        let m = bandit(&[0.2, 0.9, 0.4]);
        let t = optimal_values(&m);
        let ctx = PolicyContext::new(m.admissible());
        let pv = policy_evaluation(&m, &t.greedy_policy(), &ctx).unwrap();
        assert_eq!(pv.value_at_mu, 0.9);
        assert_eq!(bellman_residual(&m, &t), 0.0);
    }
}
