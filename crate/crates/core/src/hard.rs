//! The leaking complete-graph family `M_{a*}`, its reference model `M_0`,
//! the auxiliary-dimension variant with a gap at every state, and the variant
//! with a deterministic start state that makes every state reachable.
//!
//! Pack index `i` doubles as action id `i` and labels state `ī`. The stop
//! action of the reachable variant is id `m`.

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::mdp::{ActionId, FeatureMap, LevelTables, MdpError, MdpModel, RewardSpec, StateId, TransitionRow};
use crate::pack::VectorPack;
use crate::tabular::{self, GapReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Reference,
    GapComplete,
    Reachable,
}

/// Reward used at `ā*` for actions other than `a*` in the auxiliary-dimension
/// variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// `−2γ(⟨v*, v₂⟩ + 2γ)`, which makes `(1, v*)` an exact Q* coefficient.
    #[default]
    BellmanConsistent,
    /// `(⟨v*, v₂⟩ + 2γ)·⟨v*, v₂⟩`; leaves a nonzero Bellman residual at `ā*`.
    StrictPaper,
}

#[derive(Debug, thiserror::Error)]
pub enum HardError {
    #[error("{0}")]
    Invalid(String),
    #[error("operation not supported for the {0:?} variant")]
    Unsupported(Variant),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardInstance {
    pub variant: Variant,
    pub mode: Option<ConsistencyMode>,
    pub pack: VectorPack,
    pub a_star: Option<ActionId>,
    pub horizon: usize,
    pub mdp: MdpModel,
    pub features: FeatureMap,
    /// `theta_star[h-1]`; absent for the reference model.
    pub theta_star: Option<Vec<Vec<f64>>>,
    /// `bar[i]` is the state `ī`, or `None` when it was removed.
    bar: Vec<Option<StateId>>,
    terminal: StateId,
    start: Option<StateId>,
}

/// Leak probability `⟨v(i), v(j)⟩ + 2γ`. Every builder goes through this so
/// that shared table entries are bit-identical across variants.
#[inline]
fn leak(pack: &VectorPack, i: usize, j: usize) -> f64 {
    pack.inner(i, j) + 2.0 * pack.gamma
}

#[inline]
fn penalty(pack: &VectorPack, i: usize, j: usize) -> f64 {
    -2.0 * pack.gamma * leak(pack, i, j)
}

fn to_row(pairs: &[(StateId, f64)]) -> TransitionRow {
    let mut row: TransitionRow = pairs.iter().copied().filter(|&(_, p)| p > 0.0).collect();
    row.sort_by_key(|&(s, _)| s);
    row
}

fn det(r: f64) -> RewardSpec {
    RewardSpec::Deterministic(r)
}

fn check_common(pack: &VectorPack, a_star: Option<ActionId>, horizon: usize) -> Result<(), HardError> {
    if pack.m < 2 {
        return Err(HardError::Invalid("need at least two vectors".into()));
    }
    if horizon == 0 {
        return Err(HardError::Invalid("horizon must be at least 1".into()));
    }
    if !(pack.gamma > 0.0 && 3.0 * pack.gamma < 1.0) {
        return Err(HardError::Invalid(format!("gamma {} must lie in (0, 1/3)", pack.gamma)));
    }
    if let Some(a) = a_star {
        if a >= pack.m {
            return Err(HardError::Invalid(format!("a_star {a} out of range for m = {}", pack.m)));
        }
    }
    Ok(())
}

fn check_sixth(pack: &VectorPack) -> Result<(), HardError> {
    if (pack.gamma - 1.0 / 6.0).abs() > 1e-12 {
        return Err(HardError::Invalid(format!("this variant requires gamma = 1/6, got {}", pack.gamma)));
    }
    Ok(())
}

/// Reward tables: index 0 serves `h < H`, index 1 serves `h = H`.
fn split_rewards(early: Vec<Vec<RewardSpec>>, last: Vec<Vec<RewardSpec>>, horizon: usize) -> LevelTables<RewardSpec> {
    let mut by_level = vec![0; horizon];
    by_level[horizon - 1] = 1;
    LevelTables { tables: vec![early, last], by_level }
}

fn final_rewards(features: &[Vec<Vec<f64>>], theta: &[f64]) -> Vec<Vec<RewardSpec>> {
    features.iter().map(|row| row.iter().map(|x| det(linalg::dot(x, theta))).collect()).collect()
}

fn uniform_over_bars(m: usize, n: usize) -> Vec<f64> {
    let mut mu = vec![0.0; n];
    mu[..m].iter_mut().for_each(|p| *p = 1.0 / m as f64);
    mu
}

impl HardInstance {
    pub fn build_base(pack: &VectorPack, a_star: ActionId, horizon: usize) -> Result<Self, HardError> {
        check_common(pack, Some(a_star), horizon)?;
        Self::leaking_graph(pack, Some(a_star), horizon)
    }

    pub fn build_reference(pack: &VectorPack, horizon: usize) -> Result<Self, HardError> {
        check_common(pack, None, horizon)?;
        Self::leaking_graph(pack, None, horizon)
    }

    fn leaking_graph(pack: &VectorPack, a_star: Option<ActionId>, horizon: usize) -> Result<Self, HardError> {
        let (m, d) = (pack.m, pack.d);
        let f = m;
        let mut admissible = Vec::with_capacity(m + 1);
        let mut feats = Vec::with_capacity(m + 1);
        let mut trans = Vec::with_capacity(m + 1);
        let mut early = Vec::with_capacity(m + 1);
        for i in 0..m {
            let acts: Vec<ActionId> = (0..m).filter(|&j| j != i).collect();
            let mut fr = Vec::new();
            let mut tr = Vec::new();
            let mut rr = Vec::new();
            for &j in &acts {
                let c = leak(pack, i, j);
                fr.push(pack.vectors[j].iter().map(|x| c * x).collect::<Vec<f64>>());
                if Some(j) == a_star {
                    tr.push(vec![(f, 1.0)]);
                    rr.push(det(c));
                } else {
                    tr.push(to_row(&[(j, c), (f, 1.0 - c)]));
                    rr.push(det(penalty(pack, i, j)));
                }
            }
            admissible.push(acts);
            feats.push(fr);
            trans.push(tr);
            early.push(rr);
        }
        admissible.push((0..m - 1).collect());
        feats.push(vec![vec![0.0; d]; m - 1]);
        trans.push(vec![vec![(f, 1.0)]; m - 1]);
        early.push(vec![det(0.0); m - 1]);

        let (rewards, theta_star, variant) = match a_star {
            Some(a) => {
                let theta = pack.vectors[a].clone();
                let last = final_rewards(&feats, &theta);
                (split_rewards(early, last, horizon), Some(vec![theta; horizon]), Variant::Base)
            }
            None => (LevelTables::homogeneous(early, horizon), None, Variant::Reference),
        };
        let mdp = MdpModel::new(m + 1, horizon, admissible, LevelTables::homogeneous(trans, horizon), rewards, uniform_over_bars(m, m + 1))?;
        let features = FeatureMap::new(d, feats)?;
        features.check_against(&mdp)?;
        Ok(HardInstance {
            variant,
            mode: None,
            pack: pack.clone(),
            a_star,
            horizon,
            mdp,
            features,
            theta_star,
            bar: (0..m).map(Some).collect(),
            terminal: f,
            start: None,
        })
    }

    pub fn build_gap_complete(pack: &VectorPack, a_star: ActionId, horizon: usize, mode: ConsistencyMode) -> Result<Self, HardError> {
        check_common(pack, Some(a_star), horizon)?;
        check_sixth(pack)?;
        Self::auxiliary(pack, a_star, horizon, mode, false)
    }

    pub fn build_reachable(pack: &VectorPack, a_star: ActionId, horizon: usize) -> Result<Self, HardError> {
        check_common(pack, Some(a_star), horizon)?;
        check_sixth(pack)?;
        Self::auxiliary(pack, a_star, horizon, ConsistencyMode::BellmanConsistent, true)
    }

    fn auxiliary(pack: &VectorPack, a_star: ActionId, horizon: usize, mode: ConsistencyMode, reachable: bool) -> Result<Self, HardError> {
        let (m, d, g) = (pack.m, pack.d, pack.gamma);
        let lift = |head: f64, tail: Option<(&[f64], f64)>| -> Vec<f64> {
            let mut x = vec![0.0; d + 1];
            x[0] = head;
            if let Some((v, c)) = tail {
                for (k, &vk) in v.iter().enumerate() {
                    x[k + 1] = c * vk;
                }
            }
            x
        };
        let mut bar = vec![None; m];
        let mut next_id = 0;
        for (i, slot) in bar.iter_mut().enumerate() {
            if !(reachable && i == a_star) {
                *slot = Some(next_id);
                next_id += 1;
            }
        }
        let f = next_id;
        let n = if reachable { f + 2 } else { f + 1 };

        let mut admissible = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n);
        let mut trans = Vec::with_capacity(n);
        let mut early = Vec::with_capacity(n);
        for i in (0..m).filter(|&i| bar[i].is_some()) {
            let mut fr = Vec::with_capacity(m);
            let mut tr = Vec::with_capacity(m);
            let mut rr = Vec::with_capacity(m);
            for j in 0..m {
                if j == i {
                    fr.push(lift(0.75 * g, None));
                    tr.push(vec![(f, 1.0)]);
                    rr.push(det(0.75 * g));
                    continue;
                }
                let c = leak(pack, i, j);
                fr.push(lift(0.0, Some((&pack.vectors[j], c))));
                if j == a_star {
                    tr.push(vec![(f, 1.0)]);
                    rr.push(det(c));
                } else {
                    let target = bar[j].expect("only ā* is ever removed");
                    tr.push(to_row(&[(target, c), (f, 1.0 - c)]));
                    let r = if i == a_star && mode == ConsistencyMode::StrictPaper { c * pack.inner(a_star, j) } else { penalty(pack, i, j) };
                    rr.push(det(r));
                }
            }
            admissible.push((0..m).collect::<Vec<_>>());
            feats.push(fr);
            trans.push(tr);
            early.push(rr);
        }
        admissible.push((0..m).collect());
        feats.push((0..m).map(|a| lift(if a == 0 { 0.0 } else { -1.0 }, None)).collect());
        trans.push(vec![vec![(f, 1.0)]; m]);
        early.push((0..m).map(|a| det(if a == 0 { 0.0 } else { -1.0 })).collect());

        let start = if reachable {
            let s = f + 1;
            let mut fr = Vec::with_capacity(m + 1);
            let mut tr = Vec::with_capacity(m + 1);
            let mut rr = Vec::with_capacity(m + 1);
            for a in 0..m {
                fr.push(lift(-1.0, Some((&pack.vectors[a], 1.0))));
                if a == a_star {
                    tr.push(vec![(s, 1.0)]);
                    rr.push(det(0.0));
                } else {
                    tr.push(vec![(bar[a].expect("a != a*"), 1.0)]);
                    rr.push(det(-1.0 - 2.0 * g));
                }
            }
            fr.push(lift(-1.0, None));
            tr.push(vec![(f, 1.0)]);
            rr.push(det(-1.0));
            admissible.push((0..=m).collect());
            feats.push(fr);
            trans.push(tr);
            early.push(rr);
            Some(s)
        } else {
            None
        };

        let mut theta = vec![1.0];
        theta.extend_from_slice(&pack.vectors[a_star]);
        let last = final_rewards(&feats, &theta);
        let mu = match start {
            Some(s) => {
                let mut mu = vec![0.0; n];
                mu[s] = 1.0;
                mu
            }
            None => uniform_over_bars(m, n),
        };
        let mdp = MdpModel::new(n, horizon, admissible, LevelTables::homogeneous(trans, horizon), split_rewards(early, last, horizon), mu)?;
        let features = FeatureMap::new(d + 1, feats)?;
        features.check_against(&mdp)?;
        Ok(HardInstance {
            variant: if reachable { Variant::Reachable } else { Variant::GapComplete },
            mode: if reachable { None } else { Some(mode) },
            pack: pack.clone(),
            a_star: Some(a_star),
            horizon,
            mdp,
            features,
            theta_star: Some(vec![theta; horizon]),
            bar,
            terminal: f,
            start,
        })
    }

    /// State `ī` for pack index `i`; `None` if the variant removed it.
    pub fn bar(&self, i: usize) -> Option<StateId> {
        self.bar.get(i).copied().flatten()
    }

    pub fn terminal(&self) -> StateId {
        self.terminal
    }

    pub fn start(&self) -> Option<StateId> {
        self.start
    }

    pub fn m(&self) -> usize {
        self.pack.m
    }

    /// Flags every non-terminal state; used to watch plays of `a*`.
    pub fn nonterminal_mask(&self) -> Vec<bool> {
        (0..self.mdp.num_states()).map(|s| s != self.terminal).collect()
    }

    /// Smallest and largest leak probability over all `ī → j̄` rows.
    pub fn leak_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in (0..self.mdp.num_states()).filter(|&s| s != self.terminal && Some(s) != self.start) {
            for k in 0..self.mdp.actions(s).len() {
                for &(t, p) in self.mdp.row(1, s, k) {
                    if t != self.terminal {
                        lo = lo.min(p);
                        hi = hi.max(p);
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Closed-form `Q*_h(s, a)` for the base variant.
    pub fn closed_form_q(&self, _h: usize, s: StateId, a: ActionId) -> Result<f64, HardError> {
        if self.variant != Variant::Base {
            return Err(HardError::Unsupported(self.variant));
        }
        let a_star = self.a_star.expect("base has a*");
        if self.mdp.action_index(s, a).is_none() {
            return Err(HardError::Invalid(format!("action {a} not admissible at state {s}")));
        }
        if s == self.terminal {
            return Ok(0.0);
        }
        let c = leak(&self.pack, s, a);
        Ok(if a == a_star { c } else { c * self.pack.inner(a, a_star) })
    }

    pub fn verify_realizability(&self, tol: f64) -> Result<RealizabilityReport, HardError> {
        let thetas = self.theta_star.as_ref().ok_or(HardError::Unsupported(self.variant))?;
        Ok(realizability_residual(&self.mdp, &self.features, thetas, tol))
    }

    pub fn verify_gap(&self) -> Result<GapVerdict, HardError> {
        let (excluded, bound) = match self.variant {
            Variant::Reference => return Err(HardError::Unsupported(self.variant)),
            Variant::Base => (vec![self.terminal, self.a_star.expect("base has a*")], self.pack.gamma / 4.0),
            Variant::GapComplete | Variant::Reachable => (Vec::new(), 1.0 / 24.0),
        };
        let tables = tabular::optimal_values(&self.mdp);
        let report = tabular::min_gap(&self.mdp, &tables, &excluded);
        let pass = report.delta_min.is_none_or(|g| g >= bound - 1e-12);
        Ok(GapVerdict { report, bound, pass })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizabilityReport {
    pub max_residual: f64,
    pub witness: Option<(usize, StateId, ActionId)>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapVerdict {
    pub report: GapReport,
    pub bound: f64,
    pub pass: bool,
}

/// `max |Q*_DP(h,s,a) − ⟨φ(s,a), θ_h⟩|` over every entry.
pub fn realizability_residual(mdp: &MdpModel, features: &FeatureMap, thetas: &[Vec<f64>], tol: f64) -> RealizabilityReport {
    let tables = tabular::optimal_values(mdp);
    let mut max_residual: f64 = 0.0;
    let mut witness = None;
    for h in 1..=mdp.horizon() {
        for s in 0..mdp.num_states() {
            for (k, &a) in mdp.actions(s).iter().enumerate() {
                let r = (tables.q[h - 1][s][k] - linalg::dot(features.at(s, k), &thetas[h - 1])).abs();
                if witness.is_none() || r > max_residual {
                    max_residual = r;
                    witness = Some((h, s, a));
                }
            }
        }
    }
    RealizabilityReport { max_residual, witness, tol, pass: max_residual <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ortho() -> VectorPack {
        VectorPack::orthonormal(3, 0.25)
    }

    #[test]
    fn orthonormal_base_entries() {
        let inst = HardInstance::build_base(&ortho(), 1, 3).unwrap();
        let m = &inst.mdp;
        let k = m.action_index(0, 2).unwrap();
        assert_eq!(inst.features.at(0, k), &[0.0, 0.0, 0.5]);
        assert_eq!(m.reward(1, 0, k).mean(), -0.25);
        assert_eq!(m.row(1, 0, k), &vec![(2, 0.5), (3, 0.5)]);
        let k = m.action_index(0, 1).unwrap();
        assert_eq!(m.reward(1, 0, k).mean(), 0.5);
        assert_eq!(m.row(1, 0, k), &vec![(3, 1.0)]);
        assert_eq!(m.actions(3), &[0, 1]);
        assert_eq!(m.reward(3, 3, 0).mean(), 0.0);
        assert_eq!(inst.closed_form_q(2, 0, 2).unwrap(), 0.0);
        assert_eq!(inst.closed_form_q(2, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn reference_has_no_theta_and_negative_rewards() {
        let inst = HardInstance::build_reference(&ortho(), 3).unwrap();
        assert!(inst.verify_realizability(1e-9).is_err());
        assert!(inst.verify_gap().is_err());
        for h in 1..=3 {
            for s in 0..3 {
                for k in 0..2 {
                    assert!(inst.mdp.reward(h, s, k).mean() < 0.25);
                }
            }
        }
    }

    #[test]
    fn gap_complete_requires_sixth() {
        assert!(HardInstance::build_gap_complete(&ortho(), 0, 2, ConsistencyMode::default()).is_err());
    }

    #[test]
    fn a_star_out_of_range() {
        assert!(HardInstance::build_base(&ortho(), 3, 2).is_err());
    }

    #[test]
    fn reachable_drops_a_star_state() {
        let pack = VectorPack::orthonormal(3, 1.0 / 6.0);
        let inst = HardInstance::build_reachable(&pack, 1, 4).unwrap();
        assert_eq!(inst.bar(1), None);
        assert_eq!(inst.bar(2), Some(1));
        assert_eq!(inst.terminal(), 2);
        assert_eq!(inst.start(), Some(3));
        assert_eq!(inst.mdp.actions(3), &[0, 1, 2, 3]);
    }
}
