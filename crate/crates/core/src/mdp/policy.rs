use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::model::{ActionId, StateId};
use super::MdpError;
use crate::linalg;

/// Action distribution at one state: `(action, probability)` pairs.
pub type ActionDist = Vec<(ActionId, f64)>;

/// Source of per-state exploration designs.
///
/// Weights are aligned with the admissible list of the state. `None` marks a
/// degenerate state (all features zero); callers fall back to uniform.
pub trait DesignProvider: Sync {
    fn design(&self, s: StateId) -> Option<Arc<Vec<f64>>>;
}

/// Everything a policy may consult when acting. Online learners build this
/// from what the environment exposes, so no transition data is reachable.
#[derive(Clone, Copy)]
pub struct PolicyContext<'a> {
    pub admissible: &'a [Vec<ActionId>],
    pub features: Option<&'a FeatureMap>,
    pub designs: Option<&'a dyn DesignProvider>,
}

impl<'a> PolicyContext<'a> {
    pub fn new(admissible: &'a [Vec<ActionId>]) -> Self {
        PolicyContext { admissible, features: None, designs: None }
    }

    pub fn with_features(mut self, features: &'a FeatureMap) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_designs(mut self, designs: &'a dyn DesignProvider) -> Self {
        self.designs = Some(designs);
        self
    }
}

/// Nonstationary policy over levels `1..=H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Uniform over the admissible set at every state.
    Uniform,
    /// `table[h-1][s]` is an explicit action distribution.
    Tabular { table: Vec<Vec<ActionDist>> },
    /// Greedy on `⟨φ(s, a), θ_h⟩`; ties go to the lowest action id.
    LinearGreedy { thetas: Vec<Vec<f64>> },
    /// Samples the state's exploration design at `level`, defers to `rest`
    /// at every other level.
    DesignSampler { level: usize, rest: Box<PolicySpec> },
    /// `prefix` below `switch_level`, `suffix` from `switch_level` on.
    Spliced { prefix: Box<PolicySpec>, switch_level: usize, suffix: Box<PolicySpec> },
    /// Uniform mixture over whole policies, drawn once per episode.
    Mixture { components: Vec<PolicySpec> },
}

/// Index (into the admissible list) of the greedy action; lowest action id
/// wins ties because admissible lists are sorted.
pub fn greedy_index(features: &FeatureMap, s: StateId, theta: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, x) in features.state(s).iter().enumerate() {
        let v = linalg::dot(x, theta);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}

fn sample_weights<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

impl PolicySpec {
    pub fn greedy(thetas: Vec<Vec<f64>>) -> Self {
        PolicySpec::LinearGreedy { thetas }
    }

    /// Exact action distribution at `(h, s)`.
    pub fn action_distribution(&self, ctx: &PolicyContext<'_>, h: usize, s: StateId) -> Result<ActionDist, MdpError> {
        let acts = &ctx.admissible[s];
        match self {
            PolicySpec::Uniform => {
                let p = 1.0 / acts.len() as f64;
                Ok(acts.iter().map(|&a| (a, p)).collect())
            }
            PolicySpec::Tabular { table } => {
                let dist = table
                    .get(h - 1)
                    .and_then(|lvl| lvl.get(s))
                    .ok_or(MdpError::PolicyShape { h, s })?;
                for &(a, _) in dist {
                    if acts.binary_search(&a).is_err() {
                        return Err(MdpError::ContractViolation { h, s, a });
                    }
                }
                Ok(dist.clone())
            }
            PolicySpec::LinearGreedy { thetas } => {
                let k = self.greedy_at(ctx, thetas, h, s)?;
                Ok(vec![(acts[k], 1.0)])
            }
            PolicySpec::DesignSampler { level, rest } => {
                if h != *level {
                    return rest.action_distribution(ctx, h, s);
                }
                let designs = ctx.designs.ok_or(MdpError::MissingDesigns)?;
                match designs.design(s) {
                    Some(w) => Ok(acts.iter().zip(w.iter()).filter(|(_, &p)| p > 0.0).map(|(&a, &p)| (a, p)).collect()),
                    None => PolicySpec::Uniform.action_distribution(ctx, h, s),
                }
            }
            PolicySpec::Spliced { prefix, switch_level, suffix } => {
                if h < *switch_level {
                    prefix.action_distribution(ctx, h, s)
                } else {
                    suffix.action_distribution(ctx, h, s)
                }
            }
            PolicySpec::Mixture { .. } => Err(MdpError::NotMarkov),
        }
    }

    /// Draws one action at `(h, s)`. Mixtures must be resolved per episode
    /// first (see [`PolicySpec::resolve`]).
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        ctx: &PolicyContext<'_>,
        h: usize,
        s: StateId,
        rng: &mut R,
    ) -> Result<ActionId, MdpError> {
        let acts = &ctx.admissible[s];
        match self {
            PolicySpec::Uniform => Ok(acts[rng.random_range(0..acts.len())]),
            PolicySpec::Tabular { table } => {
                let dist = table
                    .get(h - 1)
                    .and_then(|lvl| lvl.get(s))
                    .ok_or(MdpError::PolicyShape { h, s })?;
                let weights: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
                let a = dist[sample_weights(&weights, rng)].0;
                if acts.binary_search(&a).is_err() {
                    return Err(MdpError::ContractViolation { h, s, a });
                }
                Ok(a)
            }
            PolicySpec::LinearGreedy { thetas } => Ok(acts[self.greedy_at(ctx, thetas, h, s)?]),
            PolicySpec::DesignSampler { level, rest } => {
                if h != *level {
                    return rest.sample_action(ctx, h, s, rng);
                }
                let designs = ctx.designs.ok_or(MdpError::MissingDesigns)?;
                match designs.design(s) {
                    Some(w) => Ok(acts[sample_weights(&w, rng)]),
                    None => Ok(acts[rng.random_range(0..acts.len())]),
                }
            }
            PolicySpec::Spliced { prefix, switch_level, suffix } => {
                if h < *switch_level {
                    prefix.sample_action(ctx, h, s, rng)
                } else {
                    suffix.sample_action(ctx, h, s, rng)
                }
            }
            PolicySpec::Mixture { .. } => Err(MdpError::NotMarkov),
        }
    }

    /// Picks the component used for one episode: top-level mixtures are drawn
    /// uniformly (recursively), everything else is returned as is.
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> &PolicySpec {
        match self {
            PolicySpec::Mixture { components } if !components.is_empty() => {
                components[rng.random_range(0..components.len())].resolve(rng)
            }
            other => other,
        }
    }

    fn greedy_at(&self, ctx: &PolicyContext<'_>, thetas: &[Vec<f64>], h: usize, s: StateId) -> Result<usize, MdpError> {
        let features = ctx.features.ok_or(MdpError::MissingFeatures)?;
        let theta = thetas.get(h - 1).ok_or(MdpError::PolicyShape { h, s })?;
        if theta.len() != features.dim() {
            return Err(MdpError::PolicyShape { h, s });
        }
        Ok(greedy_index(features, s, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn features() -> FeatureMap {
        FeatureMap::new(2, vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]]).unwrap()
    }

    #[test]
    fn greedy_breaks_ties_towards_lowest_action() {
        let f = features();
        let adm = vec![vec![2, 5, 7]];
        let ctx = PolicyContext::new(&adm).with_features(&f);
        let pol = PolicySpec::greedy(vec![vec![1.0, 0.5]]);
        assert_eq!(pol.action_distribution(&ctx, 1, 0).unwrap(), vec![(2, 1.0)]);
        let pol = PolicySpec::greedy(vec![vec![0.0, 0.0]]);
        assert_eq!(pol.sample_action(&ctx, 1, 0, &mut seeded(1)).unwrap(), 2);
    }

    #[test]
    fn tabular_policy_with_inadmissible_action_is_reported() {
        let adm = vec![vec![0, 1]];
        let ctx = PolicyContext::new(&adm);
        let pol = PolicySpec::Tabular { table: vec![vec![vec![(3, 1.0)]]] };
        match pol.sample_action(&ctx, 1, 0, &mut seeded(0)) {
            Err(MdpError::ContractViolation { h: 1, s: 0, a: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spliced_switches_at_level() {
        let f = features();
        let adm = vec![vec![2, 5, 7]];
        let ctx = PolicyContext::new(&adm).with_features(&f);
        let pol = PolicySpec::Spliced {
            prefix: Box::new(PolicySpec::Tabular { table: vec![vec![vec![(7, 1.0)]]; 3] }),
            switch_level: 2,
            suffix: Box::new(PolicySpec::greedy(vec![vec![0.0, 1.0]; 3])),
        };
        assert_eq!(pol.action_distribution(&ctx, 1, 0).unwrap(), vec![(7, 1.0)]);
        assert_eq!(pol.action_distribution(&ctx, 2, 0).unwrap(), vec![(5, 1.0)]);
    }

    #[test]
    fn mixture_is_not_markov_until_resolved() {
        let adm = vec![vec![0]];
        let ctx = PolicyContext::new(&adm);
        let pol = PolicySpec::Mixture { components: vec![PolicySpec::Uniform, PolicySpec::Uniform] };
        assert!(matches!(pol.action_distribution(&ctx, 1, 0), Err(MdpError::NotMarkov)));
        let picked = pol.resolve(&mut seeded(3));
        assert_eq!(picked, &PolicySpec::Uniform);
    }
}
