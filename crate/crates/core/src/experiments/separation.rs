//! Online-versus-generative separation study on hard instances.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{lsvi_greedy, uniform_random, LsviConfig};
use super::planner::{generative_planner, PlannerConfig};
use super::ExperimentError;
use crate::dmq::{default_config, learn, AssumptionMode};
use crate::hard::{ConsistencyMode, HardInstance, Variant};
use crate::mdp::{GenerativeModel, MdpModel, OnlineEnv, PolicyContext, PolicySpec, StateId};
use crate::pack::{build_pack, PackOptions, VectorPack};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::tabular::{optimal_values, policy_value, ValueTables};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Dmq,
    UniformRandom,
    LsviGreedy,
    GenerativePlanner,
}

impl LearnerKind {
    pub fn access(self) -> Access {
        match self {
            LearnerKind::GenerativePlanner => Access::Generative,
            _ => Access::Online,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Dmq => "dmq",
            LearnerKind::UniformRandom => "uniform_random",
            LearnerKind::LsviGreedy => "lsvi_greedy",
            LearnerKind::GenerativePlanner => "generative_planner",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Online,
    Generative,
}

/// Generator parameters of a hard instance; `a*` is drawn per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub d: usize,
    pub m: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub pack_seed: u64,
    #[serde(default = "base_variant")]
    pub variant: Variant,
}

fn base_variant() -> Variant {
    Variant::Base
}

impl InstanceSpec {
    pub fn pack(&self) -> Result<VectorPack, ExperimentError> {
        Ok(build_pack(self.d, self.m, self.gamma, self.pack_seed, &PackOptions::default())?)
    }

    pub fn build(&self, pack: &VectorPack, a_star: usize) -> Result<HardInstance, ExperimentError> {
        Ok(match self.variant {
            Variant::Base => HardInstance::build_base(pack, a_star, self.horizon)?,
            Variant::GapComplete => HardInstance::build_gap_complete(pack, a_star, self.horizon, ConsistencyMode::BellmanConsistent)?,
            Variant::Reachable => HardInstance::build_reachable(pack, a_star, self.horizon)?,
            Variant::Reference => return Err(ExperimentError::Invalid("the reference model has no optimal action".into())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmqSettings {
    pub epsilon: f64,
    /// Per-policy sample count; replaces the theoretical value.
    pub n: usize,
}

impl Default for DmqSettings {
    fn default() -> Self {
        DmqSettings { epsilon: 0.1, n: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instance: InstanceSpec,
    pub learner: LearnerKind,
    /// Defaults to what the learner needs; a mismatch is rejected.
    #[serde(default)]
    pub access: Option<Access>,
    /// Episodes for online learners, queries for the planner.
    pub budget: u64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub dmq: DmqSettings,
    #[serde(default)]
    pub lsvi: LsviConfig,
    /// Gap threshold for counting a final policy as suboptimal.
    #[serde(default = "default_gap")]
    pub gap_threshold: f64,
}

fn default_gap() -> f64 {
    0.05
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.budget == 0 || self.trials == 0 {
            return Err(ExperimentError::Invalid("budget and trials must be at least 1".into()));
        }
        if let Some(access) = self.access {
            if access != self.learner.access() {
                return Err(ExperimentError::AccessViolation { learner: self.learner.name(), access });
            }
        }
        Ok(())
    }
}

/// One trial. Column order is the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub learner: LearnerKind,
    pub trial: usize,
    pub seed: u64,
    pub a_star: usize,
    /// Whether `a*` was ever played at a nonterminal state (online runs).
    pub a_star_taken: bool,
    pub a_star_plays: u64,
    /// Episodes for online runs, generative queries for the planner.
    pub consumed: u64,
    pub env_steps: u64,
    pub value: f64,
    pub optimal_value: f64,
    pub value_gap: f64,
    /// Probability that the final policy plays `a*` at level 1, `s₁ ∼ μ`.
    pub a_star_at_s1: f64,
    /// Final policy agrees with an optimal action at every gap-verified state.
    pub optimal: bool,
    pub truncated: bool,
}

pub const TRIAL_HEADER: [&str; 14] = [
    "learner",
    "trial",
    "seed",
    "a_star",
    "a_star_taken",
    "a_star_plays",
    "consumed",
    "env_steps",
    "value",
    "optimal_value",
    "value_gap",
    "a_star_at_s1",
    "optimal",
    "truncated",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    /// 95% Wilson interval.
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize) -> Self {
        let n = trials as f64;
        if trials == 0 {
            return Proportion { successes, trials, rate: 0.0, lo: 0.0, hi: 1.0 };
        }
        let p = successes as f64 / n;
        let z: f64 = 1.96;
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        Proportion { successes, trials, rate: p, lo: (center - half).max(0.0), hi: (center + half).min(1.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub learner: LearnerKind,
    pub suboptimal: Proportion,
    pub a_star_taken: Proportion,
    pub optimal: Proportion,
    pub mean_value_gap: f64,
    pub mean_consumed: f64,
}

impl Aggregate {
    pub fn from_rows(learner: LearnerKind, rows: &[TrialRow], gap_threshold: f64) -> Self {
        let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.learner == learner).collect();
        let n = mine.len();
        let count = |f: &dyn Fn(&TrialRow) -> bool| mine.iter().filter(|r| f(r)).count();
        let mean = |f: &dyn Fn(&TrialRow) -> f64| if n == 0 { 0.0 } else { mine.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
        Aggregate {
            learner,
            suboptimal: Proportion::new(count(&|r| r.value_gap >= gap_threshold), n),
            a_star_taken: Proportion::new(count(&|r| r.a_star_taken), n),
            optimal: Proportion::new(count(&|r| r.optimal), n),
            mean_value_gap: mean(&|r| r.value_gap),
            mean_consumed: mean(&|r| r.consumed as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<TrialRow>,
    pub aggregate: Aggregate,
}

/// Whether `policy` puts all its mass on optimal actions at every state not
/// listed in `excluded`, at every level.
pub fn matches_optimal(mdp: &MdpModel, policy: &PolicySpec, ctx: &PolicyContext<'_>, tables: &ValueTables, excluded: &[StateId]) -> Result<bool, ExperimentError> {
    for h in 1..=mdp.horizon() {
        for s in (0..mdp.num_states()).filter(|s| !excluded.contains(s)) {
            let best = tables.v[h - 1][s];
            for (a, p) in policy.action_distribution(ctx, h, s)? {
                let k = mdp.action_index(s, a).expect("policy plays admissible actions");
                if p > 0.0 && tables.q[h - 1][s][k] < best - 1e-9 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// `a*` of a trial depends on the spec seed and trial index only, so all
/// learners face the same sequence of instances.
pub fn trial_a_star(seed: u64, trial: usize, m: usize) -> usize {
    derived_rng(seed, stream::TRIAL, trial as u64).random_range(0..m)
}

pub fn run_trial(spec: &ExperimentSpec, pack: &VectorPack, trial: usize) -> Result<TrialRow, ExperimentError> {
    let seed = derive_seed(spec.seed, stream::TRIAL, trial as u64);
    let a_star = trial_a_star(spec.seed, trial, spec.instance.m);
    let inst = spec.instance.build(pack, a_star)?;
    let (mdp, features) = (&inst.mdp, &inst.features);
    let tables = optimal_values(mdp);
    let optimal_value = tables.value_at(mdp.initial_dist());
    let (policy, consumed, env_steps, plays, truncated) = match spec.learner {
        LearnerKind::GenerativePlanner => {
            let mut model = GenerativeModel::new(mdp, features, seed);
            let out = generative_planner(&mut model, &PlannerConfig::for_budget(spec.budget, spec.instance.horizon), seed)?;
            (out.policy, model.queries(), model.queries(), 0, out.truncated)
        }
        online => {
            let mut env = OnlineEnv::new(mdp, features, seed);
            env.watch_action(a_star, inst.nonterminal_mask());
            let (policy, truncated) = match online {
                LearnerKind::UniformRandom => (uniform_random(&mut env, spec.budget, seed)?, false),
                LearnerKind::LsviGreedy => (lsvi_greedy(&mut env, spec.budget, &spec.lsvi, seed)?, false),
                LearnerKind::Dmq => {
                    let d = features.dim();
                    let mut cfg = default_config(spec.dmq.epsilon, d, spec.instance.horizon, AssumptionMode::LowVariance)?;
                    cfg = cfg.clone().with_scale(d, spec.dmq.n as f64 / cfg.theory(d).n);
                    cfg.budget = spec.budget;
                    let out = learn(&mut env, &cfg, seed)?;
                    (out.policy, out.stats.truncated)
                }
                LearnerKind::GenerativePlanner => unreachable!(),
            };
            (policy, env.episodes(), env.samples(), env.watched_count().unwrap_or(0), truncated)
        }
    };
    let ctx = PolicyContext::new(mdp.admissible()).with_features(features);
    let value = policy_value(mdp, &policy, &ctx)?;
    let mut a_star_at_s1 = 0.0;
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        if p > 0.0 {
            let dist = policy.action_distribution(&ctx, 1, s)?;
            a_star_at_s1 += p * dist.iter().filter(|(a, _)| *a == a_star).map(|(_, q)| q).sum::<f64>();
        }
    }
    let excluded = inst.verify_gap()?.report.excluded_states;
    let optimal = matches_optimal(mdp, &policy, &ctx, &tables, &excluded)?;
    Ok(TrialRow {
        learner: spec.learner,
        trial,
        seed,
        a_star,
        a_star_taken: plays > 0,
        a_star_plays: plays,
        consumed,
        env_steps,
        value,
        optimal_value,
        value_gap: optimal_value - value,
        a_star_at_s1,
        optimal,
        truncated,
    })
}

/// Runs all trials in parallel; rows come back in trial order.
pub fn run_separation(spec: &ExperimentSpec) -> Result<SeparationReport, ExperimentError> {
    spec.validate()?;
    let pack = spec.instance.pack()?;
    let rows = (0..spec.trials).into_par_iter().map(|t| run_trial(spec, &pack, t)).collect::<Result<Vec<_>, _>>()?;
    let aggregate = Aggregate::from_rows(spec.learner, &rows, spec.gap_threshold);
    Ok(SeparationReport { spec: spec.clone(), rows, aggregate })
}
