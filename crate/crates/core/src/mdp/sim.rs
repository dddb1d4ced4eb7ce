use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::model::{sample_row, ActionId, MdpModel, StateId};
use super::policy::{PolicyContext, PolicySpec};
use super::MdpError;
use crate::rng::{derived_rng, seeded, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
}

/// One episode: exactly `H` records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn state_at(&self, h: usize) -> StateId {
        self.steps[h - 1].state
    }
}

fn draw_initial<R: Rng + ?Sized>(mdp: &MdpModel, rng: &mut R) -> StateId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mu = mdp.initial_dist();
    for (s, p) in mu.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    mu.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// One transition `(reward, next_state)` from `(h, s, a)`.
pub(crate) fn transition<R: Rng + ?Sized>(
    mdp: &MdpModel,
    h: usize,
    s: StateId,
    a: ActionId,
    rng: &mut R,
) -> Result<(f64, StateId), MdpError> {
    let k = mdp.action_index(s, a).ok_or(MdpError::ContractViolation { h, s, a })?;
    let reward = mdp.reward(h, s, k).sample(rng);
    let next = sample_row(mdp.row(h, s, k), rng);
    Ok((reward, next))
}

/// Rolls out one episode of `policy` on `mdp`; deterministic given `seed`.
pub fn sample_trajectory(
    mdp: &MdpModel,
    policy: &PolicySpec,
    ctx: &PolicyContext<'_>,
    seed: u64,
) -> Result<Trajectory, MdpError> {
    let mut rng = seeded(seed);
    rollout(mdp, policy, ctx, &mut rng)
}

pub(crate) fn rollout<R: Rng + ?Sized>(
    mdp: &MdpModel,
    policy: &PolicySpec,
    ctx: &PolicyContext<'_>,
    rng: &mut R,
) -> Result<Trajectory, MdpError> {
    let policy = policy.resolve(rng);
    let mut s = draw_initial(mdp, rng);
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut total = 0.0;
    for h in 1..=mdp.horizon() {
        let a = policy.sample_action(ctx, h, s, rng)?;
        let (r, next) = transition(mdp, h, s, a, rng)?;
        steps.push(Step { state: s, action: a, reward: r });
        total += r;
        s = next;
    }
    Ok(Trajectory { steps, total_return: total })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: StateId,
    /// Level at which the action was taken.
    pub level: usize,
}

/// Counts plays of one action at a set of states, invisible to the learner's
/// decision making; used by experiment harnesses.
#[derive(Clone, Debug)]
struct ActionWatch {
    action: ActionId,
    states: Vec<bool>,
    count: u64,
}

/// Episodic interaction handle. Exposes reset/step plus the feature map and
/// admissible sets; transitions and rewards stay hidden.
pub struct OnlineEnv<'a> {
    mdp: &'a MdpModel,
    features: &'a FeatureMap,
    seed: u64,
    rng: ChaCha8Rng,
    episodes: u64,
    samples: u64,
    state: StateId,
    /// Level of the next action; `None` when no episode is running.
    next_level: Option<usize>,
    watch: Option<ActionWatch>,
}

impl<'a> OnlineEnv<'a> {
    pub fn new(mdp: &'a MdpModel, features: &'a FeatureMap, seed: u64) -> Self {
        OnlineEnv {
            mdp,
            features,
            seed,
            rng: derived_rng(seed, stream::EPISODE, 0),
            episodes: 0,
            samples: 0,
            state: 0,
            next_level: None,
            watch: None,
        }
    }

    /// Starts counting plays of `action` at states flagged in `states`.
    pub fn watch_action(&mut self, action: ActionId, states: Vec<bool>) {
        self.watch = Some(ActionWatch { action, states, count: 0 });
    }

    pub fn watched_count(&self) -> Option<u64> {
        self.watch.as_ref().map(|w| w.count)
    }

    pub fn reset(&mut self) -> Result<StateId, MdpError> {
        if self.next_level.is_some() {
            return Err(MdpError::EpisodeInProgress);
        }
        self.rng = derived_rng(self.seed, stream::EPISODE, self.episodes);
        self.episodes += 1;
        self.state = draw_initial(self.mdp, &mut self.rng);
        self.next_level = Some(1);
        Ok(self.state)
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepOutcome, MdpError> {
        let h = self.next_level.ok_or(MdpError::EpisodeOver)?;
        let s = self.state;
        let (reward, next_state) = transition(self.mdp, h, s, action, &mut self.rng)?;
        if let Some(w) = self.watch.as_mut() {
            if action == w.action && w.states.get(s).copied().unwrap_or(false) {
                w.count += 1;
            }
        }
        self.samples += 1;
        self.state = next_state;
        self.next_level = if h == self.mdp.horizon() { None } else { Some(h + 1) };
        Ok(StepOutcome { reward, next_state, level: h })
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn admissible(&self) -> &'a [Vec<ActionId>] {
        self.mdp.admissible()
    }

    pub fn features(&self) -> &'a FeatureMap {
        self.features
    }

    /// Total transitions consumed.
    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Episodes started via `reset`.
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn context(&self) -> PolicyContext<'a> {
        PolicyContext::new(self.mdp.admissible()).with_features(self.features)
    }

    /// Runs one full episode with `policy`, returning the trajectory.
    pub fn run_episode(&mut self, policy: &PolicySpec, ctx: &PolicyContext<'_>, rng: &mut impl Rng) -> Result<Trajectory, MdpError> {
        let policy = policy.resolve(rng);
        let mut s = self.reset()?;
        let mut steps = Vec::with_capacity(self.horizon());
        let mut total = 0.0;
        for h in 1..=self.horizon() {
            let a = policy.sample_action(ctx, h, s, rng)?;
            let out = self.step(a)?;
            steps.push(Step { state: s, action: a, reward: out.reward });
            total += out.reward;
            s = out.next_state;
        }
        Ok(Trajectory { steps, total_return: total })
    }
}

/// One generative-model draw; deterministic given `seed`.
pub fn generative_query(mdp: &MdpModel, h: usize, s: StateId, a: ActionId, seed: u64) -> Result<(f64, StateId), MdpError> {
    if h == 0 || h > mdp.horizon() {
        return Err(MdpError::LevelOutOfRange(h));
    }
    transition(mdp, h, s, a, &mut seeded(seed))
}

/// Stateful generative access with a query counter; the `i`-th query draws
/// from a stream derived from `(seed, i)`.
pub struct GenerativeModel<'a> {
    mdp: &'a MdpModel,
    features: &'a FeatureMap,
    seed: u64,
    queries: u64,
}

impl<'a> GenerativeModel<'a> {
    pub fn new(mdp: &'a MdpModel, features: &'a FeatureMap, seed: u64) -> Self {
        GenerativeModel { mdp, features, seed, queries: 0 }
    }

    pub fn query(&mut self, h: usize, s: StateId, a: ActionId) -> Result<(f64, StateId), MdpError> {
        if h == 0 || h > self.mdp.horizon() {
            return Err(MdpError::LevelOutOfRange(h));
        }
        let mut rng = derived_rng(self.seed, stream::GENERATIVE, self.queries);
        let out = transition(self.mdp, h, s, a, &mut rng)?;
        self.queries += 1;
        Ok(out)
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn admissible(&self) -> &'a [Vec<ActionId>] {
        self.mdp.admissible()
    }

    pub fn features(&self) -> &'a FeatureMap {
        self.features
    }
}
