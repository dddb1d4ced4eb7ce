//! Difference-maximization Q-learning with per-state G-optimal exploration,
//! distribution-shift checks, recursion and restarts.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignCache;
use crate::linalg;
use crate::mdp::{FeatureMap, MdpError, MdpModel, OnlineEnv, PolicyContext, PolicySpec};
use crate::regression::{solve_shifted, RegressionSample};
use crate::rng::{derived_rng, stream};

#[derive(Debug, thiserror::Error)]
pub enum DmqError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("reference covariance is numerically singular")]
    SingularReference,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionMode {
    #[default]
    LowVariance,
    Hypercontractive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmqConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub lambda_r: f64,
    pub lambda_ridge: f64,
    /// Per-policy sample count actually used.
    pub n: usize,
    /// Policy-set cap.
    pub b: usize,
    pub assumption_mode: AssumptionMode,
    /// Maximum number of trajectories before the learner gives up.
    pub budget: u64,
    /// Multiplier applied to the theoretical sample count; anything below one
    /// puts the run outside the regime covered by the guarantee.
    #[serde(default = "one")]
    pub scale_factor: f64,
    /// Keep the last regression stream of every level in the stats.
    #[serde(default)]
    pub record_regressions: bool,
}

fn one() -> f64 {
    1.0
}

/// Parameter settings of the analysis before scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub epsilon_1: f64,
    pub epsilon_2: f64,
    pub n: f64,
}

impl DmqConfig {
    pub fn validate(&self) -> Result<(), DmqError> {
        let bad = |msg: &str| Err(DmqError::Config(msg.into()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.beta > 0.0 && self.lambda_r > 0.0 && self.lambda_ridge > 0.0 && self.scale_factor > 0.0) {
            return bad("beta, lambda_r, lambda_ridge and scale_factor must be positive");
        }
        if self.n == 0 || self.b == 0 {
            return bad("n and b must be at least 1");
        }
        if self.budget < self.n as u64 {
            return bad("budget must be at least n");
        }
        // |Π| ≥ 1, so this keeps the regression matrix positive definite.
        if self.lambda_ridge <= self.lambda_r {
            return bad("lambda_ridge must exceed lambda_r");
        }
        Ok(())
    }

    pub fn theory(&self, d: usize) -> TheoryParams {
        theory_params(self.epsilon, d, self.lambda_r, self.b, self.assumption_mode)
    }

    pub fn non_theoretical(&self) -> bool {
        self.scale_factor < 1.0
    }

    /// Rescales `n` from the theoretical count and widens the budget if needed.
    pub fn with_scale(mut self, d: usize, scale_factor: f64) -> Self {
        self.scale_factor = scale_factor;
        self.n = scaled_n(self.theory(d).n, scale_factor);
        self.budget = self.budget.max(self.n as u64);
        self
    }
}

fn theory_params(epsilon: f64, d: usize, lambda_r: f64, b: usize, mode: AssumptionMode) -> TheoryParams {
    let eps2 = lambda_r / (2.0 * b as f64);
    let n = match mode {
        AssumptionMode::LowVariance => d as f64 * (1.0 / eps2).ln() / (eps2 * eps2),
        AssumptionMode::Hypercontractive => d as f64 / eps2.powi(3),
    };
    TheoryParams { epsilon_1: epsilon * epsilon, epsilon_2: eps2, n }
}

fn scaled_n(theory_n: f64, scale: f64) -> usize {
    (theory_n * scale).ceil().clamp(1.0, usize::MAX as f64) as usize
}

/// Settings from the analysis: `β = 8`, `B = ⌈2d ln(d/λ_r)⌉`, `ε₂ = λ_r/(2B)`.
/// Low variance uses `λ_ridge = ε²`, `λ_r = ε⁶`, `N = d ln(1/ε₂)/ε₂²`;
/// hypercontractive uses `λ_ridge = ε³`, `λ_r = ε⁹`, `N = d/ε₂³`.
pub fn default_config(epsilon: f64, d: usize, _horizon: usize, mode: AssumptionMode) -> Result<DmqConfig, DmqError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DmqError::Config("epsilon must lie in (0, 1)".into()));
    }
    if d == 0 {
        return Err(DmqError::Config("dimension must be positive".into()));
    }
    let (lambda_ridge, lambda_r) = match mode {
        AssumptionMode::LowVariance => (epsilon.powi(2), epsilon.powi(6)),
        AssumptionMode::Hypercontractive => (epsilon.powi(3), epsilon.powi(9)),
    };
    let b = ((2.0 * d as f64 * (d as f64 / lambda_r).ln()).ceil() as usize).max(1);
    let n = scaled_n(theory_params(epsilon, d, lambda_r, b, mode).n, 1.0);
    let cfg = DmqConfig {
        epsilon,
        beta: 8.0,
        lambda_r,
        lambda_ridge,
        n,
        b,
        assumption_mode: mode,
        budget: u64::MAX,
        scale_factor: 1.0,
        record_regressions: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Exploratory policy for `base ∈ Π_h`: `base` below `h`, design sample at
/// `h`, greedy on `thetas` above `h`. At `h = 0` this is the greedy policy.
pub fn make_exploratory_policy(base: &PolicySpec, h: usize, thetas: &[Vec<f64>]) -> PolicySpec {
    let greedy = PolicySpec::LinearGreedy { thetas: thetas.to_vec() };
    if h == 0 {
        return greedy;
    }
    PolicySpec::Spliced {
        prefix: Box::new(base.clone()),
        switch_level: h,
        suffix: Box::new(PolicySpec::DesignSampler { level: h, rest: Box::new(greedy) }),
    }
}

/// `λ_max(Σ_ref^{-1/2} Σ̂ Σ_ref^{-1/2})` and whether it exceeds `β·|Π|`.
pub fn shift_check(sigma_ref: &DMatrix<f64>, sigma_hat: &DMatrix<f64>, beta: f64, pi_count: usize) -> Result<(bool, f64), DmqError> {
    let w = linalg::inv_sqrt_spd(sigma_ref).ok_or(DmqError::SingularReference)?;
    let stat = linalg::max_eigenvalue_sym(&(&w * sigma_hat * &w));
    Ok((stat > beta * pi_count as f64, stat))
}

/// Learner state; index `h-1` holds level `h`, `pis[0]` is the special `Π_0`.
#[derive(Clone, Debug)]
pub struct DmqState {
    pub thetas: Vec<Vec<f64>>,
    pub pis: Vec<Vec<PolicySpec>>,
    /// `None` until the level has run its regression phase once.
    pub sigmas: Vec<Option<DMatrix<f64>>>,
}

impl DmqState {
    pub fn new(d: usize, horizon: usize) -> Self {
        DmqState {
            thetas: vec![vec![0.0; d]; horizon],
            pis: vec![vec![PolicySpec::Uniform]; horizon + 1],
            sigmas: vec![None; horizon],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DmqStats {
    pub trajectories: u64,
    /// Restarts triggered by a failed shift check.
    pub restarts: u64,
    /// Restarts after learning a level whose covariance did not exist yet.
    pub bootstrap_restarts: u64,
    pub learn_level_calls: u64,
    pub max_depth: usize,
    /// `|Π_h|` for `h = 1..=H`.
    pub pi_sizes: Vec<usize>,
    /// Largest `|Π_h|` seen at any time, per level.
    pub pi_peak: Vec<usize>,
    pub truncated: bool,
    pub non_theoretical: bool,
    pub wall_time_secs: f64,
    /// Last regression stream of every level when recording is enabled.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regressions: Option<Vec<Vec<RegressionSample>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmqOutcome {
    pub policy: PolicySpec,
    pub thetas: Vec<Vec<f64>>,
    pub stats: DmqStats,
}

enum Stop {
    Budget,
    Fail(DmqError),
}

impl From<DmqError> for Stop {
    fn from(e: DmqError) -> Self {
        Stop::Fail(e)
    }
}

impl From<MdpError> for Stop {
    fn from(e: MdpError) -> Self {
        Stop::Fail(e.into())
    }
}

struct Learner<'a, 'e> {
    env: &'e mut OnlineEnv<'a>,
    ctx: PolicyContext<'e>,
    cfg: &'e DmqConfig,
    state: DmqState,
    stats: DmqStats,
    rng: ChaCha8Rng,
    d: usize,
    horizon: usize,
    restart_cap: u64,
}

impl Learner<'_, '_> {
    fn episode(&mut self, policy: &PolicySpec) -> Result<crate::mdp::Trajectory, Stop> {
        if self.env.episodes() >= self.cfg.budget {
            return Err(Stop::Budget);
        }
        let t = self.env.run_episode(policy, &self.ctx, &mut self.rng)?;
        self.stats.trajectories += 1;
        Ok(t)
    }

    fn bump_restart(&mut self, shift: bool) -> Result<(), Stop> {
        if shift {
            self.stats.restarts += 1;
        } else {
            self.stats.bootstrap_restarts += 1;
        }
        if self.stats.restarts + self.stats.bootstrap_restarts > self.restart_cap {
            return Err(DmqError::Invariant(format!("more than {} restarts", self.restart_cap)).into());
        }
        Ok(())
    }

    fn learn_level(&mut self, h: usize, depth: usize) -> Result<(), Stop> {
        self.stats.learn_level_calls += 1;
        self.stats.max_depth = self.stats.max_depth.max(depth);
        if depth as u64 > self.restart_cap {
            return Err(DmqError::Invariant(format!("recursion depth {depth} above {}", self.restart_cap)).into());
        }
        'restart: loop {
            for pi_idx in 0..self.state.pis[h].len() {
                for hp in (h + 1..=self.horizon).rev() {
                    let Some(sigma_ref) = self.state.sigmas[hp - 1].clone() else {
                        self.learn_level(hp, depth + 1)?;
                        self.bump_restart(false)?;
                        continue 'restart;
                    };
                    let tilde = make_exploratory_policy(&self.state.pis[h][pi_idx], h, &self.state.thetas);
                    // Roll in with π̃_h, then sample the design at h'; the
                    // rest of the episode is discarded.
                    let probe = PolicySpec::Spliced {
                        prefix: Box::new(tilde.clone()),
                        switch_level: hp,
                        suffix: Box::new(PolicySpec::DesignSampler { level: hp, rest: Box::new(PolicySpec::Uniform) }),
                    };
                    let mut sigma_hat = DMatrix::zeros(self.d, self.d);
                    for _ in 0..self.cfg.n {
                        let t = self.episode(&probe)?;
                        let step = &t.steps[hp - 1];
                        let x = self.env.features().lookup(self.ctx.admissible, step.state, step.action).expect("admissible action");
                        linalg::add_outer(&mut sigma_hat, x, 1.0 / self.cfg.n as f64);
                    }
                    linalg::symmetrize(&mut sigma_hat);
                    let count = self.state.pis[hp].len();
                    let (flag, _) = shift_check(&sigma_ref, &sigma_hat, self.cfg.beta, count)?;
                    if flag {
                        if count + 1 > self.cfg.b {
                            return Err(DmqError::Invariant(format!("|Π_{hp}| would exceed B = {}", self.cfg.b)).into());
                        }
                        self.state.pis[hp].push(tilde);
                        let peak = &mut self.stats.pi_peak[hp - 1];
                        *peak = (*peak).max(count + 1);
                        self.learn_level(hp, depth + 1)?;
                        self.bump_restart(true)?;
                        continue 'restart;
                    }
                }
            }
            break;
        }
        if h == 0 {
            return Ok(());
        }
        self.regress(h)
    }

    fn regress(&mut self, h: usize) -> Result<(), Stop> {
        let pis = self.state.pis[h].clone();
        let k = pis.len() as f64;
        let total = self.cfg.n * pis.len();
        let inv = 1.0 / total as f64;
        let mut sigma = DMatrix::identity(self.d, self.d) * (self.cfg.lambda_r / k);
        let mut w = DVector::zeros(self.d);
        let mut record = self.cfg.record_regressions.then(|| Vec::with_capacity(total));
        // Stratified: n trajectories per policy in Π_h.
        for base in &pis {
            let tilde = make_exploratory_policy(base, h, &self.state.thetas);
            for _ in 0..self.cfg.n {
                let t = self.episode(&tilde)?;
                let step = &t.steps[h - 1];
                let y: f64 = t.steps[h - 1..].iter().map(|s| s.reward).sum();
                let x = self.env.features().lookup(self.ctx.admissible, step.state, step.action).expect("admissible action");
                linalg::add_outer(&mut sigma, x, inv);
                for (acc, xi) in w.iter_mut().zip(x) {
                    *acc += inv * xi * y;
                }
                if let Some(r) = record.as_mut() {
                    r.push(RegressionSample { x: x.to_vec(), y });
                }
            }
        }
        linalg::symmetrize(&mut sigma);
        let (theta, _) = solve_shifted(&sigma, self.cfg.lambda_ridge - self.cfg.lambda_r / k, &w);
        self.state.thetas[h - 1] = theta.iter().cloned().collect();
        self.state.sigmas[h - 1] = Some(sigma);
        if let (Some(r), Some(all)) = (record, self.stats.regressions.as_mut()) {
            all[h - 1] = r;
        }
        Ok(())
    }
}

/// Runs LearnLevel(0) against `env`. Budget exhaustion is not an error: the
/// current greedy policy comes back with `stats.truncated` set.
pub fn learn(env: &mut OnlineEnv<'_>, config: &DmqConfig, seed: u64) -> Result<DmqOutcome, DmqError> {
    config.validate()?;
    let start = Instant::now();
    let features: &FeatureMap = env.features();
    let designs = DesignCache::new(features);
    let ctx = PolicyContext::new(env.admissible()).with_features(features).with_designs(&designs);
    let (d, horizon) = (features.dim(), env.horizon());
    let restart_cap = (horizon * (1 + config.b)) as u64;
    let stats = DmqStats {
        pi_sizes: vec![1; horizon],
        pi_peak: vec![1; horizon],
        non_theoretical: config.non_theoretical(),
        regressions: config.record_regressions.then(|| vec![Vec::new(); horizon]),
        ..DmqStats::default()
    };
    let episodes_before = env.episodes();
    let mut learner = Learner {
        env,
        ctx,
        cfg: config,
        state: DmqState::new(d, horizon),
        stats,
        rng: derived_rng(seed, stream::LEARNER, 0),
        d,
        horizon,
        restart_cap,
    };
    match learner.learn_level(0, 0) {
        Ok(()) => {}
        Err(Stop::Budget) => learner.stats.truncated = true,
        Err(Stop::Fail(e)) => return Err(e),
    }
    let Learner { env, state, mut stats, .. } = learner;
    debug_assert_eq!(stats.trajectories, env.episodes() - episodes_before);
    stats.pi_sizes = state.pis[1..].iter().map(Vec::len).collect();
    stats.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(DmqOutcome { policy: PolicySpec::LinearGreedy { thetas: state.thetas.clone() }, thetas: state.thetas, stats })
}

/// Builds the online environment and runs the learner; deterministic in `seed`.
pub fn run_dmq(mdp: &MdpModel, features: &FeatureMap, config: &DmqConfig, seed: u64) -> Result<DmqOutcome, DmqError> {
    features.check_against(mdp)?;
    let mut env = OnlineEnv::new(mdp, features, seed);
    learn(&mut env, config, seed)
}
