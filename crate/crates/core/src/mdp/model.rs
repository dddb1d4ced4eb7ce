use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MdpError;

pub type StateId = usize;
pub type ActionId = usize;

/// Current version of the model / feature JSON schema.
pub const SCHEMA_VERSION: u32 = 1;

const SUM_TOL: f64 = 1e-12;

/// Reward law of one `(h, s, a)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardSpec {
    Deterministic(f64),
    /// Finite support: `(value, probability)` pairs.
    Discrete { outcomes: Vec<(f64, f64)> },
}

impl RewardSpec {
    pub fn mean(&self) -> f64 {
        match self {
            RewardSpec::Deterministic(r) => *r,
            RewardSpec::Discrete { outcomes } => outcomes.iter().map(|(v, p)| v * p).sum(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            RewardSpec::Deterministic(r) => r.abs(),
            RewardSpec::Discrete { outcomes } => {
                outcomes.iter().map(|(v, _)| v.abs()).fold(0.0, f64::max)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RewardSpec::Deterministic(r) => *r,
            RewardSpec::Discrete { outcomes } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in outcomes {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                outcomes.last().map(|(v, _)| *v).unwrap_or(0.0)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            RewardSpec::Deterministic(r) if r.is_finite() => Ok(()),
            RewardSpec::Deterministic(r) => Err(format!("non-finite reward {r}")),
            RewardSpec::Discrete { outcomes } => {
                if outcomes.is_empty() {
                    return Err("empty reward distribution".into());
                }
                if outcomes.iter().any(|(v, p)| !v.is_finite() || !(*p >= 0.0)) {
                    return Err("invalid reward outcome".into());
                }
                let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > SUM_TOL {
                    return Err(format!("reward probabilities sum to {total}"));
                }
                Ok(())
            }
        }
    }
}

/// Sparse next-state distribution: `(next_state, probability)` pairs sorted by
/// state with no duplicates.
pub type TransitionRow = Vec<(StateId, f64)>;

/// Per-level selection among a small set of shared tables, so that
/// time-homogeneous models store one kernel instead of `H` copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTables<T> {
    /// `tables[t][s][k]` for the `k`-th admissible action at `s`.
    pub tables: Vec<Vec<Vec<T>>>,
    /// `by_level[h-1]` is the table index used at level `h`.
    pub by_level: Vec<usize>,
}

impl<T> LevelTables<T> {
    pub fn homogeneous(table: Vec<Vec<T>>, horizon: usize) -> Self {
        LevelTables { tables: vec![table], by_level: vec![0; horizon] }
    }

    #[inline]
    pub fn at(&self, h: usize) -> &[Vec<T>] {
        &self.tables[self.by_level[h - 1]]
    }
}

/// Explicit finite-horizon MDP. Levels are numbered `1..=horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpModelRaw", into = "MdpModelRaw")]
pub struct MdpModel {
    num_states: usize,
    horizon: usize,
    admissible: Vec<Vec<ActionId>>,
    transitions: LevelTables<TransitionRow>,
    rewards: LevelTables<RewardSpec>,
    initial_dist: Vec<f64>,
    r_max: f64,
}

#[derive(Serialize, Deserialize)]
struct MdpModelRaw {
    version: u32,
    num_states: usize,
    horizon: usize,
    admissible: Vec<Vec<ActionId>>,
    transitions: LevelTables<TransitionRow>,
    rewards: LevelTables<RewardSpec>,
    initial_dist: Vec<f64>,
    #[serde(default)]
    r_max: Option<f64>,
}

impl TryFrom<MdpModelRaw> for MdpModel {
    type Error = MdpError;

    fn try_from(raw: MdpModelRaw) -> Result<Self, Self::Error> {
        if raw.version != SCHEMA_VERSION {
            return Err(MdpError::Invalid(format!("unsupported schema version {}", raw.version)));
        }
        let model = MdpModel::new(
            raw.num_states,
            raw.horizon,
            raw.admissible,
            raw.transitions,
            raw.rewards,
            raw.initial_dist,
        )?;
        if let Some(r) = raw.r_max {
            if r + 1e-12 < model.r_max {
                return Err(MdpError::Invalid(format!("declared r_max {r} below observed {}", model.r_max)));
            }
        }
        Ok(model)
    }
}

impl From<MdpModel> for MdpModelRaw {
    fn from(m: MdpModel) -> Self {
        MdpModelRaw {
            version: SCHEMA_VERSION,
            num_states: m.num_states,
            horizon: m.horizon,
            admissible: m.admissible,
            transitions: m.transitions,
            rewards: m.rewards,
            initial_dist: m.initial_dist,
            r_max: Some(m.r_max),
        }
    }
}

impl MdpModel {
    pub fn new(
        num_states: usize,
        horizon: usize,
        admissible: Vec<Vec<ActionId>>,
        transitions: LevelTables<TransitionRow>,
        rewards: LevelTables<RewardSpec>,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let bad = |msg: String| Err(MdpError::Invalid(msg));
        if num_states == 0 {
            return bad("model has no states".into());
        }
        if horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if admissible.len() != num_states {
            return bad(format!("admissible has {} entries for {num_states} states", admissible.len()));
        }
        for (s, acts) in admissible.iter().enumerate() {
            if acts.is_empty() {
                return bad(format!("state {s} has no admissible action"));
            }
            if acts.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("admissible actions at state {s} must be strictly increasing"));
            }
        }
        for (name, by_level, ntables) in [
            ("transitions", &transitions.by_level, transitions.tables.len()),
            ("rewards", &rewards.by_level, rewards.tables.len()),
        ] {
            if by_level.len() != horizon {
                return bad(format!("{name}.by_level has {} entries for horizon {horizon}", by_level.len()));
            }
            if let Some(t) = by_level.iter().find(|&&t| t >= ntables) {
                return bad(format!("{name}.by_level references missing table {t}"));
            }
        }
        for (t, table) in transitions.tables.iter().enumerate() {
            check_shape(table, &admissible, &format!("transition table {t}"))?;
            for (s, rows) in table.iter().enumerate() {
                for (k, row) in rows.iter().enumerate() {
                    let a = admissible[s][k];
                    if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                        return bad(format!("transition row ({s},{a}) not sorted by next state"));
                    }
                    let mut total = 0.0;
                    for &(ns, p) in row {
                        if ns >= num_states {
                            return bad(format!("transition row ({s},{a}) targets unknown state {ns}"));
                        }
                        if !(p >= 0.0) || !p.is_finite() {
                            return bad(format!("transition row ({s},{a}) has invalid probability {p}"));
                        }
                        total += p;
                    }
                    if (total - 1.0).abs() > SUM_TOL {
                        return bad(format!("transition row ({s},{a}) sums to {total}"));
                    }
                }
            }
        }
        let mut r_max: f64 = 0.0;
        for (t, table) in rewards.tables.iter().enumerate() {
            check_shape(table, &admissible, &format!("reward table {t}"))?;
            for (s, cells) in table.iter().enumerate() {
                for (k, cell) in cells.iter().enumerate() {
                    cell.validate()
                        .map_err(|e| MdpError::Invalid(format!("reward ({s},{}): {e}", admissible[s][k])))?;
                    r_max = r_max.max(cell.max_abs());
                }
            }
        }
        if initial_dist.len() != num_states {
            return bad("initial distribution length mismatch".into());
        }
        if initial_dist.iter().any(|p| !(*p >= 0.0)) {
            return bad("initial distribution has a negative entry".into());
        }
        let total: f64 = initial_dist.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return bad(format!("initial distribution sums to {total}"));
        }
        Ok(MdpModel { num_states, horizon, admissible, transitions, rewards, initial_dist, r_max })
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn admissible(&self) -> &[Vec<ActionId>] {
        &self.admissible
    }

    #[inline]
    pub fn actions(&self, s: StateId) -> &[ActionId] {
        &self.admissible[s]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn transitions(&self) -> &LevelTables<TransitionRow> {
        &self.transitions
    }

    pub fn rewards(&self) -> &LevelTables<RewardSpec> {
        &self.rewards
    }

    /// Position of action `a` in the admissible list of `s`.
    #[inline]
    pub fn action_index(&self, s: StateId, a: ActionId) -> Option<usize> {
        self.admissible.get(s)?.binary_search(&a).ok()
    }

    #[inline]
    pub fn row(&self, h: usize, s: StateId, k: usize) -> &TransitionRow {
        &self.transitions.at(h)[s][k]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: StateId, k: usize) -> &RewardSpec {
        &self.rewards.at(h)[s][k]
    }

    /// Dense copy of one transition row, for inspection and tests.
    pub fn dense_row(&self, h: usize, s: StateId, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for &(ns, p) in self.row(h, s, k) {
            out[ns] += p;
        }
        out
    }
}

fn check_shape<T>(table: &[Vec<T>], admissible: &[Vec<ActionId>], what: &str) -> Result<(), MdpError> {
    if table.len() != admissible.len() {
        return Err(MdpError::Invalid(format!("{what} has {} states, expected {}", table.len(), admissible.len())));
    }
    for (s, cells) in table.iter().enumerate() {
        if cells.len() != admissible[s].len() {
            return Err(MdpError::Invalid(format!(
                "{what} state {s} has {} entries for {} admissible actions",
                cells.len(),
                admissible[s].len()
            )));
        }
    }
    Ok(())
}

/// Samples an index from a sparse row with a single uniform draw.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[(StateId, f64)], rng: &mut R) -> StateId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding slack: fall back to the last state with positive mass
    row.iter().rev().find(|(_, p)| *p > 0.0).map(|(s, _)| *s).unwrap_or(row[0].0)
}
