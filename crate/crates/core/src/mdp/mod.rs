//! Finite-horizon MDP model, feature tables, policies and simulation.

pub mod features;
pub mod model;
pub mod policy;
pub mod sim;

pub use features::FeatureMap;
pub use model::{ActionId, LevelTables, MdpModel, RewardSpec, StateId, TransitionRow, SCHEMA_VERSION};
pub use policy::{greedy_index, ActionDist, DesignProvider, PolicyContext, PolicySpec};
pub use sim::{generative_query, sample_trajectory, GenerativeModel, OnlineEnv, Step, StepOutcome, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum MdpError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("action {a} is not admissible at state {s} (level {h})")]
    ContractViolation { h: usize, s: StateId, a: ActionId },
    #[error("policy has no entry for level {h}, state {s}")]
    PolicyShape { h: usize, s: StateId },
    #[error("policy needs exploration designs but none were supplied")]
    MissingDesigns,
    #[error("policy needs a feature map but none was supplied")]
    MissingFeatures,
    #[error("mixture policies have no per-state distribution; resolve per episode")]
    NotMarkov,
    #[error("level {0} is outside 1..=H")]
    LevelOutOfRange(usize),
    #[error("reset called in the middle of an episode")]
    EpisodeInProgress,
    #[error("step called with no running episode")]
    EpisodeOver,
}
