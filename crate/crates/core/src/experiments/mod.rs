//! Separation study, survival decay, baseline learners, the generative
//! planner and result emission.

pub mod baselines;
pub mod emit;
pub mod planner;
pub mod separation;
pub mod survival;

pub use baselines::{lsvi_greedy, uniform_random, LsviConfig};
pub use planner::{generative_planner, PlannerConfig, PlannerOutcome};
pub use separation::{run_separation, run_trial, Access, Aggregate, ExperimentSpec, InstanceSpec, LearnerKind, SeparationReport, TrialRow, TRIAL_HEADER};
pub use survival::{epsilon_greedy, survival_decay, SurvivalRow};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Invalid(String),
    #[error("learner {learner} cannot run with {access:?} access")]
    AccessViolation { learner: &'static str, access: separation::Access },
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
    #[error(transparent)]
    Hard(#[from] crate::hard::HardError),
    #[error(transparent)]
    Pack(#[from] crate::pack::PackError),
    #[error(transparent)]
    Dmq(#[from] crate::dmq::DmqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
