//! Linear-Q* reinforcement learning toolkit: hard instances, exact tabular
//! evaluation, G-optimal exploration designs and the DMQ learner.

pub mod linalg;
pub mod mdp;
pub mod rng;
pub mod hard;
pub mod pack;
pub mod tabular;
pub mod design;
pub mod regression;
pub mod dmq;
pub mod fixtures;
pub mod experiments;
