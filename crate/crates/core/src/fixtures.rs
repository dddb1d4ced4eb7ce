//! Small benign instances used by the learner tests and the CLI.

use crate::mdp::{FeatureMap, LevelTables, MdpError, MdpModel, RewardSpec};

/// Two-state, two-action chain with one-hot features (`d = 4`).
///
/// Action 0 leads to state 0 and action 1 to state 1 with probability
/// `stay`. State 0 pays 1 for action 0 and 0.5 for action 1, state 1 the
/// mirror image, so both states share the same optimal value and every
/// action gap equals 0.5 exactly.
pub fn benign_chain(horizon: usize, stay: f64) -> Result<(MdpModel, FeatureMap), MdpError> {
    if !(0.5..=1.0).contains(&stay) {
        return Err(MdpError::Invalid(format!("stay probability {stay} outside [0.5, 1]")));
    }
    let row = |target: usize| -> Vec<(usize, f64)> {
        if stay == 1.0 {
            vec![(target, 1.0)]
        } else {
            let mut r = vec![(target, stay), (1 - target, 1.0 - stay)];
            r.sort_by_key(|x| x.0);
            r
        }
    };
    let trans = vec![vec![row(0), row(1)], vec![row(0), row(1)]];
    let rew = vec![
        vec![RewardSpec::Deterministic(1.0), RewardSpec::Deterministic(0.5)],
        vec![RewardSpec::Deterministic(0.5), RewardSpec::Deterministic(1.0)],
    ];
    let mdp = MdpModel::new(
        2,
        horizon,
        vec![vec![0, 1]; 2],
        LevelTables::homogeneous(trans, horizon),
        LevelTables::homogeneous(rew, horizon),
        vec![0.5, 0.5],
    )?;
    let e = |i: usize| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let features = FeatureMap::new(4, vec![vec![e(0), e(1)], vec![e(2), e(3)]])?;
    Ok((mdp, features))
}

/// One-level bandit with features `e₁, e₂` and rewards 1 and 0.
pub fn two_arm_bandit() -> Result<(MdpModel, FeatureMap), MdpError> {
    let mdp = MdpModel::new(
        1,
        1,
        vec![vec![0, 1]],
        LevelTables::homogeneous(vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]], 1),
        LevelTables::homogeneous(vec![vec![RewardSpec::Deterministic(1.0), RewardSpec::Deterministic(0.0)]], 1),
        vec![1.0],
    )?;
    let features = FeatureMap::new(2, vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]])?;
    Ok((mdp, features))
}
