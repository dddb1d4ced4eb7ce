mod common;

use common::random_mdp;
use linrl::dmq::{default_config, learn, make_exploratory_policy, run_dmq, AssumptionMode, DmqConfig, DmqOutcome};
use linrl::fixtures::{benign_chain, two_arm_bandit};
use linrl::mdp::{FeatureMap, MdpModel, OnlineEnv, PolicySpec};
use linrl::regression::ridge_fit;
use linrl::rng::seeded;
use linrl::tabular::{min_gap, optimal_values, policy_value};
use proptest::prelude::*;
use rand::Rng;

fn scaled(eps: f64, d: usize, h: usize, n: usize) -> DmqConfig {
    let c = default_config(eps, d, h, AssumptionMode::LowVariance).unwrap();
    let scale = n as f64 / c.theory(d).n;
    let mut c = c.with_scale(d, scale);
    c.record_regressions = true;
    c
}

/// Structural invariants every run must satisfy.
fn check_invariants(out: &DmqOutcome, cfg: &DmqConfig, horizon: usize) {
    let st = &out.stats;
    let (b, n, hh) = (cfg.b as u64, cfg.n as u64, horizon as u64);
    assert!(st.pi_peak.iter().all(|&p| p <= cfg.b));
    assert!(st.pi_sizes.iter().all(|&p| p >= 1 && p <= cfg.b));
    assert!(st.restarts + st.bootstrap_restarts <= hh * (1 + b));
    assert!(st.trajectories <= hh * (1 + b) * (n * b + n), "{} trajectories", st.trajectories);
    if let Some(recs) = &st.regressions {
        for (lvl, data) in recs.iter().enumerate() {
            if data.is_empty() {
                continue;
            }
            let reference = ridge_fit(data, cfg.lambda_ridge).unwrap();
            for (a, b) in reference.theta.iter().zip(&out.thetas[lvl]) {
                assert!((a - b).abs() <= 1e-10, "level {}: {a} vs {b}", lvl + 1);
            }
        }
    }
}

#[test]
fn config_examples() {
    let c = default_config(0.1, 8, 6, AssumptionMode::LowVariance).unwrap();
    assert_eq!(c.b, (16.0 * (8e6_f64).ln()).ceil() as usize);
    let th = c.theory(8);
    assert!((th.epsilon_2 - 1e-6 / (2.0 * c.b as f64)).abs() < 1e-20);
    assert!(!c.non_theoretical());
    let s = c.clone().with_scale(8, 1e-15);
    assert!(s.non_theoretical() && s.n < c.n);
    for eps in [0.0, 1.0, 1.5] {
        assert!(default_config(eps, 4, 3, AssumptionMode::Hypercontractive).is_err());
    }
    let mut bad = c.clone();
    bad.lambda_ridge = bad.lambda_r / 2.0;
    assert!(bad.validate().is_err());
}

#[test]
fn exploratory_policy_phases() {
    let (mdp, features) = benign_chain(3, 1.0).unwrap();
    let thetas = vec![vec![0.0; 4], vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 2.0]];
    assert_eq!(make_exploratory_policy(&PolicySpec::Uniform, 0, &thetas), PolicySpec::LinearGreedy { thetas: thetas.clone() });
    let designs = linrl::design::DesignCache::new(&features);
    let ctx = linrl::mdp::PolicyContext::new(mdp.admissible()).with_features(&features).with_designs(&designs);
    let top = make_exploratory_policy(&PolicySpec::Uniform, 3, &thetas);
    for h in 1..3 {
        assert_eq!(top.action_distribution(&ctx, h, 0).unwrap(), vec![(0, 0.5), (1, 0.5)]);
    }
    let d = top.action_distribution(&ctx, 3, 1).unwrap();
    assert!(d.iter().all(|&(_, p)| (p - 0.5).abs() < 1e-12));
    let mid = make_exploratory_policy(&PolicySpec::Uniform, 1, &thetas);
    assert_eq!(mid.action_distribution(&ctx, 2, 0).unwrap(), vec![(1, 1.0)]);
    assert_eq!(mid.action_distribution(&ctx, 3, 1).unwrap(), vec![(1, 1.0)]);
}

#[test]
fn one_level_bandit_finds_the_good_arm() {
    let (mdp, features) = two_arm_bandit().unwrap();
    let cfg = scaled(0.2, 2, 1, 50);
    let mut hits = 0;
    for seed in 0..20 {
        let out = run_dmq(&mdp, &features, &cfg, seed).unwrap();
        check_invariants(&out, &cfg, 1);
        let ctx = linrl::mdp::PolicyContext::new(mdp.admissible()).with_features(&features);
        if out.policy.action_distribution(&ctx, 1, 0).unwrap() == vec![(0, 1.0)] {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn deterministic_chain_is_recovered_exactly() {
    let (mdp, features) = benign_chain(2, 1.0).unwrap();
    let t = optimal_values(&mdp);
    assert!(min_gap(&mdp, &t, &[]).delta_min.unwrap() >= 0.5 - 1e-12);
    let cfg = DmqConfig {
        epsilon: 0.1,
        beta: 8.0,
        lambda_r: 1e-14,
        lambda_ridge: 1e-12,
        n: 200,
        b: 10,
        assumption_mode: AssumptionMode::LowVariance,
        budget: 1_000_000,
        scale_factor: 1e-3,
        record_regressions: true,
    };
    let out = run_dmq(&mdp, &features, &cfg, 3).unwrap();
    check_invariants(&out, &cfg, 2);
    assert_eq!(out.stats.restarts, 0);
    assert!(!out.stats.truncated);
    // Q*_h is the feature table itself because features are one-hot.
    for h in 1..=2 {
        for s in 0..2 {
            for k in 0..2 {
                let q = linrl::linalg::dot(features.at(s, k), &out.thetas[h - 1]);
                assert!((q - t.q[h - 1][s][k]).abs() <= 1e-6, "h={h} s={s} k={k}");
            }
        }
    }
}

#[test]
fn benign_fixture_reaches_epsilon_optimality() {
    let (mdp, features) = benign_chain(3, 0.95).unwrap();
    let cfg = scaled(0.1, 4, 3, 400);
    let opt = optimal_values(&mdp).value_at(mdp.initial_dist());
    let ctx = linrl::mdp::PolicyContext::new(mdp.admissible()).with_features(&features);
    let mut ok = 0;
    for seed in 0..20 {
        let out = run_dmq(&mdp, &features, &cfg, seed).unwrap();
        check_invariants(&out, &cfg, 3);
        assert!(out.stats.non_theoretical);
        if policy_value(&mdp, &out.policy, &ctx).unwrap() >= opt - 0.1 {
            ok += 1;
        }
    }
    assert!(ok >= 18, "{ok}/20");
}

#[test]
fn runs_are_deterministic_and_counted() {
    let (mdp, features) = benign_chain(3, 0.9).unwrap();
    let cfg = scaled(0.1, 4, 3, 100);
    let a = run_dmq(&mdp, &features, &cfg, 11).unwrap();
    let b = run_dmq(&mdp, &features, &cfg, 11).unwrap();
    assert_eq!(a.thetas, b.thetas);
    assert_eq!(a.stats.trajectories, b.stats.trajectories);
    let mut env = OnlineEnv::new(&mdp, &features, 11);
    let c = learn(&mut env, &cfg, 11).unwrap();
    assert_eq!(c.stats.trajectories, env.episodes());
    assert_eq!(c.thetas, a.thetas);
}

#[test]
fn budget_exhaustion_truncates() {
    let (mdp, features) = benign_chain(3, 0.9).unwrap();
    let mut cfg = scaled(0.1, 4, 3, 100);
    cfg.budget = 250;
    let out = run_dmq(&mdp, &features, &cfg, 1).unwrap();
    assert!(out.stats.truncated);
    assert_eq!(out.stats.trajectories, 250);
    assert!(matches!(out.policy, PolicySpec::LinearGreedy { .. }));
}

/// Random explicit MDP with random Gaussian features of dimension `d`.
fn random_instance(seed: u64, d: usize) -> (MdpModel, FeatureMap) {
    let mut rng = seeded(seed);
    let mdp = random_mdp(&mut rng, 5, 3, 3);
    let table = (0..mdp.num_states())
        .map(|s| mdp.actions(s).iter().map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    (mdp, FeatureMap::new(d, table).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn invariants_on_random_instances(seed in any::<u64>(), d in 1usize..5) {
        let (mdp, features) = random_instance(seed, d);
        let cfg = scaled(0.3, d, 3, 60);
        let out = run_dmq(&mdp, &features, &cfg, seed).unwrap();
        check_invariants(&out, &cfg, 3);
    }
}
