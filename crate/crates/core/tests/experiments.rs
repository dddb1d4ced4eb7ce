use linrl::experiments::emit::{csv_bytes, line_chart_svg, read_csv, write_csv, write_json, Series};
use linrl::experiments::separation::matches_optimal;
use linrl::experiments::*;
use linrl::fixtures::benign_chain;
use linrl::hard::{ConsistencyMode, HardInstance, Variant};
use linrl::mdp::{GenerativeModel, LevelTables, MdpModel, OnlineEnv, PolicyContext, PolicySpec, RewardSpec, FeatureMap};
use linrl::pack::{build_pack, PackOptions, VectorPack};
use linrl::tabular::{optimal_values, visitation_distribution};

fn small_spec(learner: LearnerKind, trials: usize, budget: u64) -> ExperimentSpec {
    ExperimentSpec {
        instance: InstanceSpec { d: 4, m: 5, gamma: 0.3, horizon: 3, pack_seed: 3, variant: Variant::Base },
        learner,
        access: None,
        budget,
        trials,
        seed: 99,
        dmq: Default::default(),
        lsvi: Default::default(),
        gap_threshold: 0.05,
    }
}

#[test]
fn planner_identifies_a_star_in_one_level() {
    let inst = HardInstance::build_base(&VectorPack::orthonormal(3, 0.25), 2, 1).unwrap();
    let t = optimal_values(&inst.mdp);
    let mut model = GenerativeModel::new(&inst.mdp, &inst.features, 5);
    let cfg = PlannerConfig { query_budget: 300, per_level_samples: 30, state_samples: 100, lambda: 0.0 };
    let out = generative_planner(&mut model, &cfg, 5).unwrap();
    assert!(!out.truncated && out.queries == model.queries());
    let ctx = PolicyContext::new(inst.mdp.admissible()).with_features(&inst.features);
    for s in [0, 1] {
        assert_eq!(out.policy.action_distribution(&ctx, 1, s).unwrap(), vec![(2, 1.0)]);
    }
    assert!(matches_optimal(&inst.mdp, &out.policy, &ctx, &t, &[inst.terminal()]).unwrap());
}

#[test]
fn planner_is_optimal_everywhere_on_the_gap_complete_variant() {
    let pack = build_pack(8, 9, 1.0 / 6.0, 2, &PackOptions::default()).unwrap();
    let inst = HardInstance::build_gap_complete(&pack, 3, 4, ConsistencyMode::BellmanConsistent).unwrap();
    let t = optimal_values(&inst.mdp);
    let mut model = GenerativeModel::new(&inst.mdp, &inst.features, 8);
    let out = generative_planner(&mut model, &PlannerConfig::for_budget(1_000_000, 4), 8).unwrap();
    assert!(!out.truncated && out.queries <= 1_000_000);
    let ctx = PolicyContext::new(inst.mdp.admissible()).with_features(&inst.features);
    assert!(matches_optimal(&inst.mdp, &out.policy, &ctx, &t, &[]).unwrap());
}

#[test]
fn planner_truncates_on_tiny_budget() {
    let inst = HardInstance::build_base(&VectorPack::orthonormal(4, 0.25), 0, 3).unwrap();
    let mut model = GenerativeModel::new(&inst.mdp, &inst.features, 1);
    let out = generative_planner(&mut model, &PlannerConfig { query_budget: 10, per_level_samples: 100, state_samples: 10, lambda: 0.0 }, 1).unwrap();
    assert!(out.truncated);
    assert_eq!(out.queries, 10);
    assert!(out.thetas[0].iter().all(|&x| x == 0.0));
}

#[test]
fn uniform_learner_on_single_action_mdp() {
    let mdp = MdpModel::new(
        2,
        3,
        vec![vec![4], vec![1]],
        LevelTables::homogeneous(vec![vec![vec![(1, 1.0)]], vec![vec![(0, 1.0)]]], 3),
        LevelTables::homogeneous(vec![vec![RewardSpec::Deterministic(1.0)], vec![RewardSpec::Deterministic(0.0)]], 3),
        vec![1.0, 0.0],
    )
    .unwrap();
    let features = FeatureMap::new(1, vec![vec![vec![1.0]], vec![vec![0.5]]]).unwrap();
    let mut env = OnlineEnv::new(&mdp, &features, 0);
    let pol = uniform_random(&mut env, 7, 0).unwrap();
    assert_eq!(env.episodes(), 7);
    let ctx = PolicyContext::new(mdp.admissible());
    assert_eq!(pol.action_distribution(&ctx, 2, 0).unwrap(), vec![(4, 1.0)]);
}

#[test]
fn uniform_learner_a_star_rate_matches_exact_prediction() {
    // a* ends the episode, so each episode plays it at most once at a
    // nonterminal state and the per-episode count is Bernoulli.
    let spec = ExperimentSpec {
        instance: InstanceSpec { d: 8, m: 16, gamma: 0.3, horizon: 6, pack_seed: 1, variant: Variant::Base },
        ..small_spec(LearnerKind::UniformRandom, 8, 10_000)
    };
    let rep = run_separation(&spec).unwrap();
    let pack = spec.instance.pack().unwrap();
    let (mut plays, mut expected) = (0.0, 0.0);
    for row in &rep.rows {
        let inst = spec.instance.build(&pack, row.a_star).unwrap();
        let ctx = PolicyContext::new(inst.mdp.admissible());
        let mut p = 0.0;
        for h in 1..=6 {
            let dist = visitation_distribution(&inst.mdp, &PolicySpec::Uniform, &ctx, h).unwrap();
            for i in (0..16).filter(|&i| i != row.a_star) {
                p += dist[i] / 15.0;
            }
        }
        plays += row.a_star_plays as f64;
        expected += p * row.consumed as f64;
        assert!(row.a_star_taken);
        assert_eq!(row.env_steps, row.consumed * 6);
    }
    let n = 8.0 * 10_000.0;
    let rate = expected / n;
    let sigma = (rate * (1.0 - rate) / n).sqrt();
    assert!((plays / n - rate).abs() <= 3.0 * sigma, "{} vs {rate}", plays / n);
}

#[test]
fn lsvi_solves_noiseless_realizable_chain() {
    let (mdp, features) = benign_chain(2, 1.0).unwrap();
    let mut env = OnlineEnv::new(&mdp, &features, 4);
    let cfg = LsviConfig { lambda: 1e-9, ..LsviConfig::default() };
    let pol = lsvi_greedy(&mut env, 2000, &cfg, 4).unwrap();
    let t = optimal_values(&mdp);
    let ctx = PolicyContext::new(mdp.admissible()).with_features(&features);
    assert!(matches_optimal(&mdp, &pol, &ctx, &t, &[]).unwrap());
    assert_eq!(env.samples(), 2000 * 2);
}

#[test]
fn survival_examples() {
    let inst = HardInstance::build_base(&VectorPack::orthonormal(8, 0.25), 3, 6).unwrap();
    let mut always = vec![vec![vec![(3, 1.0)]; inst.mdp.num_states()]; 6];
    for lvl in always.iter_mut() {
        lvl[3] = vec![(0, 1.0)];
        lvl[inst.terminal()] = vec![(0, 1.0)];
    }
    let policies = vec![("uniform".to_string(), PolicySpec::Uniform), ("a_star".to_string(), PolicySpec::Tabular { table: always })];
    let rows = survival_decay(&inst, &policies, 20_000, 3).unwrap();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(r.pass, "{r:?}");
        if r.h == 1 {
            assert_eq!((r.empirical, r.exact), (1.0, 1.0));
        }
        if r.policy == "a_star" && r.h >= 2 {
            // only ā* survives one step, by playing another action
            assert!(r.exact <= 1.0 / 8.0 + 1e-12);
        }
        assert!((r.empirical - r.exact).abs() <= 4.0 * r.std_err.max(1e-3));
    }
    let reach = HardInstance::build_reachable(&build_pack(8, 9, 1.0 / 6.0, 2, &PackOptions::default()).unwrap(), 1, 3).unwrap();
    assert!(survival_decay(&reach, &policies[..1], 10, 0).is_err());
}

#[test]
fn always_a_star_policy_dies_after_one_step() {
    // μ puts no mass on ā*, so playing a* everywhere reaches f at once.
    let inst = HardInstance::build_base(&VectorPack::orthonormal(4, 0.25), 2, 4).unwrap();
    let n = inst.mdp.num_states();
    let mut table = vec![vec![vec![(2, 1.0)]; n]; 4];
    for lvl in table.iter_mut() {
        lvl[2] = vec![(0, 1.0)];
        lvl[inst.terminal()] = vec![(0, 1.0)];
    }
    let mut mu = inst.mdp.initial_dist().to_vec();
    mu[2] = 0.0;
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|p| *p /= total);
    let pol = PolicySpec::Tabular { table };
    let ctx = PolicyContext::new(inst.mdp.admissible());
    for h in 2..=4 {
        let d = visitation_distribution(&inst.mdp, &pol, &ctx, h).unwrap();
        let alive_from_mu: f64 = (0..4).filter(|&i| i != 2).map(|i| d[i]).sum();
        // mass that survives comes only from ā* at level 1
        assert!(alive_from_mu <= 0.25 + 1e-12);
    }
}

#[test]
fn access_violation_is_rejected() {
    let mut spec = small_spec(LearnerKind::GenerativePlanner, 1, 100);
    spec.access = Some(Access::Online);
    assert!(matches!(run_separation(&spec), Err(ExperimentError::AccessViolation { .. })));
    let mut spec = small_spec(LearnerKind::Dmq, 1, 100);
    spec.access = Some(Access::Generative);
    assert!(matches!(run_separation(&spec), Err(ExperimentError::AccessViolation { .. })));
    assert!(run_separation(&small_spec(LearnerKind::Dmq, 0, 100)).is_err());
}

#[test]
fn emitted_results_round_trip_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let empty: Vec<TrialRow> = Vec::new();
    let bytes = csv_bytes(&empty, &TRIAL_HEADER).unwrap();
    assert_eq!(String::from_utf8(bytes).unwrap().trim_end(), TRIAL_HEADER.join(","));

    let spec = small_spec(LearnerKind::LsviGreedy, 3, 300);
    let rep = run_separation(&spec).unwrap();
    let path = dir.path().join("trials.csv");
    write_csv(&path, &rep.rows, &TRIAL_HEADER).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    let back: Vec<TrialRow> = read_csv(&path).unwrap();
    assert_eq!(back, rep.rows);
    let json = dir.path().join("report.json");
    write_json(&json, &rep).unwrap();
    let parsed: SeparationReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(parsed, rep);
    assert_eq!(parsed.aggregate.suboptimal.trials, 3);

    let again = run_separation(&spec).unwrap();
    assert_eq!(csv_bytes(&again.rows, &TRIAL_HEADER).unwrap(), text.into_bytes());
}

#[test]
fn svg_chart_is_well_formed() {
    let s = vec![Series { name: "a<b".into(), points: vec![(1.0, 1.0), (2.0, 0.5), (3.0, 0.0)] }];
    let svg = line_chart_svg("survival", "h", "Pr", &s, true);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("a&lt;b") && svg.contains("<polyline"));
}
