#![allow(dead_code)]

use linrl::mdp::{LevelTables, MdpModel, RewardSpec};
use rand::Rng;

/// Random explicit MDP with `n` states, per-state action sets of size 1..=k,
/// per-level kernels and mixed deterministic / discrete rewards.
pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, k: usize, horizon: usize) -> MdpModel {
    let admissible: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let cnt = rng.random_range(1..=k);
            let mut acts: Vec<usize> = (0..k + 2).collect();
            for i in (1..acts.len()).rev() {
                acts.swap(i, rng.random_range(0..=i));
            }
            let mut a: Vec<usize> = acts[..cnt].to_vec();
            a.sort();
            a
        })
        .collect();
    let mut t_tables = Vec::new();
    let mut r_tables = Vec::new();
    for _ in 0..horizon {
        let mut tt = Vec::new();
        let mut rt = Vec::new();
        for acts in &admissible {
            let mut trow = Vec::new();
            let mut rrow = Vec::new();
            for _ in acts {
                let w: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { rng.random::<f64>() } else { 0.0 }).collect();
                let total: f64 = w.iter().sum();
                let row = if total == 0.0 {
                    vec![(rng.random_range(0..n), 1.0)]
                } else {
                    let mut row: Vec<(usize, f64)> = w.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(s, &x)| (s, x / total)).collect();
                    let acc: f64 = row[..row.len() - 1].iter().map(|x| x.1).sum();
                    let last = row.len() - 1;
                    row[last].1 = 1.0 - acc;
                    row
                };
                trow.push(row);
                rrow.push(if rng.random_bool(0.5) {
                    RewardSpec::Deterministic(rng.random_range(-1.0..1.0))
                } else {
                    let p = rng.random_range(0.1..0.9);
                    RewardSpec::Discrete { outcomes: vec![(rng.random_range(-1.0..1.0), p), (rng.random_range(-1.0..1.0), 1.0 - p)] }
                });
            }
            tt.push(trow);
            rt.push(rrow);
        }
        t_tables.push(tt);
        r_tables.push(rt);
    }
    let mut mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= total);
    let acc: f64 = mu[..n - 1].iter().sum();
    mu[n - 1] = 1.0 - acc;
    MdpModel::new(
        n,
        horizon,
        admissible,
        LevelTables { tables: t_tables, by_level: (0..horizon).collect() },
        LevelTables { tables: r_tables, by_level: (0..horizon).collect() },
        mu,
    )
    .expect("generator produces valid models")
}

/// Binomial standard error of a proportion estimated from `n` draws.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
