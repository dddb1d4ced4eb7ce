use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use linrl::design::{kw_design, DEFAULT_EPS, DEFAULT_MAX_ITER};
use linrl::dmq::{default_config, run_dmq, AssumptionMode, DmqConfig};
use linrl::experiments::emit::{line_chart_svg, read_csv, write_atomic, write_csv, write_json, Series};
use linrl::experiments::separation::{Aggregate, LearnerKind, TrialRow, TRIAL_HEADER};
use linrl::experiments::{epsilon_greedy, run_separation, survival_decay, ExperimentSpec, SurvivalRow};
use linrl::fixtures::benign_chain;
use linrl::hard::{ConsistencyMode, HardInstance, Variant};
use linrl::mdp::{sample_trajectory, FeatureMap, MdpModel, PolicyContext, PolicySpec};
use linrl::pack::{build_pack, verify_pack, PackOptions, VectorPack};
use linrl::regression::{estimate_c_hyper, estimate_c_var, HyperMode};
use linrl::rng::{derive_seed, stream};
use linrl::tabular::optimal_values;

#[derive(Parser)]
#[command(name = "linrl", version, about = "Hard instances, exploration designs and DMQ learning with linear Q*")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Base,
    Reference,
    GapComplete,
    Reachable,
    BenignChain,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    BellmanConsistent,
    StrictPaper,
}

#[derive(Clone, Copy, ValueEnum)]
enum AssumptionArg {
    LowVariance,
    Hypercontractive,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an instance and write it as JSON.
    Generate {
        #[arg(long, value_enum, default_value = "base")]
        variant: VariantArg,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 0.3)]
        gamma: f64,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        a_star: usize,
        #[arg(long, default_value_t = 0)]
        pack_seed: u64,
        /// Use the standard basis instead of a random pack (needs m = d).
        #[arg(long)]
        orthonormal: bool,
        #[arg(long, value_enum, default_value = "bellman-consistent")]
        mode: ModeArg,
        /// Transition probability of the intended successor (benign chain).
        #[arg(long, default_value_t = 0.95)]
        stay: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check realizability and gaps of a hard instance.
    Verify {
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// G-optimal design of a JSON list of vectors.
    Design {
        features: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run DMQ on an instance.
    Learn {
        instance: PathBuf,
        /// JSON with the learner config fields; defaults from --epsilon otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "low-variance")]
        assumption: AssumptionArg,
        /// Per-policy sample count replacing the theoretical one.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Low-variance ratio and hypercontractivity estimates for a policy.
    CheckAssumptions {
        instance: PathBuf,
        /// Policy JSON; uniform when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Feature samples drawn from the policy for the fourth-moment ratio.
        #[arg(long, default_value_t = 20_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Online-versus-generative separation study from an experiment JSON.
    Separate {
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Survival decay of uniform and ε-greedy play on a hard instance.
    Survival {
        instance: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        episodes: u64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize emitted trial or survival CSV files.
    Report {
        #[arg(long)]
        trials: Vec<PathBuf>,
        #[arg(long)]
        survival: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    generator: String,
    variant: String,
    pack_seed: Option<u64>,
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum InstanceFile {
    Hard { provenance: Provenance, instance: Box<HardInstance> },
    Fixture { provenance: Provenance, mdp: MdpModel, features: FeatureMap },
}

impl InstanceFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn model(&self) -> (&MdpModel, &FeatureMap) {
        match self {
            InstanceFile::Hard { instance, .. } => (&instance.mdp, &instance.features),
            InstanceFile::Fixture { mdp, features, .. } => (mdp, features),
        }
    }

    fn hard(&self) -> Result<&HardInstance> {
        match self {
            InstanceFile::Hard { instance, .. } => Ok(instance),
            InstanceFile::Fixture { .. } => bail!("this command needs a hard instance"),
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_json(p, value)?,
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(value)?;
            // A closed pipe (e.g. `| head`) is not an error for us.
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn generate(args: &Cmd) -> Result<InstanceFile> {
    let Cmd::Generate { variant, d, m, gamma, horizon, a_star, pack_seed, orthonormal, mode, stay, .. } = *args else { unreachable!() };
    let params = serde_json::json!({ "d": d, "m": m, "gamma": gamma, "horizon": horizon, "a_star": a_star, "orthonormal": orthonormal, "stay": stay });
    if let VariantArg::BenignChain = variant {
        let (mdp, features) = benign_chain(horizon, stay)?;
        let provenance = Provenance { generator: "benign_chain".into(), variant: "benign_chain".into(), pack_seed: None, params };
        return Ok(InstanceFile::Fixture { provenance, mdp, features });
    }
    let pack = if orthonormal {
        if m != d {
            bail!("--orthonormal needs m = d");
        }
        VectorPack::orthonormal(d, gamma)
    } else {
        build_pack(d, m, gamma, pack_seed, &PackOptions::default())?
    };
    let mode = match mode {
        ModeArg::BellmanConsistent => ConsistencyMode::BellmanConsistent,
        ModeArg::StrictPaper => ConsistencyMode::StrictPaper,
    };
    let inst = match variant {
        VariantArg::Base => HardInstance::build_base(&pack, a_star, horizon)?,
        VariantArg::Reference => HardInstance::build_reference(&pack, horizon)?,
        VariantArg::GapComplete => HardInstance::build_gap_complete(&pack, a_star, horizon, mode)?,
        VariantArg::Reachable => HardInstance::build_reachable(&pack, a_star, horizon)?,
        VariantArg::BenignChain => unreachable!(),
    };
    let name = serde_json::to_value(inst.variant)?.as_str().unwrap_or_default().to_string();
    let provenance = Provenance { generator: "hard_instance".into(), variant: name, pack_seed: (!orthonormal).then_some(pack_seed), params };
    Ok(InstanceFile::Hard { provenance, instance: Box::new(inst) })
}

fn verify(path: &Path, tol: f64) -> Result<bool> {
    let file = InstanceFile::load(path)?;
    let inst = file.hard()?;
    let mut ok = true;
    let pack = verify_pack(&inst.pack);
    let pack_ok = pack.certifies(inst.pack.gamma);
    println!("{:<14} {:>14} {:>14}  result", "check", "value", "bound");
    println!("{:<14} {:>14.6e} {:>14.6e}  {}", "pack", pack.max_abs_inner, inst.pack.gamma, verdict(pack_ok));
    ok &= pack_ok;
    if inst.variant != Variant::Reference {
        let r = inst.verify_realizability(tol)?;
        println!("{:<14} {:>14.6e} {:>14.6e}  {}", "realizability", r.max_residual, tol, verdict(r.pass));
        let g = inst.verify_gap()?;
        let gap = g.report.delta_min.unwrap_or(f64::INFINITY);
        println!("{:<14} {:>14.6e} {:>14.6e}  {}", "gap", gap, g.bound, verdict(g.pass));
        println!("excluded states: {:?}", g.report.excluded_states);
        ok &= r.pass && g.pass;
    }
    Ok(ok)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn learn(instance: &Path, config: Option<&Path>, epsilon: f64, assumption: AssumptionArg, n: Option<usize>, seed: u64, out: Option<&Path>) -> Result<()> {
    let file = InstanceFile::load(instance)?;
    let (mdp, features) = file.model();
    let d = features.dim();
    let mut cfg: DmqConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => {
            let mode = match assumption {
                AssumptionArg::LowVariance => AssumptionMode::LowVariance,
                AssumptionArg::Hypercontractive => AssumptionMode::Hypercontractive,
            };
            default_config(epsilon, d, mdp.horizon(), mode)?
        }
    };
    if let Some(n) = n {
        cfg = cfg.clone().with_scale(d, n as f64 / cfg.theory(d).n);
    }
    let out_val = run_dmq(mdp, features, &cfg, seed)?;
    emit(&serde_json::json!({ "policy": { "thetas": out_val.thetas }, "stats": out_val.stats, "config": cfg }), out)
}

fn check_assumptions(instance: &Path, policy: Option<&Path>, samples: u64, seed: u64) -> Result<()> {
    let file = InstanceFile::load(instance)?;
    let (mdp, features) = file.model();
    let policy: PolicySpec = match policy {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => PolicySpec::Uniform,
    };
    let ctx = PolicyContext::new(mdp.admissible()).with_features(features);
    let tables = optimal_values(mdp);
    let c_var = estimate_c_var(mdp, &policy, &ctx, &tables)?;
    println!("{}", serde_json::to_string(&serde_json::json!({ "condition": "low_variance", "report": c_var }))?);
    let mut xs = Vec::new();
    for i in 0..samples {
        let t = sample_trajectory(mdp, &policy, &ctx, derive_seed(seed, stream::MONTE_CARLO, i))?;
        for step in &t.steps {
            if let Some(x) = features.lookup(mdp.admissible(), step.state, step.action) {
                xs.push(x.to_vec());
            }
        }
    }
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let d = features.dim();
    let axes: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let dirs: Vec<&[f64]> = axes.iter().map(|x| x.as_slice()).collect();
    let hyper = estimate_c_hyper(&refs, &dirs, HyperMode::Spectral)?;
    println!("{}", serde_json::to_string(&serde_json::json!({ "condition": "hypercontractive", "report": hyper }))?);
    Ok(())
}

fn separate(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(spec_path)?)?;
    std::fs::create_dir_all(out_dir)?;
    let rep = run_separation(&spec)?;
    write_csv(&out_dir.join("trials.csv"), &rep.rows, &TRIAL_HEADER)?;
    write_json(&out_dir.join("report.json"), &rep)?;
    println!("{}", serde_json::to_string_pretty(&rep.aggregate)?);
    Ok(())
}

const SURVIVAL_HEADER: [&str; 8] = ["policy", "h", "episodes", "empirical", "std_err", "exact", "cap", "pass"];

fn survival_svg(rows: &[SurvivalRow]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|s| s.name == r.policy) {
            Some(s) => s.points.push((r.h as f64, r.empirical)),
            None => series.push(Series { name: r.policy.clone(), points: vec![(r.h as f64, r.empirical)] }),
        }
    }
    let cap: Vec<(f64, f64)> = rows.iter().filter(|r| Some(&r.policy) == rows.first().map(|f| &f.policy)).map(|r| (r.h as f64, r.cap)).collect();
    series.push(Series { name: "(3γ)^(h-1)".into(), points: cap });
    line_chart_svg("Survival Pr[s_h ≠ f]", "level h", "probability", &series, true)
}

fn survival(instance: &Path, episodes: u64, epsilon: f64, seed: u64, out_dir: &Path) -> Result<bool> {
    let file = InstanceFile::load(instance)?;
    let inst = file.hard()?;
    let tables = optimal_values(&inst.mdp);
    let policies = vec![("uniform".to_string(), PolicySpec::Uniform), (format!("eps_greedy_{epsilon}"), epsilon_greedy(&inst.mdp, &tables, epsilon))];
    let rows = survival_decay(inst, &policies, episodes, seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join("survival.csv"), &rows, &SURVIVAL_HEADER)?;
    write_atomic(&out_dir.join("survival.svg"), survival_svg(&rows).as_bytes())?;
    for r in &rows {
        println!("{:<18} h={:<3} {:.5} ± {:.5}  cap {:.5}  {}", r.policy, r.h, r.empirical, r.std_err, r.cap, verdict(r.pass));
    }
    Ok(rows.iter().all(|r| r.pass))
}

fn report(trials: &[PathBuf], survival_csv: Option<&Path>, svg: Option<&Path>) -> Result<()> {
    let mut rows: Vec<TrialRow> = Vec::new();
    for p in trials {
        rows.extend(read_csv::<TrialRow>(p)?);
    }
    let mut learners: Vec<LearnerKind> = Vec::new();
    for r in &rows {
        if !learners.contains(&r.learner) {
            learners.push(r.learner);
        }
    }
    for l in learners {
        let a = Aggregate::from_rows(l, &rows, 0.05);
        println!(
            "{:<20} trials {:>3}  gap>=0.05 {:.2} [{:.2}, {:.2}]  optimal {:.2}  a* taken {:.2}  mean gap {:.4}",
            l.name(),
            a.suboptimal.trials,
            a.suboptimal.rate,
            a.suboptimal.lo,
            a.suboptimal.hi,
            a.optimal.rate,
            a.a_star_taken.rate,
            a.mean_value_gap
        );
    }
    if let Some(p) = survival_csv {
        let srows: Vec<SurvivalRow> = read_csv(p)?;
        if let Some(out) = svg {
            write_atomic(out, survival_svg(&srows).as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.cmd {
        g @ Cmd::Generate { out, .. } => {
            let file = generate(g)?;
            write_json(out, &file)?;
            Ok(true)
        }
        Cmd::Verify { instance, tol } => verify(instance, *tol),
        Cmd::Design { features, eps, out } => {
            let xs: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(features)?)?;
            let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
            let des = kw_design(&refs, *eps, DEFAULT_MAX_ITER)?;
            emit(&des, out.as_deref())?;
            Ok(des.certified)
        }
        Cmd::Learn { instance, config, epsilon, assumption, n, seed, out } => {
            learn(instance, config.as_deref(), *epsilon, *assumption, *n, *seed, out.as_deref())?;
            Ok(true)
        }
        Cmd::CheckAssumptions { instance, policy, samples, seed } => {
            check_assumptions(instance, policy.as_deref(), *samples, *seed)?;
            Ok(true)
        }
        Cmd::Separate { spec, out_dir } => {
            separate(spec, out_dir)?;
            Ok(true)
        }
        Cmd::Survival { instance, episodes, epsilon, seed, out_dir } => survival(instance, *episodes, *epsilon, *seed, out_dir),
        Cmd::Report { trials, survival, svg } => {
            report(trials, survival.as_deref(), svg.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("LINRL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Ignored if a pool already exists; nothing has built one yet.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
