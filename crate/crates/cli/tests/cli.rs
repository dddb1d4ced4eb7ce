use std::path::Path;
use std::process::{Command, Output};

fn linrl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linrl")).args(args).current_dir(dir).env("LINRL_THREADS", "2").output().unwrap()
}

#[test]
fn generate_then_verify_reports_pass_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ok = linrl(&["generate", "--d", "8", "--m", "12", "--gamma", "0.25", "--pack-seed", "5", "--a-star", "3", "--horizon", "4", "--out", "good.json"], p);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let out = linrl(&["verify", "good.json"], p);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("realizability") && !text.contains("FAIL"));

    // Above gamma = 1/4 the base gap can drop below gamma/4; the exit code says so.
    linrl(&["generate", "--pack-seed", "0", "--out", "loose.json"], p);
    assert_eq!(linrl(&["verify", "loose.json"], p).status.code(), Some(1));

    linrl(&["generate", "--variant", "gap-complete", "--d", "8", "--m", "9", "--gamma", "0.16666666666666666", "--pack-seed", "2", "--out", "gc.json"], p);
    assert_eq!(linrl(&["verify", "gc.json"], p).status.code(), Some(0));
}

#[test]
fn learn_on_benign_chain_and_design() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(linrl(&["generate", "--variant", "benign-chain", "--horizon", "3", "--out", "chain.json"], p).status.success());
    let out = linrl(&["learn", "chain.json", "--n", "200", "--seed", "1", "--out", "run.json"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["policy"]["thetas"].as_array().unwrap().len(), 3);
    assert!(!run["stats"]["truncated"].as_bool().unwrap());

    std::fs::write(p.join("xs.json"), "[[1,0],[0,1],[1,1]]").unwrap();
    let out = linrl(&["design", "xs.json"], p);
    assert!(out.status.success());
    let des: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(des["certified"].as_bool().unwrap());
}

#[test]
fn separate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let spec = r#"{"instance": {"d": 4, "m": 5, "gamma": 0.3, "horizon": 3, "pack_seed": 3},
                   "learner": "uniform_random", "budget": 500, "trials": 3, "seed": 1}"#;
    std::fs::write(p.join("spec.json"), spec).unwrap();
    let out = linrl(&["separate", "spec.json", "--out-dir", "out"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("out/trials.csv").exists() && p.join("out/report.json").exists());
    let out = linrl(&["report", "--trials", "out/trials.csv"], p);
    assert!(String::from_utf8(out.stdout).unwrap().contains("uniform_random"));

    let bad = r#"{"instance": {"d": 4, "m": 5, "gamma": 0.3, "horizon": 3, "pack_seed": 3},
                  "learner": "dmq", "access": "generative", "budget": 500, "trials": 3, "seed": 1}"#;
    std::fs::write(p.join("bad.json"), bad).unwrap();
    assert_eq!(linrl(&["separate", "bad.json", "--out-dir", "out2"], p).status.code(), Some(2));
}

#[test]
fn survival_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    linrl(&["generate", "--d", "6", "--m", "6", "--gamma", "0.25", "--orthonormal", "--horizon", "5", "--out", "o.json"], p);
    let out = linrl(&["survival", "o.json", "--episodes", "5000", "--out-dir", "s"], p);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(p.join("s/survival.svg")).unwrap().starts_with("<svg"));
    assert!(linrl(&["report", "--survival", "s/survival.csv", "--svg", "again.svg"], p).status.success());
}
