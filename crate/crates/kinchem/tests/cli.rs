use std::fs;
use std::path::Path;
use std::process::Command;

use kinchem::config::save_config;
use kinchem::models::TwoLevel;
use kinchem::output::validate_summary;
use serde_json::Value;

fn kinchem(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kinchem")).args(args).output().expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn summary(dir: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    validate_summary(&v).unwrap();
    v
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("model.toml");
    save_config(&TwoLevel { n: 300, seed: 4, ..TwoLevel::default() }.spec(), &path).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn scenario_by_name_and_through_run() {
    let dir = tempfile::tempdir().unwrap();
    for (k, args) in [vec!["flux-check"], vec!["run", "flux-check"]].into_iter().enumerate() {
        let out = dir.path().join(k.to_string());
        let mut a = args.clone();
        a.extend(["--out", out.to_str().unwrap()]);
        let (code, text) = kinchem(&a);
        assert_eq!(code, 0, "{text}");
        assert!(text.contains("PASS gibbs_identity_residual"), "{text}");
        let s = summary(&out);
        assert_eq!(s["scenario"], "flux-check");
        assert!(s["passed"].as_bool().unwrap());
        let csv = fs::read_to_string(out.join("flux_check.csv")).unwrap();
        assert!(csv.starts_with("t,c1,c2,affinity,flux"));
    }
}

#[test]
fn bad_input_is_an_error_not_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, text) = kinchem(&["run", "no-such-scenario", "--out", out]);
    assert_eq!(code, 2);
    assert!(text.contains("unknown scenario"), "{text}");
    let (code, text) = kinchem(&["hess", "--beta=-2", "--out", out]);
    assert_eq!(code, 2);
    assert!(text.contains("beta"), "{text}");
    let (code, _) = kinchem(&["sim", "--out", out]);
    assert_eq!(code, 2);
}

#[test]
fn oracle_verify_reports_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let (code, text) = kinchem(&[
        "oracle",
        "verify",
        "--states",
        "2",
        "--n",
        "4",
        "--lambda-t",
        "0.01",
        "--nmax",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let s = summary(&out);
    let cmp = &s["parameters"]["comparison"];
    let (l1, omitted) = (cmp["l1_error"].as_f64().unwrap(), cmp["omitted_mass"].as_f64().unwrap());
    assert!((l1 - omitted).abs() < 1e-12, "{text}");
    assert!(cmp["tail_bound"].as_f64().unwrap() > 0.0);
    assert_eq!(code == 0, s["passed"].as_bool().unwrap());
    assert_eq!(cmp["series"].as_array().unwrap().len(), 2);
}

#[test]
fn thermo_eval_writes_potentials() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("thermo");
    let (code, text) = kinchem(&[
        "thermo",
        "eval",
        "--config",
        &config,
        "--c",
        "0.3,0.7",
        "--beta",
        "1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{text}");
    let s = summary(&out);
    let p = &s["parameters"];
    assert_eq!(p["c"], serde_json::json!([0.3, 0.7]));
    assert!(p["affinity"]["kappa"].as_f64().unwrap() > 0.0);
    assert!(fs::read_to_string(out.join("potentials.csv")).unwrap().starts_with("P,U,H,S,G,F,Omega,g"));
}

#[test]
fn sim_engines_write_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    for (engine, file, header) in [
        ("particle", "trajectory_1.csv", "t,n_1,n_2,mean_T"),
        ("meanfield", "meanfield.csv", "t,c_1,c_2,mean_T,g,H,S_M,A"),
        ("reduced", "reduced.csv", "t,c_1,c_2,mean_T,g,H,S_M,A"),
    ] {
        let out = dir.path().join(engine);
        let (code, text) = kinchem(&[
            "sim",
            "--config",
            &config,
            "--engine",
            engine,
            "--t-end",
            "2",
            "--sample-every",
            "0.5",
            "--replicas",
            "2",
            "--log-events",
            "--grid-size",
            "60",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{engine}: {text}");
        let csv = fs::read_to_string(out.join(file)).unwrap();
        assert!(csv.starts_with(header), "{engine}: {csv}");
        assert_eq!(csv.lines().count(), 6, "{engine}");
        let s = summary(&out);
        let files: Vec<&str> = s["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
        assert!(files.contains(&file));
        if engine == "particle" {
            assert!(files.contains(&"events_0.csv"));
        }
    }
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let (code, text) =
            kinchem(&["sim", "--config", &config, "--seed", seed, "--t-end", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{text}");
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn readme_config_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").expect("toml block") + 8;
    let len = readme[start..].find("```").unwrap();
    let spec = kinchem::config::parse_config(&readme[start..start + len]).unwrap();
    assert_eq!(spec.n_particles, 1000);
}
