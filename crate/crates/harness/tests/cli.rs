use std::path::Path;
use std::process::{Command, Output};

use actc_harness::ScenarioConfig;
use serde_json::Value;

const SMALL: &str = r#"{
    "name": "small",
    "problem": {"kind": "generated", "dim": 4, "agents": 5,
                "regressor_variance": [1, 2], "noise_variance": [0.1, 0.3], "seed": 4},
    "topology": {"kind": "bollobas_riordan", "seed": 2},
    "mu": 0.02, "zeta": 0.5, "horizon": 60, "runs": 3, "seed": 9,
    "compression": [{"kind": "quantizer", "level_bits": 2}, {"kind": "sparsifier", "kept": 2}],
    "include_atc": true
}"#;

fn actc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actc"))
        .args(args)
        .env("ACTC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn simulate(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    actc(&args)
}

const FILES: [&str; 5] = ["quantizer_r2.csv", "sparsifier_s2.csv", "atc.csv", "theory.json", "metadata.json"];

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(simulate(&cfg, &a, &[]).status.success());
    assert!(simulate(&cfg, &b, &[]).status.success());
    for f in FILES {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let c = dir.path().join("c");
    assert!(simulate(&cfg, &c, &["--seed", "10"]).status.success());
    assert_ne!(
        std::fs::read(a.join("atc.csv")).unwrap(),
        std::fs::read(c.join("atc.csv")).unwrap()
    );
}

#[test]
fn outputs_carry_the_config_hash_and_full_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out");
    let res = simulate(&cfg, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let hash = ScenarioConfig::from_json(SMALL).unwrap().hash();
    for f in FILES {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(&hash), "{f} lacks the config hash");
    }
    let csv = std::fs::read_to_string(out.join("quantizer_r2.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "iter,mse_net,mse_agent_0,mse_agent_1,mse_agent_2,mse_agent_3,mse_agent_4,bits_cum");
    assert_eq!(lines.len() - 2, 61);
    assert!(lines.last().unwrap().starts_with("60,"));

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"], Value::from(hash));
    assert_eq!(meta["runs"], Value::from(3));
}

#[test]
fn changed_config_changes_hash() {
    let a = ScenarioConfig::from_json(SMALL).unwrap();
    let b = ScenarioConfig::from_json(&SMALL.replace("\"zeta\": 0.5", "\"zeta\": 0.4")).unwrap();
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn toml_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let toml = r#"
        name = "small"
        mu = 0.02
        zeta = 0.5
        horizon = 20
        runs = 2
        [problem]
        kind = "generated"
        dim = 3
        agents = 4
        regressor_variance = [1.0, 2.0]
        noise_variance = [0.1, 0.3]
        seed = 1
        [topology]
        kind = "bollobas_riordan"
        seed = 1
        [[compression]]
        kind = "identity"
    "#;
    let cfg = write(dir.path(), "small.toml", toml);
    let out = dir.path().join("out");
    let res = simulate(&cfg, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("identity.csv").exists());
}

#[test]
fn non_stochastic_matrix_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace(
        r#"{"kind": "bollobas_riordan", "seed": 2}"#,
        r#"{"kind": "matrix", "rows": [[0.5,0.5,0,0,0.5],[0.5,0.2,0.5,0,0],[0,0.3,0.5,0.5,0],[0,0,0,0.5,0.5],[0,0,0.2,0,0.5]]}"#,
    );
    let cfg = write(dir.path(), "bad.json", &bad);
    let res = simulate(&cfg, &dir.path().join("out"), &[]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("column"), "unexpected error: {err}");
    assert!(!dir.path().join("out").join("atc.csv").exists());
}

#[test]
fn unknown_preset_fails() {
    let res = actc(&["theory", "--preset", "nope"]);
    assert!(!res.status.success());
}

#[test]
fn theory_reports_every_curve() {
    let res = actc(&["theory", "--preset", "fig1"]);
    assert!(res.status.success());
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    for label in ["quantizer_r2", "quantizer_r4", "quantizer_r6", "quantizer_r8", "atc"] {
        let c = &v["curves"][label];
        assert!(c["lower"].as_f64().unwrap() <= c["upper"].as_f64().unwrap(), "{label}");
    }
    let fig3 = actc(&["theory", "--preset", "fig3_quantizer"]);
    let v: Value = serde_json::from_slice(&fig3.stdout).unwrap();
    assert!(v["curves"]["optimized_oracle"]["upper"].as_f64().unwrap() < v["curves"]["uniform"]["upper"].as_f64().unwrap());
}

#[test]
fn allocate_from_flags() {
    let res = actc(&[
        "allocate", "--family", "sparsifier", "--dim", "30", "--budget", "20", "--x-min", "1", "--x-max", "30",
        "--perron", "0.8,0.2", "--distortions", "1,1",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["x_int"], serde_json::json!([16, 4]));
    assert!((v["x_real"][0].as_f64().unwrap() - 16.0).abs() < 1e-9);

    let missing = actc(&["allocate", "--family", "quantizer", "--dim", "30"]);
    assert!(!missing.status.success());
}

#[test]
fn allocate_from_preset() {
    let res = actc(&["allocate", "--preset", "fig3_quantizer"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    let x: Vec<u64> = v["x_int"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(x.len(), 10);
    assert!(x.iter().sum::<u64>() <= 20);
    for key in ["stationarity", "primal_feasibility", "dual_feasibility", "complementarity"] {
        assert!(v["kkt"][key].as_f64().unwrap() <= 1e-8, "{key}");
    }
}

#[test]
fn topology_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("a.csv");
    let e = dir.path().join("a.edges");
    let gen = actc(&[
        "topology", "gen", "--nodes", "12", "--seed", "3", "--rule", "relative-degree",
        "--matrix", m.to_str().unwrap(), "--edges", e.to_str().unwrap(),
    ]);
    assert!(gen.status.success());
    let from_matrix = actc(&["topology", "check", "--matrix", m.to_str().unwrap()]);
    let from_edges = actc(&["topology", "check", "--edges", e.to_str().unwrap(), "--rule", "relative-degree"]);
    assert!(from_matrix.status.success() && from_edges.status.success());
    let a: Value = serde_json::from_slice(&from_matrix.stdout).unwrap();
    let b: Value = serde_json::from_slice(&from_edges.stdout).unwrap();
    assert_eq!(a["nodes"], Value::from(12));
    let pa = a["perron"].as_array().unwrap();
    let pb = b["perron"].as_array().unwrap();
    for (x, y) in pa.iter().zip(pb) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-12);
    }
    let bad = write(dir.path(), "bad.csv", "0.5,0.5\n0.6,0.5\n");
    assert!(!actc(&["topology", "check", "--matrix", &bad]).status.success());
}
