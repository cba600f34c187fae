use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn riskplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskplan")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, grid: serde_json::Value, extra: serde_json::Value) -> String {
    let mut cfg = serde_json::json!({"scenario": {"grid": grid}, "output_dir": dir.join("out")});
    if let serde_json::Value::Object(m) = extra {
        cfg.as_object_mut().unwrap().extend(m);
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_grid(seed: u64) -> serde_json::Value {
    serde_json::json!({"rows": 5, "cols": 5, "goal": [4, 4], "start": [0, 0], "obstacle_density": 0.12, "n_uncertain": 1, "seed": seed})
}

#[test]
fn manifest_hashes_match_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_grid(3), serde_json::json!({"measure": {"kind": "cvar", "epsilon": 0.3}}));
    for cmd in ["gen", "solve-mdp", "export-dcp"] {
        let o = riskplan(&[cmd, "-c", &cfg]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let out = dir.path().join("out");
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(format!("manifest-{cmd}.json"))).unwrap()).unwrap();
        assert_eq!(manifest["command"], cmd);
        let artifacts = manifest["artifacts"].as_object().unwrap();
        assert!(!artifacts.is_empty());
        for (name, hash) in artifacts {
            let bytes = std::fs::read(out.join(name)).unwrap();
            assert_eq!(hex::encode(Sha256::digest(&bytes)), hash.as_str().unwrap(), "{name}");
        }
    }
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_grid(3), serde_json::json!({}));
    let alt = dir.path().join("alt");
    let o = riskplan(&["solve-mdp", "-c", &cfg, "--measure", "evar", "--epsilon", "0.4", "--seed", "11", "--out", alt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(alt.join("manifest-solve-mdp.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["measure"]["kind"], "evar");
    assert_eq!(manifest["config"]["measure"]["epsilon"], 0.4);
    assert_eq!(manifest["config"]["scenario"]["grid"]["seed"], 11);
}

#[test]
fn simulate_both_result_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        small_grid(5),
        serde_json::json!({"measure": {"kind": "expectation"}, "mc": {"n_runs": 30}, "pi": {"n_max": 2}}),
    );
    for cmd in ["solve-mdp", "solve-pomdp"] {
        assert!(riskplan(&[cmd, "-c", &cfg]).status.success());
    }
    let out = dir.path().join("out");
    for (result, summary) in [("mdp_result.json", "mc_summary_mdp.json"), ("pomdp_result.json", "mc_summary_pomdp.json")] {
        let o = riskplan(&["simulate", "-c", &cfg, "--result", out.join(result).to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let s: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(summary)).unwrap()).unwrap();
        assert_eq!(s["n_runs"], 30);
        let rate = s["failure_rate"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = riskplan(&["gen", "-c", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let cfg = write_config(dir.path(), serde_json::json!({"obstacle_density": 1.5}), serde_json::json!({}));
    let o = riskplan(&["gen", "-c", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("density"));

    let cfg = write_config(dir.path(), small_grid(1), serde_json::json!({}));
    assert_eq!(riskplan(&["solve-mdp", "-c", &cfg, "--measure", "median"]).status.code(), Some(2));
    assert_eq!(riskplan(&["solve-mdp", "-c", &cfg, "--epsilon", "0"]).status.code(), Some(2));
}

#[test]
fn mismatched_inputs_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_grid(2), serde_json::json!({"budgets": [1.0, 2.0]}));
    assert_eq!(riskplan(&["solve-mdp", "-c", &cfg]).status.code(), Some(4));

    // a 5×5 result simulated on the default 10×10 grid
    let small = tempfile::tempdir().unwrap();
    let small_cfg = write_config(small.path(), small_grid(2), serde_json::json!({}));
    assert!(riskplan(&["solve-mdp", "-c", &small_cfg]).status.success());
    let result = small.path().join("out/mdp_result.json");
    let big_cfg = write_config(dir.path(), serde_json::json!({"seed": 2}), serde_json::json!({}));
    let o = riskplan(&["simulate", "-c", &big_cfg, "--result", result.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn infeasible_layout_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let grid = serde_json::json!({"rows": 3, "cols": 3, "goal": [2, 2], "start": [0, 0], "obstacle_density": 0.78, "seed": 1});
    let cfg = write_config(dir.path(), grid, serde_json::json!({}));
    let o = riskplan(&["gen", "-c", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
