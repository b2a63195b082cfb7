use std::path::Path;
use std::process::Command;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn isoembed(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_isoembed")).args(args).output().unwrap()
}

#[test]
fn missing_key_exits_2_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n": 1, "N": 33, "metric": {"name": "zero"}, "out_dir": "out"}"#);
    let out = isoembed(&["embed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
}

#[test]
fn stage_error_exits_1_and_keeps_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 1, "N": 65, "epsilon": 0.1, "k": 3, "metric": {"name": "flat_plus_bump", "params": {"r_out": 0.95}}, "out_dir": "out"}"#,
    );
    let out = isoembed(&["embed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["error"].is_string());
    assert_eq!(report["stages"].as_array().unwrap().len(), 1);
}

#[test]
fn poisson_check_writes_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 2, "N": 65, "epsilon": 0.1, "metric": {"name": "zero"}, "out_dir": "pc"}"#,
    );
    let out = isoembed(&["poisson-check", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("pc/ladder.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pc/report.json")).unwrap()).unwrap();
    assert!(rep["order"].as_f64().unwrap() >= 1.7);
}

#[test]
fn embed_then_verify_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 1, "N": 129, "epsilon": 0.1, "k": 3, "metric": {"name": "flat_plus_bump", "params": {"c": 1e-4, "r_out": 0.8}}, "out_dir": "run"}"#,
    );
    let c = cfg.to_str().unwrap();
    assert!(isoembed(&["embed", "--config", c]).status.success());
    let read = |name: &str| std::fs::read_to_string(dir.path().join("run").join(name)).unwrap();
    let strip = |text: String| {
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["timing"] = serde_json::Value::Null;
        v
    };
    let (first, first_map) = (strip(read("report.json")), read("F.csv"));
    assert!(first["final"]["pullback_residual_max"].as_f64().unwrap() <= first["final"]["pullback_residual_budget"].as_f64().unwrap());
    assert!(isoembed(&["embed", "--config", c]).status.success());
    assert_eq!(first, strip(read("report.json")));
    assert_eq!(first_map, read("F.csv"));
    let out = isoembed(&["verify", "--config", c]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&read("verify.json")).unwrap();
    assert!(v["freeness_min"].as_f64().unwrap() > 0.0);
}

#[test]
fn decompose_oscillate_perturb_family_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 1, "N": 65, "epsilon": 0.1, "k": 3, "metric": {"name": "conformal_ramp", "params": {"c": 5e-5, "radius": 0.6}}, "out_dir": "o"}"#,
    );
    let c = cfg.to_str().unwrap();
    for (cmd, file) in [
        ("decompose", "decomposition.json"),
        ("oscillate", "F_osc.csv"),
        ("perturb", "u.csv"),
        ("family", "family.json"),
    ] {
        let out = isoembed(&[cmd, "--config", c]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("o").join(file).exists(), "{cmd}");
    }
}
