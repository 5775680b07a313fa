use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conewalk"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn selftest_exits_zero() {
    let out = bin().arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn missing_config_exits_one() {
    let out = bin().args(["verify", "thm1", "--config", "missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"ensemble\""));
}

#[test]
fn unknown_subcommand_and_theorem_exit_one() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    let out = bin().args(["verify", "thm9", "--config"]).arg(config("fk.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn duality_on_two_matrix_ensemble_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify", "duality", "--config"])
        .arg(config("fk.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["metrics"]["trajectories_checked"], 40000.0);
    let gamma = summary["metrics"]["gamma"].as_f64().unwrap();
    assert!((gamma - 3.0 * 2f64.ln()).abs() < 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("n,y,z,delta,mc_prob,mc_stderr,theory,ratio,pass\n"));
}

#[test]
fn kernels_table_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("psi.csv");
    let out = bin().args(["kernels", "psi", "--x", "1:1:1", "--y", "0:1:2", "--out"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(path).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "y,z,value");
    assert_eq!(rows[1], "1,0,0");
    assert!(rows[2].starts_with("1,1,0.34495"));
}

#[test]
fn simulate_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(
        &cfg,
        r#"{ "ensemble": { "dim": 2, "support": [
              { "matrix": [[2,1],[1,1]], "prob": 0.5 }, { "matrix": [[1,1],[1,2]], "prob": 0.5 } ],
              "log_scale": -0.9154795416 },
            "n": 100, "num_traj": 5000, "seed": 3, "levels": [0.0, 1.0], "per_trajectory": true }"#,
    )
    .unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["num_traj"], 5000);
    let p0 = s["survival"][0]["probability"].as_f64().unwrap();
    let p1 = s["survival"][1]["probability"].as_f64().unwrap();
    assert!(p0 <= p1);
    let rows = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5001);
}
