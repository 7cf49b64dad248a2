use std::path::Path;
use std::process::{Command, Output};

use rsbridge_cli::artifacts::{self, SimulateManifest, SolveManifest};
use rsbridge_cli::Scenario;

fn rsbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsbridge")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn solve_1d(dir: &Path) {
    let o = rsbridge(&["solve", "--scenario", "paper-1d", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn simulate(dir: &Path, paths: &str, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--scenario", "paper-1d", "--out", dir.to_str().unwrap(), "--paths", paths];
    args.extend_from_slice(extra);
    rsbridge(&args)
}

#[test]
fn solve_writes_manifest_snapshots_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    solve_1d(dir.path());
    let m: SolveManifest = artifacts::read_json(&dir.path().join(artifacts::MANIFEST)).unwrap();
    assert_eq!(m.config_hash, Scenario::load("paper-1d").unwrap().hash());
    assert_eq!(m.snapshots.len(), 11);
    assert!(m.checks.iter().all(|c| c.passed));
    for s in &m.snapshots {
        assert!(dir.path().join(&s.file).exists());
    }
    assert!(dir.path().join(artifacts::RESIDUALS).exists());
    assert!(dir.path().join(artifacts::FACTORS).exists());
    let o = rsbridge(&["validate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn snapshot_override_changes_the_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = rsbridge(&["solve", "--scenario", "paper-1d", "--out", dir.path().to_str().unwrap(), "--snapshots", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: SolveManifest = artifacts::read_json(&dir.path().join(artifacts::MANIFEST)).unwrap();
    assert_eq!(m.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(), [0.0, 0.5, 1.0]);
}

#[test]
fn closed_loop_needs_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "500", &["--closed-loop"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn simulation_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    solve_1d(dir.path());
    let ensemble = dir.path().join(artifacts::ENSEMBLE);
    assert_eq!(code(&simulate(dir.path(), "500", &["--closed-loop", "--seed", "11"])), 0);
    let first = std::fs::read(&ensemble).unwrap();
    assert_eq!(code(&simulate(dir.path(), "500", &["--closed-loop", "--seed", "11"])), 0);
    assert_eq!(first, std::fs::read(&ensemble).unwrap());
    assert_eq!(code(&simulate(dir.path(), "500", &["--closed-loop", "--seed", "12"])), 0);
    assert_ne!(first, std::fs::read(&ensemble).unwrap());

    let m: SimulateManifest = artifacts::read_json(&dir.path().join(artifacts::SIM_MANIFEST)).unwrap();
    assert_eq!((m.paths, m.seed, m.closed_loop, m.containment_violations), (500, 12, true, 0));
}

#[test]
fn zero_paths_write_a_header_only_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "0", &[])), 0);
    let text = std::fs::read_to_string(dir.path().join(artifacts::ENSEMBLE)).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("path_id,step,t,x1,dL,dU"));
}

#[test]
fn malformed_expression_exits_2_and_names_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("paper-1d").unwrap();
    s.rho1 = "1.2 - cos(pi * (x + 4) $ 2)".into();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let o = rsbridge(&["solve", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`$`"), "{}", stderr(&o));
    assert!(!dir.path().join("out").join(artifacts::MANIFEST).exists());
}

#[test]
fn missing_scenario_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = rsbridge(&["solve", "--scenario", "/nonexistent/s.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unreachable_tolerance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("paper-1d").unwrap();
    s.solver.fp_max_iter = 3;
    let path = dir.path().join("short.json");
    std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let o = rsbridge(&["solve", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn kernel_check_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = rsbridge(&["kernel-check", "--lower", "-4", "--upper", "4", "--t", "0.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_discrepancy"].as_f64().unwrap() <= 1e-10);
    assert!(v["min_value"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("kernel_check.json").exists());
}

#[test]
fn kernel_check_flags_an_insufficient_truncation() {
    let o = rsbridge(&["kernel-check", "--t", "1e-6", "--terms", "100"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("not enough"));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["cosine_sufficient"], false);
}

#[test]
fn validate_catches_a_tampered_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    solve_1d(dir.path());
    let snap = dir.path().join(artifacts::snapshot_file(5));
    let (header, mut rows) = artifacts::read_table(&snap).unwrap();
    let rho = header.iter().position(|h| h == "rho").unwrap();
    for r in &mut rows {
        r[rho] *= 1.01;
    }
    let mut t = artifacts::Table::new(&header);
    for r in &rows {
        t.row(r);
    }
    t.save(&snap).unwrap();
    let o = rsbridge(&["validate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
