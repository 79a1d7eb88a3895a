//! End-to-end runs of the `tagdiff` binary.

use std::path::Path;
use std::process::{Command, Output};

fn tagdiff(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagdiff"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn compute_writes_level_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagdiff(&["compute", "--method", "lsq", "--u", "1,0", "--out", "levels.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("levels.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "lsq");
    // u_1, u_2, method, objective, A_0 .. A_8
    assert_eq!(rows[0].len(), 4 + 9);
    let expected = [0.5000, 0.4196, 0.3430, 0.2708, 0.2035, 0.1421, 0.0873, 0.0398, 0.0];
    for (cell, want) in rows[0][4..].iter().zip(expected) {
        assert!((num(cell) - want).abs() < 5e-4, "{cell} vs {want}");
    }
    assert!((num(&rows[0][3]) - 53.587).abs() < 1e-2);
    assert!(dir.path().join("levels.manifest.json").exists());
}

#[test]
fn compute_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = tagdiff(
            &["compute", "--method", "als", "--restarts", "8", "--seed", "3", "--u", "1,1", "--out", name],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn matrix_then_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = tagdiff(
        &["matrix", "--method", "lsq", "--out", "ds.csv", "--trace", "trace.dat", "--samples", "10", "--model", "ds.json"],
        p,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let table = csv_rows(&p.join("ds.csv"));
    assert_eq!(table.len(), 9);
    let trace: Vec<Vec<f64>> = std::fs::read_to_string(p.join("trace.dat"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(num).collect())
        .collect();
    assert_eq!(trace.len(), 11);
    assert!(trace[0][0].abs() < 1e-15 && (trace[0][1] - 2.0).abs() < 1e-3);
    assert!((trace[10][0] - 1.0).abs() < 1e-15 && trace[10][1].abs() < 1e-3);

    let config = "dt = 0.01\nt_final = 0.05\neps_lin = 1e-8\nsnapshot_every = 2\n\
        [mesh]\nkind = \"cartesian\"\nnx = 4\nny = 4\n\
        [initial]\nred = \"0.25 + 0.2*cos(PI*x)\"\nblue = \"0.5 - 0.2*cos(PI*y)\"\n";
    std::fs::write(p.join("run.toml"), config).unwrap();
    let out = tagdiff(&["simulate", "--config", "run.toml", "--ds", "ds.json", "--out-dir", "run"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = p.join("run");
    for f in ["snapshot_000000.csv", "snapshot_000002.csv", "snapshot_000005.csv", "diagnostics.csv", "mesh.txt", "config.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "simulate");

    let diag = csv_rows(&run.join("diagnostics.csv"));
    assert_eq!(diag.len(), 6);
    let (r0, b0) = (num(&diag[0][2]), num(&diag[0][3]));
    for row in &diag {
        assert!((num(&row[2]) - r0).abs() < 1e-12);
        assert!((num(&row[3]) - b0).abs() < 1e-12);
    }
}

#[test]
fn missing_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagdiff(&["simulate", "--config", "nope.toml", "--ds", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagdiff(&["compute", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagdiff(&["validate", "--steps", "20"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("[FAIL]"));
}
