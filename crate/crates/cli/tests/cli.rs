// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> String {
    root().join("configs").join(name).display().to_string()
}

fn twinbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinbeam")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Rows of a CSV document as header-keyed maps of numbers.
fn rows(csv: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = csv.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn field(row: &[(String, String)], key: &str) -> f64 {
    row.iter().find(|(k, _)| k == key).unwrap().1.parse().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

#[test]
fn lumped_optimize_default() {
    let o = twinbeam(&["lumped-optimize"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &rows(&stdout(&o))[0];
    assert!((field(r, "G") - 1.23).abs() < 0.01);
    assert_eq!(field(r, "T_b"), 1.0);
    assert!((field(r, "gemellity_dB") + 2.77).abs() < 0.05);

    let fine = twinbeam(&["lumped-optimize", "--grid-step", "0.001"]);
    let f = &rows(&stdout(&fine))[0];
    for key in ["G", "T_a", "T_b"] {
        assert!((field(r, key) - field(f, key)).abs() < 1e-3, "{key}");
    }
}

#[test]
fn lumped_optimize_rejects_bad_step() {
    for step in ["0", "-0.1"] {
        let o = twinbeam(&["lumped-optimize", "--grid-step", step]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("--grid-step"), "{}", stderr(&o));
    }
}

#[test]
fn sweep_shows_dip_and_gain() {
    let o = twinbeam(&["--config", &config("sweep.toml"), "sweep-delta"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("delta_MHz,G_a,G_b,sum,gemellity_dB\n"));
    let rs = rows(&text);
    assert_eq!(rs.len(), 151);
    assert!(rs.iter().any(|r| field(r, "delta_MHz") < 0.0 && field(r, "G_a") < 0.2));
    assert!(rs.iter().any(|r| field(r, "G_a") > 1.0));
}

#[test]
fn sweep_without_atoms_is_flat() {
    let o = twinbeam(&["--config", &config("depth0.toml"), "sweep-delta"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in rows(&stdout(&o)) {
        assert_eq!(field(&r, "G_a"), 1.0);
        assert_eq!(field(&r, "G_b"), 0.0);
    }
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[atom]\nDelta_MHz = 800\nOmega_MHz = 420\nopticaldepth = 500\n").unwrap();
    let o = twinbeam(&["--config", path.to_str().unwrap(), "sweep-delta"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("opticaldepth"), "{}", stderr(&o));

    let o = twinbeam(&["--config", &config("beat_limit.toml"), "sweep-delta"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[atom]"));
}

#[test]
fn beam_splitter_json_report() {
    let o = twinbeam(&["--config", &config("sweep.toml"), "--format", "json", "beam-splitter"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&o);
    let meta = &doc["metadata"];
    assert_eq!(meta["command"], "beam-splitter");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert!(meta["seed"].is_null());
    let r = &doc["result"];
    for key in ["delta_MHz", "G_a", "G_b", "sum", "F_a", "F_b", "C_ab", "gemellity", "gemellity_dB"] {
        assert!(r[key].is_number(), "{key}");
    }
    assert!((r["sum"].as_f64().unwrap() - 1.0).abs() < 0.01);
    assert!(r["gemellity"].as_f64().unwrap() < 1.0);
    assert!(r["delta_MHz"].as_f64().unwrap() < 0.0);
}

#[test]
fn beam_splitter_without_crossing() {
    let o = twinbeam(&["--config", &config("sweep.toml"), "beam-splitter", "--window-lo-mhz", "10", "--window-hi-mhz", "50"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no G_a + G_b = 1 crossing"), "{}", stderr(&o));
}

#[test]
fn beat_limit_is_reproducible() {
    let cfg = config("beat_limit.toml");
    let a = twinbeam(&["--config", &cfg, "--seed", "7", "beat-limit"]);
    let b = twinbeam(&["--config", &cfg, "--seed", "7", "--workers", "1", "beat-limit"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let r = &rows(&stdout(&a))[0];
    assert!(field(r, "gemellity_dB") < -2.8);
    assert!((field(r, "G_a") + field(r, "G_b") - 1.0).abs() <= 0.01);
    assert!(!stderr(&a).contains("warning"));
}

#[test]
fn beat_limit_profile_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("best.toml");
    let o = twinbeam(&["--format", "json", "beat-limit", "--save-profile", profile.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no --seed"));
    let doc = json(&o);
    assert!(doc["metadata"]["seed"].is_u64());
    assert!(doc["metadata"]["config_sha256"].is_null());
    assert_eq!(doc["result"]["segments"].as_array().unwrap().len(), 2);
    let saved = twinbeam::propagation::SlabProfile::load(&profile).unwrap();
    assert_eq!(saved.segments().len(), 2);
}

#[test]
fn beat_limit_rejects_infeasible_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loose.toml");
    fs::write(&path, "[beat_limit]\nepsilon = 0.5\n").unwrap();
    let o = twinbeam(&["--config", path.to_str().unwrap(), "--seed", "1", "beat-limit"]);
    assert_eq!(o.status.code(), Some(2));
    let o = twinbeam(&["--seed", "1", "beat-limit", "--segments", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_demonstration_file() {
    let o = twinbeam(&["--config", &config("demo_analyze.toml"), "analyze"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &rows(&stdout(&o))[0];
    assert!((field(r, "gemellity_dB") + 1.80).abs() < 0.10);
    assert_eq!(field(r, "analysis_freq_Hz"), 1e6);

    let traces = root().join("data/demo_traces.csv");
    let o = twinbeam(&[
        "--format", "json", "analyze", traces.to_str().unwrap(), "--probe-frac", "0.65", "--conj-frac", "0.35", "--freq", "2e6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&o);
    assert_eq!(doc["result"]["summary"]["analysis_freq_hz"], 2e6);
    assert!(!doc["result"]["traces"].as_array().unwrap().is_empty());
}

#[test]
fn analyze_requires_sql_trace() {
    let dir = tempfile::tempdir().unwrap();
    let full = fs::read_to_string(root().join("data/demo_traces.csv")).unwrap();
    let stripped: String = full.lines().filter(|l| !l.contains(",sql,")).map(|l| format!("{l}\n")).collect();
    let path = dir.path().join("no_sql.csv");
    fs::write(&path, stripped).unwrap();
    let o = twinbeam(&["analyze", path.to_str().unwrap(), "--probe-frac", "0.65", "--conj-frac", "0.35"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sql"), "{}", stderr(&o));
}

#[test]
fn outputs_are_deterministic_and_inputs_untouched() {
    let cfg = config("sweep.toml");
    let before = fs::read(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    for (out, workers) in [(&out1, "1"), (&out2, "3")] {
        let o = twinbeam(&["--config", &cfg, "--out", out.to_str().unwrap(), "--workers", workers, "sweep-delta"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    assert_eq!(fs::read(&cfg).unwrap(), before);
}
