use std::path::Path;
use std::process::{Command, Output};

fn hetlmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetlmf")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const MINIMAL: &str = r#"{
  "groups": [{"count": 1, "intensity": {"rule": "equal", "mass": 1.0}, "law": {"kind": "degenerate"}}],
  "steps": 10000
}"#;

const MIXED: &str = r#"{
  "groups": [
    {"count": 4, "intensity": {"rule": "equal", "mass": 0.6}, "law": {"kind": "pareto", "alpha": 1.5}},
    {"count": 3, "intensity": {"rule": "explicit", "values": [0.1, 0.1, 0.1]}, "law": {"kind": "exponential", "decay_length": 4.0}},
    {"count": 1, "intensity": {"rule": "equal", "mass": 0.1}, "law": {"kind": "tabulated", "pmf": [[1, 0.5], [3, 0.5]]}}
  ],
  "steps": 20000,
  "replicas": 2,
  "seed": 11,
  "lags": "1..50"
}"#;

#[test]
fn simulate_writes_indexed_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", MINIMAL);
    let out = d.path().join("run");
    let o = hetlmf(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--save-signs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let files: Vec<String> = serde_json::from_value(manifest["files"].clone()).unwrap();
    for f in ["acf.csv", "theory.csv", "metaorders_r0.csv", "signs_r0.bin", "signs_r0.bin.json"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from manifest");
        assert!(out.join(f).exists());
    }
    assert!(out.join("manifest.json").exists());
    let acf = std::fs::read_to_string(out.join("acf.csv")).unwrap();
    assert!(acf.starts_with("lag,value"));
    let signs = std::fs::read(out.join("signs_r0.bin")).unwrap();
    assert_eq!(signs.len(), 10_000);
    assert!(signs.iter().all(|&b| b == 1 || b == 0xff));
}

#[test]
fn heterogeneous_config_runs_with_overrides() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", MIXED);
    let out = d.path().join("run");
    let o = hetlmf(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--replicas", "3", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 3);
    assert!(out.join("metaorders_r2.csv").exists());
    let acf = std::fs::read_to_string(out.join("acf.csv")).unwrap();
    assert_eq!(acf.lines().count(), 51);
    assert!(acf.starts_with("lag,value,stderr"));
}

#[test]
fn theory_prints_csv() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", MIXED);
    let o = hetlmf(&["theory", "--config", &cfg, "--lags", "1,10,100"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lag,value,kind");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("100,") && lines[3].ends_with(",exact"));
}

#[test]
fn calibrate_reports_json() {
    let d = tempfile::tempdir().unwrap();
    let mut csv = String::from("lag,value\n");
    for l in (100..=10_000).step_by(100) {
        csv.push_str(&format!("{l},{}\n", 0.05 * (l as f64).powf(-0.5)));
    }
    let p = write(d.path(), "acf.csv", &csv);
    let o = hetlmf(&["calibrate", "--acf", &p]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["mu"], 0.8);
    assert_eq!(r["mu_source"], "default");
    assert!((r["gamma"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    // gamma = 0.99 means alpha = 1.99, where the bound degenerates.
    let o = hetlmf(&["calibrate", "--acf", &p, "--gamma", "0.99"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2_with_location() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    let cases = [
        (r#"{"groups": [], "steps": 10000}"#, "groups"),
        (MINIMAL.replace("10000", "10").as_str(), "steps"),
        (MINIMAL.replace("degenerate", "gaussian").as_str(), "groups[0].law"),
        (MINIMAL.replace("\"steps\"", "\"stesp\"").as_str(), "stesp"),
        ("{ not json", "line 1"),
    ]
    .map(|(t, w)| (t.to_string(), w));
    for (text, needle) in &cases {
        let cfg = write(d.path(), "bad.json", text);
        let o = hetlmf(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{err} lacks {needle}");
    }
    let o = hetlmf(&["simulate", "--config", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(hetlmf(&["experiment", "fig9", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn experiment_preset_writes_report() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("b");
    let o = hetlmf(&["experiment", "bounds", "--out", out.to_str().unwrap(), "--steps", "100"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["preset"], "bounds");
    assert_eq!(r["violations"], 0);
    assert!(out.join("report.json").exists());
    assert!(out.join("bounds.csv.json").exists());
}
