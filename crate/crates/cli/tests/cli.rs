use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mimotrack"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mimotrack-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON: {line}: {e}"))
}

#[test]
fn validate_config_resolves_defaults() {
    let dir = scratch("validate");
    let path = dir.join("c.toml");
    std::fs::write(&path, "seed = 9\nruns = 4\n").unwrap();
    let out = bin().args(["validate-config", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["runs"], 4);
    assert_eq!(cfg["radars"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_config_reports_json_error() {
    let dir = scratch("bad");
    let path = dir.join("c.json");
    std::fs::write(&path, r#"{"no_such_field": 1}"#).unwrap();
    let err = error_json(&bin().args(["validate-config", "--config"]).arg(&path).output().unwrap());
    assert!(err["error"].is_string());
    assert!(err["message"].as_str().unwrap().contains("no_such_field"));

    let err = error_json(&bin().args(["validate-config", "--config", "/nonexistent/c.json"]).output().unwrap());
    assert!(err["message"].is_string());
}

#[test]
fn usage_errors_are_json() {
    let err = error_json(&bin().args(["montecarlo", "--algo", "nope"]).output().unwrap());
    assert_eq!(err["error"], "usage");
}

#[test]
fn montecarlo_rejects_single_run() {
    let dir = scratch("mc1");
    let err = error_json(&bin().args(["montecarlo", "--runs", "1", "--out"]).arg(&dir).output().unwrap());
    assert!(err["message"].as_str().unwrap().contains("2 runs"));
}

#[test]
fn snr_map_writes_grid() {
    let dir = scratch("snr");
    let path = dir.join("c.json");
    std::fs::write(&path, r#"{"snr_grid": {"x_min": 0, "x_max": 20, "y_min": 10, "y_max": 30, "step": 10}}"#).unwrap();
    let out = bin().args(["snr-map", "--config"]).arg(&path).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.join("snr_map.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,snr_r0,snr_r1,snr_r2,snr_max");
    assert_eq!(lines.count(), 9);
}

#[test]
fn simulate_writes_outputs_and_dump() {
    let dir = scratch("sim");
    let path = dir.join("c.json");
    // One pulse per second keeps the track to a few dozen pulses.
    std::fs::write(&path, r#"{"track": {"preset": "track-b-like", "pulse_rate": 1.0}, "snr_grid": {"x_min": 0, "x_max": 10, "y_min": 10, "y_max": 20, "step": 10}}"#).unwrap();
    let out = bin()
        .args(["simulate", "--seed", "3", "--algo", "both", "--dump-pulse", "2", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "truth.csv", "mrblat_track.csv", "kf_track.csv", "snr_map.csv", "summary.json", "bus.jsonl"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(!dir.join("rmse.csv").exists());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["nodes_agree"], true);
    let pulses = summary["pulses"].as_u64().unwrap();
    assert_eq!(std::fs::read_to_string(dir.join("bus.jsonl")).unwrap().lines().count() as u64, 3 * pulses);

    let dump = std::fs::read(dir.join("obs_r1_p2.bin")).unwrap();
    let rows = u64::from_le_bytes(dump[0..8].try_into().unwrap());
    let cols = u64::from_le_bytes(dump[8..16].try_into().unwrap());
    assert_eq!(rows, 9);
    assert_eq!(dump.len() as u64, 16 + rows * cols * 8);
}
