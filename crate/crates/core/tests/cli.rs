use std::path::{Path, PathBuf};
use std::process::Command;

use fracmag::config::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracmag"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn shipped_configs_match_presets() {
    for name in ["desk", "smoke"] {
        let loaded = ExperimentConfig::load(&config_path(name)).unwrap();
        let mut preset = ExperimentConfig::preset(name).unwrap();
        preset.base_dir = loaded.base_dir.clone();
        assert_eq!(loaded, preset, "{name}");
    }
}

#[test]
fn forward_writes_tables_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["forward", "--level", "1", "--config"])
        .arg(config_path("desk"))
        .arg("--out")
        .arg(out.path())
        .env("FRACMAG_THREADS", "1")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["solution.csv", "dtn.csv", "monitors.csv", "checks.csv", "manifest.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "forward");
    assert_eq!(manifest["pass"], true);
    assert_eq!(manifest["grid_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn missing_config_exits_with_config_code() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["verify", "--config", "/nonexistent/experiment.toml", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let record = std::fs::read_to_string(out.path().join("error.json")).unwrap();
    assert!(record.contains("\"exit_code\": 2"));
}

#[test]
fn window_inside_domain_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.geometry.w1.lo = vec![0.5];
    cfg.geometry.w1.hi = vec![0.9];
    let path = write_config(dir.path(), &cfg);
    let status = bin().args(["forward", "--config"]).arg(&path).arg("--out").arg(dir.path().join("run")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_thread_cap_exits_with_config_code() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["verify", "--suite", "torsion", "--config"])
        .arg(config_path("desk"))
        .arg("--out")
        .arg(out.path())
        .env("FRACMAG_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.run.tolerances.torsion = 1e-9;
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let status = bin().args(["verify", "--suite", "torsion", "--config"]).arg(&path).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let checks = std::fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(checks.contains("false"));
}

#[test]
fn runge_table_is_nonincreasing() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["runge", "--level", "2", "--config"])
        .arg(config_path("desk"))
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(out.path().join("runge.csv")).unwrap();
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.len() > 4);
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn identical_config_and_seed_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["verify", "--suite", "duality", "--seed", "11", "--config"])
            .arg(config_path("desk"))
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        (std::fs::read(out.join("duality.csv")).unwrap(), std::fs::read(out.join("checks.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn zero_control_gives_zero_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.controls.as_mut().unwrap().forward.amplitude = 0.0;
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let status = bin().args(["forward", "--level", "1", "--config"]).arg(&path).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "value").unwrap();
    for line in text.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn missing_window_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = ExperimentConfig::desk().to_toml().replace("[geometry.w1]\nlo = [4.0]\nhi = [5.0]\n", "");
    let path = dir.path().join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    let status = bin().args(["forward", "--config"]).arg(&path).arg("--out").arg(dir.path().join("run")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
