//! End-to-end tests of the gkdv-lab binary: exit codes, artifact
//! completeness, and bit-level determinism.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gkdv-lab"))
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("gkdv-lab-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Coarse profile grid keeps these tests fast; identities hold at looser
/// tolerance there, so only the artifact machinery is under test.
const SMALL_GRID: [&str; 2] = ["--set", "grid.n=2001"];
const NARROW: [&str; 4] = ["--set", "grid.y_min=-20", "--set", "grid.y_max=20"];

#[test]
fn profiles_run_passes_and_manifest_is_complete() {
    let dir = tmp_dir("profiles");
    let status = bin()
        .args(["profiles", "--out"])
        .arg(&dir)
        .args(SMALL_GRID)
        .args(NARROW)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pass"], serde_json::Value::Bool(true));
    // Every emitted file appears in the manifest with a checksum.
    let listed: BTreeMap<String, String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name != "manifest.json" {
            assert!(listed.contains_key(&name), "{name} missing from manifest");
            assert_eq!(listed[&name].len(), 64);
        }
    }
    assert!(dir.join("profiles.csv").is_file());
    assert!(dir.join("identity_report.json").is_file());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn identical_configs_are_bit_identical() {
    let run = |tag: &str| {
        let dir = tmp_dir(tag);
        let status = bin()
            .args(["reduced", "--out"])
            .arg(&dir)
            .args(SMALL_GRID)
            .args(NARROW)
            .args(["--set", "reduced.snapshots=129", "--set", "reduced.s_end_factor=10"])
            .status()
            .unwrap();
        assert!(status.success());
        let bytes = fs::read(dir.join("trajectory.csv")).unwrap();
        let report = fs::read(dir.join("regime_report.json")).unwrap();
        let _ = fs::remove_dir_all(&dir);
        (bytes, report)
    };
    let a = run("det-a");
    let b = run("det-b");
    assert_eq!(a.0, b.0, "trajectory CSV differs between identical runs");
    assert_eq!(a.1, b.1, "regime report differs between identical runs");
}

#[test]
fn usage_errors_exit_2() {
    let code = bin()
        .args(["profiles", "--set", "nonsense"])
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2));
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[reduced]\nbogus_key = 1\n").unwrap();
    let code = bin()
        .args(["reduced", "--config"])
        .arg(&cfg)
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn experiment_failure_exits_1() {
    let dir = tmp_dir("fail");
    // An unknown experiment name is an experiment error (the config
    // parsed fine).
    let out = bin()
        .args(["frobnicate", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn shoot_reduced_small_budget() {
    let dir = tmp_dir("shoot");
    let status = bin()
        .args(["shoot", "--out"])
        .arg(&dir)
        .args(SMALL_GRID)
        .args(NARROW)
        .args([
            "--set",
            "shoot.budget=9",
            "--set",
            "shoot.grid_n=3",
            "--set",
            "shoot.boundary_per_side=8",
            "--set",
            "shoot.s_max_factor=30",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("shoot_report.json")).unwrap()).unwrap();
    assert_eq!(report["winding"], serde_json::json!(1));
    let exit_map = fs::read_to_string(dir.join("exit_map.csv")).unwrap();
    assert!(exit_map.starts_with("lambda0,b0,s_star,F,G,angle,status"));
    assert_eq!(exit_map.lines().count(), 10);
    assert!(dir.join("refine_log.jsonl").is_file());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn sweep_and_report_aggregate() {
    let root = tmp_dir("sweeproot");
    let status = bin()
        .args(["sweep", "--param", "beta", "--values", "0.4,0.5", "--out"])
        .arg(&root)
        .args(SMALL_GRID)
        .args(NARROW)
        .args([
            "--set",
            "experiment.name=reduced",
            "--set",
            "reduced.snapshots=257",
            "--set",
            "reduced.s_end_factor=100",
            "--workers",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("sweep_joined.csv").is_file());
    assert!(root.join("sweep_000/manifest.json").is_file());
    assert!(root.join("sweep_001/manifest.json").is_file());

    // Aggregate the sweep members.
    let report_dir = root.join("report");
    let status = bin()
        .args(["report", "--out"])
        .arg(&report_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().count() >= 3, "{summary}");
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn empty_sweep_is_success() {
    let out = bin()
        .args(["sweep", "--param", "beta", "--values", ""])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_file_round_trip() {
    let dir = tmp_dir("cfg");
    let cfg_path = dir.join("run.toml");
    fs::write(
        &cfg_path,
        "[experiment]\nname = \"reduced\"\n[reduced]\nbeta = 0.25\ns_end_factor = 10.0\nsnapshots = 65\n[grid]\nn = 2001\ny_min = -20.0\ny_max = 20.0\n",
    )
    .unwrap();
    let out_dir = dir.join("out");
    let status = bin()
        .args(["reduced", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["reduced"]["beta"], serde_json::json!(0.25));
    let _ = fs::remove_dir_all(&dir);
}

fn find_check<'a>(manifest: &'a serde_json::Value, name: &str) -> &'a serde_json::Value {
    manifest["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("check {name} missing"))
}

#[test]
fn tail_coarse_run() {
    let dir = tmp_dir("tail");
    let status = bin()
        .args(["tail", "--out"])
        .arg(&dir)
        .args(SMALL_GRID)
        .args(NARROW)
        .args([
            "--set",
            "pde.x_min=-512",
            "--set",
            "pde.x_max=512",
            "--set",
            "pde.n=8192",
            "--set",
            "tail.t_end=4",
            "--set",
            "tail.cutoff_start=350",
            "--set",
            "tail.cutoff_width=40",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(find_check(&manifest, "l2_drift_rel")["pass"], serde_json::json!(true));
    assert_eq!(find_check(&manifest, "decay_slope")["pass"], serde_json::json!(true));
    let _ = fs::remove_dir_all(&dir);
}
