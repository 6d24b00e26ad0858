//! End-to-end tests of the command-line interface, driving the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_cotplane")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cotplane-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_prints_summary_and_succeeds() {
    let out = run(&["simulate", "--scenario", scenario("minimal.json").to_str().unwrap(), "--horizon", "50"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("minimal"));
    assert!(stdout.contains("#1"));
}

#[test]
fn missing_scenario_flag_is_invalid_input() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scenario"));
}

#[test]
fn broken_scenario_reports_category_2() {
    let dir = temp_dir("badscenario");
    let path = dir.join("cycle.json");
    std::fs::write(
        &path,
        r#"{
            "machines": [{"id": 1, "cpu_capacity": 4000, "mem_capacity": 4096}],
            "services": [{"id": 1, "name": "a", "profile": "Cpu", "base_service_rate": 10.0,
                          "cpu_request": 100, "mem_request": 128, "downstream": [1]}],
            "workload": {"inline": [[0, 1.0]]}
        }"#,
    )
    .unwrap();
    let out = run(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn rca_eval_with_oracle_reports_perfect_scores() {
    let out = run(&[
        "rca-eval",
        "--scenario",
        scenario("sockshop.json").to_str().unwrap(),
        "--policy",
        "oracle",
        "--cases",
        "10",
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("precision 1.000000"), "{stdout}");
    assert!(stdout.contains("recall    1.000000"));
    assert!(stdout.contains("accuracy  1.000000"));
}

#[test]
fn gather_writes_carrier_document() {
    let dir = temp_dir("gather");
    let out_path = dir.join("carrier.json");
    let out = run(&[
        "gather",
        "--scenario",
        scenario("minimal.json").to_str().unwrap(),
        "--ticks",
        "60",
        "--k",
        "3",
        "--seed",
        "5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(value["clusters"].as_array().is_some());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_rebuilds_identical_csv_from_artifacts() {
    let dir = temp_dir("report");
    let run_dir = dir.join("run");
    let out = run(&[
        "sched-eval",
        "--scenario",
        scenario("ramp.json").to_str().unwrap(),
        "--policy",
        "threshold",
        "--horizon",
        "250",
        "--interval",
        "10",
        "--seed",
        "8",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rebuilt = dir.join("rebuilt.csv");
    let out = run(&[
        "report",
        "--in-dir",
        run_dir.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        rebuilt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let original = std::fs::read(run_dir.join("report.csv")).unwrap();
    let again = std::fs::read(&rebuilt).unwrap();
    assert_eq!(original, again, "report re-emission must reproduce the bytes");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gathered_carrier_feeds_sched_eval() {
    let dir = temp_dir("carrierflow");
    let carrier_path = dir.join("carrier.json");
    let out = run(&[
        "gather",
        "--scenario",
        scenario("ramp.json").to_str().unwrap(),
        "--ticks",
        "100",
        "--k",
        "4",
        "--seed",
        "21",
        "--out",
        carrier_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run_dir = dir.join("run");
    let out = run(&[
        "sched-eval",
        "--scenario",
        scenario("ramp.json").to_str().unwrap(),
        "--policy",
        "threshold",
        "--horizon",
        "250",
        "--interval",
        "10",
        "--seed",
        "21",
        "--carrier",
        carrier_path.to_str().unwrap(),
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("report.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn misaligned_horizon_fails_with_category_2() {
    let dir = temp_dir("badhorizon");
    let out = run(&[
        "sched-eval",
        "--scenario",
        scenario("ramp.json").to_str().unwrap(),
        "--horizon",
        "123",
        "--interval",
        "10",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unreachable_http_endpoint_fails_with_category_4() {
    let dir = temp_dir("httpcfg");
    let cfg = dir.join("config.json");
    std::fs::write(
        &cfg,
        r#"{"http": {"endpoint": "http://127.0.0.1:9/complete", "timeout_secs": 0.3, "retry_count": 0}}"#,
    )
    .unwrap();
    let out = run(&[
        "rca-eval",
        "--scenario",
        scenario("minimal.json").to_str().unwrap(),
        "--policy",
        "http",
        "--cases",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn reward_check_passes_and_prints_lines() {
    let out = run(&["reward-check", "--pairs", "200", "--seed", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in ["s_pod     PASS", "f_beta    PASS", "r_base    PASS", "r_result  PASS"] {
        assert!(stdout.contains(line), "{stdout}");
    }
}

#[test]
fn train_offline_writes_checkpoint_and_log() {
    let dir = temp_dir("train");
    let out = run(&[
        "train-offline",
        "--scenario",
        scenario("minimal.json").to_str().unwrap(),
        "--dataset-size",
        "6",
        "--seed",
        "2",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("checkpoint.json").exists());
    let log = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,objective,mean_r_total"));
    assert!(log.lines().count() > 1);
    std::fs::remove_dir_all(&dir).ok();
}
