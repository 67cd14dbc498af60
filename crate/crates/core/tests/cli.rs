use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caisim::validate;
use serde_json::{json, Value};
use tempfile::TempDir;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn scenario(name: &str) -> PathBuf {
    manifest().join("scenarios").join(format!("{name}.json"))
}

fn caisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caisim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copies the shipped scenarios and profiles so they can be tampered with.
fn shipped_copy() -> TempDir {
    let tmp = TempDir::new().unwrap();
    for sub in ["scenarios", "profiles"] {
        std::fs::create_dir(tmp.path().join(sub)).unwrap();
        for e in std::fs::read_dir(manifest().join(sub)).unwrap() {
            let p = e.unwrap().path();
            std::fs::copy(&p, tmp.path().join(sub).join(p.file_name().unwrap())).unwrap();
        }
    }
    tmp
}

fn edit_json(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn run_writes_report_and_timeline() {
    let out = TempDir::new().unwrap();
    let o = caisim(&["run", scenario("rag_closed_loop").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("rag_closed_loop: p99="));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["completed"], 20);
    assert_eq!(report["scenario_echo"]["workload"]["kind"], "RAG");
    let csv = std::fs::read_to_string(out.path().join("timeline.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,cpu_util,gpu0_util,gpu0_power,dram_used");
}

#[test]
fn run_output_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = caisim(&["run", scenario("fig9_routing").to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success());
    }
    for f in ["report.json", "timeline.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn bad_field_is_a_config_error_with_its_path() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(scenario("rag_closed_loop")).unwrap()).unwrap();
    v["cpu"]["corez"] = json!(4);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = caisim(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cpu"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_is_a_config_error() {
    let o = caisim(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_a_grid() {
    let out = TempDir::new().unwrap();
    let o = caisim(&[
        "sweep",
        scenario("fig5_heatmap").to_str().unwrap(),
        "--axis",
        "devices.mm_gpu.freq_mhz",
        "--values",
        "300,1410",
        "--axis2",
        "devices.stt_gpu.freq_mhz",
        "--values2",
        "300,1410",
        "--jobs",
        "4",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.path().join("heatmap.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "devices.mm_gpu.freq_mhz,devices.stt_gpu.freq_mhz,p90_s,p99_s,energy_wh");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("300,300,"));
    assert!(lines[4].starts_with("1410,1410,"));
}

#[test]
fn sweep_rejects_unknown_axis() {
    let o = caisim(&["sweep", scenario("rag_closed_loop").to_str().unwrap(), "--axis", "devices.nope.freq_mhz", "--values", "300"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_tags_and_keeps_going_past_failures() {
    let table1: Vec<String> = validate::TABLE1_SCENARIOS
        .iter()
        .map(|n| scenario(n).to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["compare"];
    args.extend(table1.iter().map(String::as_str));
    let o = caisim(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = |name: &str| text.lines().find(|l| l.starts_with(name)).unwrap().to_string();
    assert!(row("table1_a100_tp1 ").ends_with("Min. Cost"));
    assert!(row("table1_h200_tp1 ").ends_with("Min. Energy"));
    assert!(row("table1_h200_tp2 ").ends_with("Min. Latency"));
    assert!(row("table1_l40s_tp2 ").ends_with("Min. Power"));

    args.push("/nonexistent/scenario.json");
    let o = caisim(&args);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).lines().count(), 8);
}

#[test]
fn compare_of_identical_scenarios_ties_everything() {
    let p = scenario("rag_closed_loop");
    let o = caisim(&["compare", p.to_str().unwrap(), p.to_str().unwrap()]);
    assert!(o.status.success());
    for line in stdout(&o).lines().skip(1) {
        assert!(line.ends_with("Min. Energy, Min. Latency, Min. Power, Min. Cost"), "{line}");
    }
}

#[test]
fn compare_needs_two_scenarios() {
    let o = caisim(&["compare", scenario("rag_closed_loop").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn profile_dir_env_overrides_lookup() {
    let tmp = shipped_copy();
    edit_json(&tmp.path().join("profiles/h100_sxm.json"), |v| v["price_per_hour"] = json!(3600.0));
    let out = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_caisim"))
        .args(["run", scenario("rag_closed_loop").to_str().unwrap(), "--out", out.path().to_str().unwrap()])
        .env("CAISIM_PROFILE_DIR", tmp.path().join("profiles"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    let makespan = report["e2e_makespan_s"].as_f64().unwrap();
    assert!((report["cost_usd"].as_f64().unwrap() - makespan).abs() < 1e-6);
}

#[test]
fn tampered_price_fails_the_cost_check() {
    let tmp = shipped_copy();
    let dir = tmp.path().join("scenarios");
    assert!(validate::criterion_1(&dir).pass);
    edit_json(&tmp.path().join("profiles/a100_pcie_80gb.json"), |v| v["price_per_hour"] = json!(0.60));
    let r = validate::criterion_1(&dir);
    assert!(!r.pass);
    assert!(r.detail.contains("NOT table1_a100_tp1 cost"), "{}", r.detail);
}

#[test]
fn cache_too_small_for_reuse_fails_the_routing_check() {
    let tmp = shipped_copy();
    let dir = tmp.path().join("scenarios");
    edit_json(&dir.join("fig9_routing.json"), |v| v["caches"]["mm_capacity_bytes"] = json!(5_000_000_000u64));
    let r = validate::criterion_5(&dir);
    assert!(!r.pass, "{}", r.detail);
}

#[test]
fn validate_reports_one_line_per_criterion() {
    // a missing directory keeps this fast: every criterion fails to load
    let o = caisim(&["validate", "--scenarios", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(1));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 8);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("criterion {} [", i + 1)), "{l}");
    }
}
