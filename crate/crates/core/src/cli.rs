//! Command implementations behind the `caisim` binary: run, sweep,
//! compare and validate. Each returns a process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

use crate::engine::run_scenario;
use crate::error::{Result, SimError};
use crate::metrics::{export_timeline_csv, MetricsReport};
use crate::scenario::{parse_value, Scenario};
use crate::validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

/// Exit code for an error: 2 for scenario problems, 3 for runtime aborts.
pub fn exit_code(err: &SimError) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_ABORT
    }
}

fn fail(err: &SimError) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}

/// Any failure to load a scenario, including a missing file, is a
/// configuration error.
fn load(path: &Path) -> std::result::Result<Scenario, i32> {
    Scenario::load(path).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}

/// Runs one scenario and writes `report.json` and `timeline.csv` to `out`
/// (the scenario's directory when `None`).
pub fn cmd_run(scenario_path: &Path, out: Option<&Path>) -> i32 {
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (report, timeline) = match run_scenario(&scenario) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let dir = out.map_or_else(|| scenario.base_dir.clone(), Path::to_path_buf);
    let written = std::fs::create_dir_all(&dir)
        .map_err(|e| SimError::io(&dir, e))
        .and_then(|_| report.export_json(&dir.join("report.json")))
        .and_then(|_| export_timeline_csv(&timeline, report.devices.len(), &dir.join("timeline.csv")));
    if let Err(e) = written {
        return fail(&e);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", report.summary_line());
    EXIT_OK
}

/// One axis of a sweep: a dotted scenario path and its values.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<Value>,
}

impl SweepAxis {
    /// `values` is a comma-separated list; each item is parsed as JSON
    /// and falls back to a string.
    pub fn parse(path: &str, values: &str) -> Self {
        Self {
            path: path.to_string(),
            values: values.split(',').map(|v| parse_value(v.trim())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub values: Vec<Value>,
    pub report: MetricsReport,
}

/// Runs the cross product of `axes` (first axis outermost). Cells run on
/// up to `jobs` threads; results come back in grid order regardless.
pub fn sweep(scenario: &Scenario, axes: &[SweepAxis], jobs: usize) -> Result<Vec<SweepCell>> {
    let mut grid: Vec<Vec<Value>> = vec![Vec::new()];
    for axis in axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    // build every cell first so a bad path fails before any run
    let cells: Vec<(Vec<Value>, Scenario)> = grid
        .into_iter()
        .map(|values| {
            let mut s = scenario.clone();
            for (axis, v) in axes.iter().zip(&values) {
                s = s.with_override(&axis.path, v.clone())?;
            }
            Ok((values, s))
        })
        .collect::<Result<_>>()?;
    let run = |(values, s): &(Vec<Value>, Scenario)| -> Result<SweepCell> {
        let (report, _) = run_scenario(s)?;
        Ok(SweepCell {
            values: values.clone(),
            report,
        })
    };
    if jobs <= 1 {
        return cells.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimError::config("jobs", e.to_string()))?;
    pool.install(|| cells.par_iter().map(run).collect())
}

fn csv_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `axis[,axis2],p90_s,p99_s,energy_wh` with one row per cell.
pub fn heatmap_csv(axes: &[SweepAxis], cells: &[SweepCell]) -> String {
    let mut out = String::new();
    for a in axes {
        write!(out, "{},", a.path).unwrap();
    }
    out.push_str("p90_s,p99_s,energy_wh\n");
    for c in cells {
        for v in &c.values {
            write!(out, "{},", csv_value(v)).unwrap();
        }
        let (p90, p99) = c
            .report
            .latency_s
            .map_or((String::new(), String::new()), |l| (l.p90.to_string(), l.p99.to_string()));
        writeln!(out, "{p90},{p99},{}", c.report.energy_wh).unwrap();
    }
    out
}

pub fn cmd_sweep(scenario_path: &Path, axes: &[SweepAxis], out: Option<&Path>, jobs: usize) -> i32 {
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cells = match sweep(&scenario, axes, jobs) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let dir = out.map_or_else(|| scenario.base_dir.clone(), Path::to_path_buf);
    let path = dir.join("heatmap.csv");
    let written = std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(&path, heatmap_csv(axes, &cells)))
        .map_err(|e| SimError::io(&path, e));
    if let Err(e) = written {
        return fail(&e);
    }
    for c in &cells {
        let vals: Vec<String> = c.values.iter().map(csv_value).collect();
        println!("[{}] {}", vals.join(", "), c.report.summary_line());
    }
    println!("wrote {}", path.display());
    EXIT_OK
}

pub const TAG_MIN_ENERGY: &str = "Min. Energy";
pub const TAG_MIN_LATENCY: &str = "Min. Latency";
pub const TAG_MIN_POWER: &str = "Min. Power";
pub const TAG_MIN_COST: &str = "Min. Cost";

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub energy_wh: f64,
    pub e2e_s: f64,
    pub p99_power_w: f64,
    pub cost_usd: f64,
    pub tags: Vec<&'static str>,
}

/// Tags the minimum of each column; every tied row gets the tag.
pub fn compare(reports: &[MetricsReport]) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = reports
        .iter()
        .map(|r| CompareRow {
            name: r.scenario.clone(),
            energy_wh: r.energy_wh,
            e2e_s: r.e2e_makespan_s,
            p99_power_w: r.p99_power_w,
            cost_usd: r.cost_usd,
            tags: Vec::new(),
        })
        .collect();
    type Column = (&'static str, fn(&CompareRow) -> f64);
    let columns: [Column; 4] = [
        (TAG_MIN_ENERGY, |r| r.energy_wh),
        (TAG_MIN_LATENCY, |r| r.e2e_s),
        (TAG_MIN_POWER, |r| r.p99_power_w),
        (TAG_MIN_COST, |r| r.cost_usd),
    ];
    for (tag, get) in columns {
        let min = rows.iter().map(get).fold(f64::INFINITY, f64::min);
        for r in rows.iter_mut() {
            if get(r) <= min + 1e-9 * min.abs() {
                r.tags.push(tag);
            }
        }
    }
    rows
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
    let mut out = format!(
        "{:<width$}  {:>11}  {:>11}  {:>13}  {:>9}  note\n",
        "scenario", "energy_wh", "e2e_s", "p99_power_w", "cost_usd"
    );
    for r in rows {
        writeln!(
            out,
            "{:<width$}  {:>11.2}  {:>11.1}  {:>13.1}  {:>9.2}  {}",
            r.name,
            r.energy_wh,
            r.e2e_s,
            r.p99_power_w,
            r.cost_usd,
            r.tags.join(", ")
        )
        .unwrap();
    }
    out
}

/// Runs every scenario (failures do not stop the rest) and prints the
/// comparison of those that succeeded.
pub fn cmd_compare(paths: &[PathBuf]) -> i32 {
    if paths.len() < 2 {
        eprintln!("error: compare needs at least two scenarios");
        return EXIT_CONFIG;
    }
    let mut reports = Vec::new();
    let mut code = EXIT_OK;
    for p in paths {
        let Ok(s) = load(p) else {
            code = code.max(EXIT_CONFIG);
            continue;
        };
        match run_scenario(&s) {
            Ok((r, _)) => reports.push(r),
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                code = code.max(exit_code(&e));
            }
        }
    }
    print!("{}", compare_table(&compare(&reports)));
    code
}

pub fn cmd_validate(scenario_dir: Option<&Path>) -> i32 {
    let dir = scenario_dir.map_or_else(validate::default_scenario_dir, Path::to_path_buf);
    let results = validate::run_all(&dir);
    for r in &results {
        println!("{r}");
    }
    if results.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_VALIDATION_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, energy: f64, e2e: f64, power: f64, cost: f64) -> MetricsReport {
        let mut r: MetricsReport = serde_json::from_value(serde_json::json!({
            "scenario": name, "seed": 0, "completed": 0, "unfinished": 0, "latency_s": null,
            "e2e_makespan_s": e2e, "energy_wh": energy, "devices": [], "p99_power_w": power,
            "p99_power_total_w": power, "cost_usd": cost, "kv_hit_rate_pct": 0.0,
            "avg_block_lifetime_s": 0.0, "block_lifetime_defined": false, "kv_evictions": 0,
            "kv_admission_failures": 0, "mm_hit_rate_pct": 0.0, "mm_evictions": 0, "mm_rejected": 0,
            "dominance": {"cpu_frac": 1.0, "gpu_frac": 0.0}, "peak_dram_bytes": 0, "dram_spills": 0,
            "events": 0, "warnings": [], "stage_mean_s": {}, "scenario_echo": null
        }))
        .unwrap();
        r.scenario = name.into();
        r
    }

    #[test]
    fn compare_tags_minima() {
        let rows = compare(&[report("a", 10.0, 5.0, 300.0, 1.0), report("b", 8.0, 6.0, 400.0, 2.0)]);
        assert_eq!(rows[0].tags, [TAG_MIN_LATENCY, TAG_MIN_POWER, TAG_MIN_COST]);
        assert_eq!(rows[1].tags, [TAG_MIN_ENERGY]);
    }

    #[test]
    fn compare_reports_ties() {
        let rows = compare(&[report("a", 1.0, 1.0, 1.0, 1.0), report("b", 1.0, 1.0, 1.0, 1.0)]);
        assert!(rows.iter().all(|r| r.tags.len() == 4));
    }

    #[test]
    fn sweep_axis_parsing() {
        let a = SweepAxis::parse("devices.gpu0.freq_mhz", "300, 570,OPTIMIZED");
        assert_eq!(a.values, [serde_json::json!(300), serde_json::json!(570), serde_json::json!("OPTIMIZED")]);
    }
}
