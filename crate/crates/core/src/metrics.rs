//! Percentiles, dominance, energy and cost accounting, and report export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Nearest-rank percentile: the sorted value at 1-based rank `ceil(p/100 n)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(SimError::EmptyInput("percentile"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(SimError::InvalidPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(sorted.len(), p)])
}

/// Zero-based index of the nearest-rank element.
fn nearest_rank(n: usize, p: f64) -> usize {
    // p/100*n can land a hair above an integer (e.g. 0.29*100)
    let rank = (p / 100.0 * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Several percentiles of one sample, sorting once.
pub fn percentiles(values: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(SimError::EmptyInput("percentile"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ps.iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 100.0) {
                return Err(SimError::InvalidPercentile(p));
            }
            Ok(sorted[nearest_rank(sorted.len(), p)])
        })
        .collect()
}

/// Watt-hours of a piecewise-constant power signal. Each breakpoint's
/// power holds until the next breakpoint; the last one only closes the
/// interval.
pub fn energy_wh(breakpoints: &[(f64, f64)]) -> Result<f64> {
    let mut joules = 0.0;
    for (i, w) in breakpoints.windows(2).enumerate() {
        let dt = w[1].0 - w[0].0;
        if dt < 0.0 {
            return Err(SimError::UnsortedBreakpoints(i + 1));
        }
        joules += w[0].1 * dt;
    }
    Ok(joules / 3600.0)
}

/// USD for holding every device for `makespan_s`.
pub fn cost(makespan_s: f64, prices_per_hour: &[f64]) -> f64 {
    prices_per_hour.iter().map(|p| p * makespan_s / 3600.0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub t: f64,
    pub cpu_util: f64,
    pub gpu_util: Vec<f64>,
    pub gpu_power: Vec<f64>,
    pub dram_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub cpu_frac: f64,
    pub gpu_frac: f64,
}

/// Share of samples where the busiest GPU is strictly above the CPU.
/// Ties, including idle samples, count for the CPU.
pub fn dominance(timeline: &[TimelineSample]) -> Result<Dominance> {
    if timeline.is_empty() {
        return Err(SimError::EmptyInput("dominance"));
    }
    let gpu = timeline
        .iter()
        .filter(|s| s.gpu_util.iter().copied().fold(f64::NEG_INFINITY, f64::max) > s.cpu_util)
        .count();
    let gpu_frac = gpu as f64 / timeline.len() as f64;
    Ok(Dominance {
        cpu_frac: (timeline.len() - gpu) as f64 / timeline.len() as f64,
        gpu_frac,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p25: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
}

impl LatencySummary {
    pub fn from_latencies(latencies: &[f64]) -> Option<Self> {
        let p = percentiles(latencies, &[25.0, 50.0, 90.0, 95.0, 99.0]).ok()?;
        // fixed-order sum so the mean is reproducible
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        Some(Self {
            p25: p[0],
            p50: p[1],
            p90: p[2],
            p95: p[3],
            p99: p[4],
            mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub id: String,
    pub group: String,
    pub profile: String,
    pub freq_mhz: f64,
    pub energy_wh: f64,
    pub busy_s: f64,
    pub kv_hit_rate_pct: f64,
    pub mm_hit_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub completed: u64,
    pub unfinished: u64,
    /// `None` when no request completed.
    pub latency_s: Option<LatencySummary>,
    pub e2e_makespan_s: f64,
    pub energy_wh: f64,
    pub devices: Vec<DeviceReport>,
    /// P99 over samples of the highest per-GPU draw (device power / tp).
    pub p99_power_w: f64,
    /// P99 over samples of the summed draw of all devices.
    pub p99_power_total_w: f64,
    pub cost_usd: f64,
    pub kv_hit_rate_pct: f64,
    pub avg_block_lifetime_s: f64,
    pub block_lifetime_defined: bool,
    pub kv_evictions: u64,
    pub kv_admission_failures: u64,
    pub mm_hit_rate_pct: f64,
    pub mm_evictions: u64,
    pub mm_rejected: u64,
    pub dominance: Dominance,
    pub peak_dram_bytes: u64,
    pub dram_spills: u64,
    pub events: u64,
    pub warnings: Vec<String>,
    /// Stage name to mean service seconds, for inspection.
    pub stage_mean_s: BTreeMap<String, f64>,
    pub scenario_echo: serde_json::Value,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::config("report", e.to_string()))
    }

    pub fn export_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| SimError::io(path, e))
    }

    /// One-line summary for terminals.
    pub fn summary_line(&self) -> String {
        let p99 = self
            .latency_s
            .map_or_else(|| "n/a".to_string(), |l| format!("{:.3}s", l.p99));
        format!(
            "{}: p99={} energy={:.2}Wh cost=${:.2} kv_hit={:.1}% mm_hit={:.1}% completed={} unfinished={}",
            self.scenario,
            p99,
            self.energy_wh,
            self.cost_usd,
            self.kv_hit_rate_pct,
            self.mm_hit_rate_pct,
            self.completed,
            self.unfinished
        )
    }
}

/// Timeline as CSV: `t,cpu_util,gpu0_util..,gpu0_power..,dram_used`.
pub fn timeline_csv(timeline: &[TimelineSample], n_gpus: usize) -> String {
    let mut out = String::from("t,cpu_util");
    for i in 0..n_gpus {
        write!(out, ",gpu{i}_util").unwrap();
    }
    for i in 0..n_gpus {
        write!(out, ",gpu{i}_power").unwrap();
    }
    out.push_str(",dram_used\n");
    for s in timeline {
        write!(out, "{},{}", s.t, s.cpu_util).unwrap();
        for u in &s.gpu_util {
            write!(out, ",{u}").unwrap();
        }
        for p in &s.gpu_power {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{}", s.dram_used).unwrap();
    }
    out
}

pub fn export_timeline_csv(timeline: &[TimelineSample], n_gpus: usize, path: &Path) -> Result<()> {
    std::fs::write(path, timeline_csv(timeline, n_gpus)).map_err(|e| SimError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cpu: f64, gpus: &[f64]) -> TimelineSample {
        TimelineSample {
            t: 0.0,
            cpu_util: cpu,
            gpu_util: gpus.to_vec(),
            gpu_power: vec![0.0; gpus.len()],
            dram_used: 0,
        }
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 10.0);
        assert_eq!(percentile(&v, 10.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 10.0);
        assert_eq!(percentile(&[5.0], 37.0).unwrap(), 5.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0).unwrap(), 2.0);
        assert!(matches!(percentile(&[], 50.0), Err(SimError::EmptyInput(_))));
        assert!(matches!(percentile(&v, 0.0), Err(SimError::InvalidPercentile(_))));
        assert!(percentile(&v, 100.5).is_err());
    }

    #[test]
    fn percentile_exact_rank_boundaries() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 29.0).unwrap(), 29.0);
        assert_eq!(percentile(&v, 57.0).unwrap(), 57.0);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_wh(&[(0.0, 100.0), (3600.0, 100.0)]).unwrap(), 100.0);
        assert_eq!(energy_wh(&[(0.0, 0.0), (50.0, 0.0)]).unwrap(), 0.0);
        assert!((energy_wh(&[(0.0, 117.0), (1600.0, 0.0)]).unwrap() - 52.0).abs() < 1e-12);
        assert!(matches!(
            energy_wh(&[(0.0, 1.0), (5.0, 1.0), (4.0, 1.0)]),
            Err(SimError::UnsortedBreakpoints(2))
        ));
        assert_eq!(energy_wh(&[]).unwrap(), 0.0);
    }

    #[test]
    fn cost_examples() {
        assert!((cost(2292.0, &[0.52]) - 0.331).abs() < 5e-4);
        assert!((cost(1307.0, &[4.38]) - 1.59).abs() < 5e-3);
        assert_eq!(cost(0.0, &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn dominance_examples() {
        let all_cpu = vec![sample(80.0, &[20.0]); 5];
        let d = dominance(&all_cpu).unwrap();
        assert_eq!((d.cpu_frac, d.gpu_frac), (1.0, 0.0));
        let tie = [sample(0.0, &[0.0])];
        assert_eq!(dominance(&tie).unwrap().cpu_frac, 1.0);
        let mixed = [sample(10.0, &[0.0, 100.0]), sample(10.0, &[0.0, 0.0])];
        assert_eq!(dominance(&mixed).unwrap().gpu_frac, 0.5);
        assert!(dominance(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let tl = [sample(50.0, &[100.0, 0.0]), sample(0.0, &[0.0, 0.0])];
        let csv = timeline_csv(&tl, 2);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,cpu_util,gpu0_util,gpu1_util,gpu0_power,gpu1_power,dram_used");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn latency_summary_ordered() {
        let v: Vec<f64> = (0..57).map(|i| f64::from(i * 7 % 13)).collect();
        let s = LatencySummary::from_latencies(&v).unwrap();
        assert!(s.p25 <= s.p50 && s.p50 <= s.p90 && s.p90 <= s.p95 && s.p95 <= s.p99);
        assert!(LatencySummary::from_latencies(&[]).is_none());
    }
}
