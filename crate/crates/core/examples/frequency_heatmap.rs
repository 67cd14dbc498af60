//! Per-component SM frequency grid for video QA: p99 latency and energy
//! for every (MM LLM, STT) frequency pair at one arrival rate.
//!
//! Usage: cargo run --example frequency_heatmap [qps]

use caisim::cli::{sweep, SweepAxis};
use caisim::Scenario;
use serde_json::json;

fn main() -> caisim::Result<()> {
    let qps: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.2);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig5_heatmap.json");
    let scenario = Scenario::load(&path)?.with_override("load.rate", json!(qps))?;
    let llm = "300,570,855,1125,1410";
    let stt = "300,570,855,1125,1410";
    let cells = sweep(
        &scenario,
        &[SweepAxis::parse("devices.mm_gpu.freq_mhz", llm), SweepAxis::parse("devices.stt_gpu.freq_mhz", stt)],
        8,
    )?;
    println!("p99 latency (s) / energy (Wh) at {qps} QPS; rows MM LLM MHz, columns STT MHz");
    print!("{:>6}", "");
    for s in stt.split(',') {
        print!("{s:>16}");
    }
    println!();
    for row in cells.chunks(5) {
        print!("{:>6}", row[0].values[0]);
        for c in row {
            let p99 = c.report.latency_s.map_or(f64::NAN, |l| l.p99);
            print!("{:>16}", format!("{p99:.1} / {:.0}", c.report.energy_wh));
        }
        println!();
    }
    Ok(())
}
