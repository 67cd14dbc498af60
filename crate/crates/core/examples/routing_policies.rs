//! Routing policies on the video-QA replicas: sticky routing keeps each
//! video's frames on one replica, random routing thrashes both caches.

use caisim::cli::{sweep, SweepAxis};
use caisim::Scenario;

fn main() -> caisim::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig9_routing.json");
    let scenario = Scenario::load(&path)?;
    let axis = SweepAxis::parse("routing.kind", "STICKY,RANDOM,ROUND_ROBIN,CACHE_AWARE");
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "policy", "mm_hit%", "p25_s", "p50_s", "p95_s");
    for cell in sweep(&scenario, &[axis], 4)? {
        let l = cell.report.latency_s.expect("requests completed");
        println!(
            "{:<12} {:>8.1} {:>8.2} {:>8.2} {:>8.2}",
            cell.values[0].as_str().unwrap(),
            cell.report.mm_hit_rate_pct,
            l.p25,
            l.p50,
            l.p95
        );
    }
    Ok(())
}
