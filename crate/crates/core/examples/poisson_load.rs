//! Open-loop Poisson arrivals and nearest-rank latency percentiles for a
//! RAG deployment as the arrival rate grows.

use caisim::loadgen::poisson_arrivals;
use caisim::simcore::rng_substream;
use caisim::{run_scenario, Scenario};
use serde_json::json;

fn main() -> caisim::Result<()> {
    let mut rng = rng_substream(42, "arrivals");
    let s = poisson_arrivals(0.3, 10_000.0, &mut rng)?;
    let mean_gap = s.times.last().unwrap().as_secs() / s.len() as f64;
    println!("{} arrivals in 10000 s, mean gap {mean_gap:.3} s (expected {:.3})", s.len(), 1.0 / 0.3);

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/rag_k_sweep.json");
    let base = Scenario::load(&path)?;
    println!("{:>5} {:>9} {:>8} {:>8} {:>8}", "qps", "completed", "p50_s", "p90_s", "p99_s");
    for rate in [0.05, 0.1, 0.2, 0.3, 0.4] {
        let (r, _) = run_scenario(&base.with_override("load.rate", json!(rate))?)?;
        let l = r.latency_s.expect("requests completed");
        println!("{rate:>5} {:>9} {:>8.2} {:>8.2} {:>8.2}", r.completed, l.p50, l.p90, l.p99);
    }
    Ok(())
}
