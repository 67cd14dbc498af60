//! CPU vs GPU dominance for the three workloads, plus a short slice of the
//! RAG utilization timeline under Poisson load.

use caisim::metrics::dominance;
use caisim::{run_scenario, Scenario};
use serde_json::json;

fn main() -> caisim::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in ["fig2_dominance_rag", "fig2_dominance_video_qa", "fig2_dominance_openevolve"] {
        let (r, _) = run_scenario(&Scenario::load(&dir.join(format!("{name}.json")))?)?;
        println!("{name:<28} cpu {:.2}  gpu {:.2}", r.dominance.cpu_frac, r.dominance.gpu_frac);
    }

    let loaded = Scenario::load(&dir.join("fig2_dominance_rag.json"))?
        .with_override("load", json!({"kind": "POISSON", "rate": 0.3}))?
        .with_override("horizon", json!(120.0))?;
    let (_, timeline) = run_scenario(&loaded)?;
    println!("\nRAG at 0.3 QPS: dominance {:?}", dominance(&timeline)?);
    println!("{:>5} {:>8} {:>8}", "t", "cpu%", "gpu%");
    for s in timeline.iter().take(40) {
        println!("{:>5} {:>8.1} {:>8.1}", s.t, s.cpu_util, s.gpu_util[0]);
    }
    Ok(())
}
