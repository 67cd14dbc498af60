//! Replays arrival timestamps from a trace file instead of a generator.

use std::io::Write;

use caisim::loadgen::load_trace;
use caisim::{run_scenario, Scenario};
use serde_json::json;

fn main() -> caisim::Result<()> {
    let dir = std::env::temp_dir().join("caisim_trace_replay");
    std::fs::create_dir_all(&dir).map_err(|e| caisim::SimError::io(&dir, e))?;
    let trace = dir.join("arrivals.txt");
    let mut f = std::fs::File::create(&trace).map_err(|e| caisim::SimError::io(&trace, e))?;
    // a burst of five, a pause, then a steady trickle
    for t in [0.0, 0.1, 0.2, 0.3, 0.4, 60.0, 75.0, 90.0, 105.0, 120.0] {
        writeln!(f, "{t}").map_err(|e| caisim::SimError::io(&trace, e))?;
    }
    drop(f);
    println!("{} arrivals in trace", load_trace(&trace)?.len());

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/rag_closed_loop.json");
    let s = Scenario::load(&path)?.with_override("load", json!({"kind": "TRACE", "path": trace}))?;
    let (r, _) = run_scenario(&s)?;
    println!("{}", r.summary_line());
    Ok(())
}
