//! A hand-written workflow DAG: two CPU stages fan out from a parser and
//! join at a GPU stage. Scenarios can describe any such graph.

use caisim::{run_scenario, Scenario};
use serde_json::json;

fn main() -> caisim::Result<()> {
    let cpu = |cores| json!({"CPU": {"cores": cores}});
    let raw = json!({
        "seed": 1,
        "horizon": 600.0,
        "workload": {"kind": "CUSTOM", "params": {"stages": [
            {"id": "parse", "kind": "VECTOR_SEARCH", "resource": cpu(1), "service_model": {"fixed_time": 0.2}},
            {"id": "lookup", "kind": "VECTOR_SEARCH", "resource": cpu(2), "service_model": {"fixed_time": 1.5}, "depends_on": ["parse"]},
            {"id": "tools", "kind": "EVALUATE", "resource": cpu(1), "service_model": {"fixed_time": 0.8}, "depends_on": ["parse"]},
            {"id": "answer", "kind": "LLM", "resource": {"GPU": {"group": "llm"}}, "service_model": {"compute_time": 2.0}, "depends_on": ["lookup", "tools"]}
        ]}},
        "devices": [{"id": "gpu0", "profile": "h100_sxm"}],
        "load": {"kind": "POISSON", "rate": 0.2}
    });
    let here = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let scenario = Scenario::from_value(raw, &here, "custom_fan_in")?;
    let (r, _) = run_scenario(&scenario)?;
    println!("{}", r.summary_line());
    for (stage, mean) in &r.stage_mean_s {
        println!("  {stage:<7} mean {mean:.2} s");
    }
    Ok(())
}
