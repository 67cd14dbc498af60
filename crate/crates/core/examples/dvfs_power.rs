//! Frequency scaling on one device: service time, power draw and energy at
//! each operating point, then a mid-run frequency change in a scenario.

use caisim::resources::{service_time_at, AcceleratorProfile, StageServiceModel, WorkVector};
use caisim::{run_scenario, Scenario};
use serde_json::json;

fn main() -> caisim::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let a100 = AcceleratorProfile::load(&root.join("profiles/a100_pcie_80gb.json"))?;
    let model = StageServiceModel {
        per_frame_encode: 0.0103,
        per_token_decode: 0.01,
        ..Default::default()
    };
    let work = WorkVector {
        uncached_frames: 100,
        decode_tokens: 100,
        ..Default::default()
    };
    println!("{:>6} {:>9} {:>8} {:>10}", "MHz", "service_s", "active_W", "energy_J");
    for p in &a100.freq_table {
        let t = service_time_at(&model, p.perf_scale, &work);
        println!("{:>6} {:>9.2} {:>8.0} {:>10.0}", p.mhz, t, p.active_w, t * p.active_w);
    }

    let base = Scenario::load(&root.join("scenarios/fig5_heatmap.json"))?.with_override("load.rate", json!(0.2))?;
    let capped = base.with_override(
        "frequency_changes",
        json!([{"at": 1500.0, "device": "mm_gpu", "mhz": 855}]),
    )?;
    for (label, s) in [("max throughout", &base), ("855 MHz after 1500 s", &capped)] {
        let (r, _) = run_scenario(s)?;
        println!("{label:<22} p99 {:>6.2} s  energy {:>6.1} Wh", r.latency_s.unwrap().p99, r.energy_wh);
    }
    Ok(())
}
