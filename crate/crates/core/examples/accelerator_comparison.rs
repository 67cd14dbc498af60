//! The evolutionary-search workload on each accelerator profile, with the
//! cheapest, fastest, lowest-energy and lowest-power setups tagged.

use caisim::cli::{compare, compare_table};
use caisim::validate::TABLE1_SCENARIOS;
use caisim::{run_scenario, Scenario};

fn main() -> caisim::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let reports = TABLE1_SCENARIOS
        .iter()
        .map(|n| Ok(run_scenario(&Scenario::load(&dir.join(format!("{n}.json")))?)?.0))
        .collect::<caisim::Result<Vec<_>>>()?;
    print!("{}", compare_table(&compare(&reports)));
    Ok(())
}
