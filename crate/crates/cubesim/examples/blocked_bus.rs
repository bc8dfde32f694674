//! Bus blocking: payload2 overruns its slot by 1.5 periods, the switch
//! publishes nothing for exactly one tick, then hands the bus to payload3.
//! The rotation resumes without skipping anyone.
//!
//! ```bash
//! cargo run -p cubesim --example blocked_bus
//! ```

use cubesim::harness::run_scenario;
use cubesim::scenario::Scenario;

use std::path::PathBuf;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn main() {
    let scenario = Scenario::load(&scenario_path("blocked.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");

    let ticks = output.timeline.publishes_on("/timing").len();
    let grants = output.timeline.grants();
    println!(
        "ticks: {ticks}, grants: {} (one tick blocked)\n",
        grants.len()
    );

    for event in output.timeline.events() {
        if event.detail.contains("blocked: bus owned by") {
            println!("  t={:>9}us  {} {}", event.time, event.node, event.detail);
        }
    }

    println!("\ngrant order (no payload skipped):");
    for (time, target, _) in &grants {
        println!("  t={:>9}us  -> {}", time, target);
    }

    let after_block = grants
        .iter()
        .find(|(t, _, _)| t.micros() > 3_000_000)
        .expect("a grant after the block");
    println!("\nfirst grant after the blocked tick: {}", after_block.1);
}
