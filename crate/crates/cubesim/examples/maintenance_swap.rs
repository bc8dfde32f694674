//! In-flight node replacement: payload3 ships without CAN access; a
//! maintenance command swaps in a CAN-enabled build faster than the ring's
//! three-strike restart, so no restart ever fires.
//!
//! ```bash
//! cargo run -p cubesim --example maintenance_swap
//! ```

use cubesim::harness::run_scenario;
use cubesim::scenario::Scenario;
use cubesim::timeline::TimelineKind;
use cubesim::NodeId;

use std::path::PathBuf;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn main() {
    let scenario = Scenario::load(&scenario_path("maintenance_race.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");
    let p3 = NodeId::from("payload3");

    println!("payload3 story:");
    for event in output.timeline.events() {
        let interesting = (event.node == p3
            && (event.kind == TimelineKind::Acquire
                || event.detail.contains("can-disabled")
                || event.detail.starts_with("spawned")))
            || event.detail.starts_with("maintenance replace")
            || (event.kind == TimelineKind::Timeout && event.detail.contains("target=payload3"));
        if interesting {
            println!(
                "  t={:>9}us  {:<11} {} {}",
                event.time,
                event.node.to_string(),
                event.kind,
                event.detail
            );
        }
    }

    println!("\nrestarts fired: {}", output.timeline.restarts().len());
    println!("payload3 final state: {}", output.final_states[&p3]);
}
