//! Nominal operations: three payloads time-sharing the CAN bus over ten
//! timing cycles, one telemetry record per grant.
//!
//! ```bash
//! cargo run -p cubesim --example normal_day
//! ```

use cubesim::harness::run_scenario;
use cubesim::scenario::Scenario;
use cubesim::stats::format_table;

use std::path::PathBuf;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn main() {
    let scenario = Scenario::load(&scenario_path("normal.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");

    println!("scenario: {} (seed {})", output.scenario_name, output.seed);
    println!("timeline rows: {}\n", output.timeline.len());

    println!("grant schedule (one-hot, rotating):");
    for (time, target, generation) in output.timeline.grants() {
        println!(
            "  t={:>9}us  grant -> {:<9} generation {}",
            time,
            target.to_string(),
            generation
        );
    }

    println!("\nbus ownership intervals (never overlapping):");
    for (node, interval) in output.timeline.ownership_intervals() {
        println!(
            "  {:<9} [{:>9} .. {:>9}]us  ({}us on the bus)",
            node.to_string(),
            interval.start,
            interval.end,
            interval.end.micros() - interval.start.micros()
        );
    }

    println!("\npublish->deliver latency per payload topic:");
    print!("{}", format_table(&output.stats));
}
