//! Parallelism: once a payload releases the bus and starts processing, the
//! next payload can occupy the bus at the same time. payload2's long data
//! processing here overlaps payload3's bus usage.
//!
//! ```bash
//! cargo run -p cubesim --example parallel_processing
//! ```

use cubesim::harness::run_scenario;
use cubesim::scenario::Scenario;
use cubesim::NodeId;

use std::path::PathBuf;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn main() {
    let scenario = Scenario::load(&scenario_path("parallel.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");

    let p2 = NodeId::from("payload2");
    let p3 = NodeId::from("payload3");
    let processing = output.timeline.run_state_intervals(&p2, "data_processing");
    let occupying = output.timeline.run_state_intervals(&p3, "occupying_can");

    println!("payload2 data_processing intervals:");
    for iv in &processing {
        println!("  [{:>9} .. {:>9}]us", iv.start, iv.end);
    }
    println!("payload3 occupying_can intervals:");
    for iv in &occupying {
        println!("  [{:>9} .. {:>9}]us", iv.start, iv.end);
    }

    for p in &processing {
        for o in &occupying {
            if p.overlaps(o) {
                println!(
                    "\noverlap: payload2 was processing [{} .. {}] while payload3 held the bus [{} .. {}]",
                    p.start, p.end, o.start, o.end
                );
                return;
            }
        }
    }
    println!("\nno overlap found (unexpected for this scenario)");
}
