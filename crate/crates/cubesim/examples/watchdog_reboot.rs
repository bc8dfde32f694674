//! Watchdog starvation: the timing node dies, feeding stops, and one reboot
//! of the whole management computer brings every node back; telemetry
//! resumes on the fresh instances.
//!
//! ```bash
//! cargo run -p cubesim --example watchdog_reboot
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
    let scenario = Scenario::load(&scenario_path("watchdog_reboot.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");

    let feeds: Vec<u64> = output
        .timeline
        .events()
        .iter()
        .filter(|e| e.detail.starts_with("watchdog_feed"))
        .map(|e| e.time.micros())
        .collect();
    println!("watchdog feeds at: {feeds:?}");

    for t in output.timeline.reboots() {
        println!("SYSTEM REBOOT at t={t}us");
    }

    let reboot = output.timeline.reboots()[0];
    let resumed: Vec<String> = output
        .timeline
        .events()
        .iter()
        .filter(|e| e.time > reboot && e.detail.starts_with("record stored"))
        .map(|e| format!("t={}us {}", e.time, e.detail))
        .collect();
    println!("\ntelemetry after the reboot:");
    for line in resumed {
        println!("  {line}");
    }
}
