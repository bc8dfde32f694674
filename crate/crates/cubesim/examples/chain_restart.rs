//! Chain boot through the cyclic restart ring: only payload1 starts Active;
//! after three unanswered probes it restarts payload3, which then restarts
//! payload2 the same way.
//!
//! ```bash
//! cargo run -p cubesim --example chain_restart
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
    let scenario = Scenario::load(&scenario_path("chain_restart.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");

    println!("probe timeouts and restarts:");
    for event in output.timeline.events() {
        let text = &event.detail;
        if text.starts_with("probe target=") && text.contains("outcome=alive") {
            continue; // keep the output focused on the failures
        }
        match event.kind {
            cubesim::TimelineKind::Timeout if text.starts_with("probe") => {
                println!(
                    "  t={:>9}us  {} missed heartbeat: {}",
                    event.time, event.node, text
                );
            }
            cubesim::TimelineKind::Restart => {
                println!("  t={:>9}us  {} RESTARTS {}", event.time, event.node, text);
            }
            _ => {}
        }
    }

    println!("\nfinal lifecycle states:");
    for (node, state) in &output.final_states {
        println!("  {:<12} {}", node.to_string(), state);
    }
}
