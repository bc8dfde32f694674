//! Telecommand deferral: a command uplinked between payload1's bus slots is
//! stored during a brief other_async_commands excursion and executed inside
//! its next CAN ownership.
//!
//! ```bash
//! cargo run -p cubesim --example telecommand_deferral
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
    let scenario = Scenario::load(&scenario_path("telecommand.scn")).expect("scenario loads");
    let output = run_scenario(&scenario).expect("scenario runs");
    let p1 = NodeId::from("payload1");

    let delivered = output
        .timeline
        .of_kind(TimelineKind::Deliver)
        .find(|e| e.node == p1 && e.detail.contains("topic=/telecommand"))
        .expect("command delivered");
    println!("command received at t={}us", delivered.time);

    for iv in output
        .timeline
        .run_state_intervals(&p1, "other_async_commands")
    {
        if iv.start == delivered.time {
            println!(
                "  excursion to other_async_commands [{} .. {}]us",
                iv.start, iv.end
            );
        }
    }

    let executed = output
        .timeline
        .events()
        .iter()
        .find(|e| e.node == p1 && e.detail.starts_with("command executed"))
        .expect("command executed");
    println!("command executed at t={}us", executed.time);

    for (node, iv) in output.timeline.ownership_intervals() {
        if node == p1 && iv.contains(executed.time) {
            println!(
                "  inside payload1's ownership [{} .. {}]us",
                iv.start, iv.end
            );
        }
    }
}
