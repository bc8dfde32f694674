//! Scripted fault injection: build a scenario inline, drop a couple of
//! probes, corrupt an uplink, and watch the counters rise and reset without
//! ever reaching the restart threshold.
//!
//! ```bash
//! cargo run -p cubesim --example fault_injection
//! ```

use cubesim::harness::run_scenario;
use cubesim::scenario::Scenario;
use cubesim::timeline::TimelineKind;

fn main() {
    let scenario = Scenario::from_toml_str(
        r#"
name = "fault_demo"
seed = 99
timing_period_us = 1_000_000
run_duration_us = 9_500_000

[[payloads]]
id = "payload1"
device_id = 0x101

[[payloads]]
id = "payload2"
device_id = 0x102

[[payloads]]
id = "payload3"
device_id = 0x103

# Swallow the next two probes aimed at payload3's liveness service.
[[faults]]
kind = "drop_probe"
target = "payload3"
at_us = 1
count = 2

# Flip one bit in the next uplinked packet.
[[faults]]
kind = "corrupt_uplink"
target = "ttc"
at_us = 3_000_000

[[uplinks]]
at_us = 3_200_000
packet = { kind = "payload_command", target = 2, args_hex = "c0ffee" }
"#,
    )
    .expect("scenario is valid");

    let output = run_scenario(&scenario).expect("scenario runs");

    println!("probe outcomes for payload1 -> payload3:");
    for event in output.timeline.events() {
        let relevant = event.detail.contains("probe dropped (fault)")
            || (event.node.as_str() == "payload1"
                && event.detail.contains("target=payload3")
                && (event.kind == TimelineKind::Timeout || event.detail.contains("outcome=alive")));
        if relevant {
            println!(
                "  t={:>9}us  {:<9} {}",
                event.time,
                event.node.to_string(),
                event.detail
            );
        }
    }
    println!(
        "\nrestarts fired: {} (two drops stay below the three-strike threshold)",
        output.timeline.restarts().len()
    );

    println!("\nuplink corruption:");
    for event in output.timeline.events() {
        if event.detail.contains("uplink corrupted") || event.detail.contains("uplink-crc-error") {
            println!("  t={:>9}us  {}", event.time, event.detail);
        }
    }
    println!(
        "telecommands that made it through: {}",
        output.timeline.publishes_on("/telecommand").len()
    );
}
