//! Wall-clock publish-subscribe latency measurement with concurrent
//! publishers, under light and heavy CPU load.
//!
//! ```bash
//! cargo run --release -p cubesim --example latency_bench
//! ```

use std::time::Duration;

use cubesim::bench::{run_bench, BenchConfig, Load};
use cubesim::stats::format_table;

fn main() {
    for load in [Load::Light, Load::Heavy] {
        let stats = run_bench(&BenchConfig {
            duration: Duration::from_secs(2),
            load,
            payload_count: 3,
            publish_interval: Duration::from_millis(5),
            message_bytes: 64,
        })
        .expect("bench produces samples");
        println!("publish-subscribe latency under {} load:", load.as_str());
        print!("{}", format_table(&stats));
        let counts: Vec<String> = stats.iter().map(|s| s.count.to_string()).collect();
        println!("samples per topic: {}\n", counts.join(" "));
    }
}
