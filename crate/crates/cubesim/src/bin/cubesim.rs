//! Command-line front end: scenario runs, validation, latency statistics,
//! timeline diffing and the wall-clock bench harness.
//!
//! Exit codes: 0 success, 1 validation failure, 2 assertion/divergence,
//! 3 I/O error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use cubesim::bench::{run_bench, BenchConfig, Load};
use cubesim::harness::{run_scenario_with_seed, write_outputs};
use cubesim::scenario::{Scenario, ScenarioError};
use cubesim::stats::{compute_stats, format_table, STATS_CSV_HEADER};
use cubesim::timeline::{diff_lines, DiffResult};

#[derive(Parser)]
#[command(
    name = "cubesim",
    about = "Deterministic CubeSat flight-software simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out).
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Validate a scenario file, printing every violation.
    Validate { scenario: PathBuf },
    /// Compute latency statistics from a samples CSV (`us` per line, or
    /// `name,us` rows for grouped output).
    Stats { samples: PathBuf },
    /// Compare two timeline CSV files.
    Diff { a: PathBuf, b: PathBuf },
    /// Wall-clock publish-subscribe latency benchmark.
    Bench {
        /// Duration in seconds.
        #[arg(long, default_value_t = 10)]
        duration: u64,
        #[arg(long, value_enum, default_value_t = LoadArg::Light)]
        load: LoadArg,
        /// Number of payload topics.
        #[arg(long, default_value_t = 3)]
        payloads: usize,
        /// Publish interval in milliseconds.
        #[arg(long, default_value_t = 10)]
        interval_ms: u64,
        /// Optional stats CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadArg {
    Light,
    Heavy,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, std::io::Error> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
        } => {
            let loaded = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(ScenarioError::Io(e)) => return Err(e),
                Err(err) => {
                    eprintln!("{err}");
                    return Ok(ExitCode::from(1));
                }
            };
            let output = match run_scenario_with_seed(&loaded, seed) {
                Ok(o) => o,
                Err(err) => {
                    eprintln!("{err}");
                    return Ok(ExitCode::from(1));
                }
            };
            let written = write_outputs(&output, &out)?;
            println!(
                "scenario {} seed {} mode {}: {} timeline rows, {} downlink bytes, {} images",
                output.scenario_name,
                output.seed,
                output.mode.as_str(),
                output.timeline.len(),
                output.downlink.len(),
                output.images.len()
            );
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { scenario } => match Scenario::load(&scenario) {
            Ok(s) => {
                println!("ok: scenario {} is valid", s.name);
                Ok(ExitCode::SUCCESS)
            }
            Err(ScenarioError::Io(e)) => Err(e),
            Err(err) => {
                eprintln!("{err}");
                Ok(ExitCode::from(1))
            }
        },
        Command::Stats { samples } => {
            let text = fs::read_to_string(&samples)?;
            match stats_from_csv(&text) {
                Ok(rows) => {
                    println!("{STATS_CSV_HEADER}");
                    for row in &rows {
                        println!("{}", row.csv_row());
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Diff { a, b } => {
            let left = fs::read_to_string(&a)?;
            let right = fs::read_to_string(&b)?;
            match diff_lines(&left, &right) {
                DiffResult::Equal => {
                    println!("equal");
                    Ok(ExitCode::SUCCESS)
                }
                DiffResult::Divergence { line, left, right } => {
                    println!("divergence at line {line}");
                    println!("  left:  {}", left.as_deref().unwrap_or("<eof>"));
                    println!("  right: {}", right.as_deref().unwrap_or("<eof>"));
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Bench {
            duration,
            load,
            payloads,
            interval_ms,
            out,
        } => {
            let config = BenchConfig {
                duration: Duration::from_secs(duration),
                load: match load {
                    LoadArg::Light => Load::Light,
                    LoadArg::Heavy => Load::Heavy,
                },
                payload_count: payloads,
                publish_interval: Duration::from_millis(interval_ms),
                message_bytes: 64,
            };
            let stats = match run_bench(&config) {
                Ok(s) => s,
                Err(err) => {
                    eprintln!("error: {err}");
                    return Ok(ExitCode::from(2));
                }
            };
            println!(
                "publish-subscribe latency under {} load ({}s):",
                config.load.as_str(),
                duration
            );
            print!("{}", format_table(&stats));
            let counts: Vec<String> = stats.iter().map(|s| format!("{}", s.count)).collect();
            println!("samples: {}", counts.join(" "));
            if let Some(path) = out {
                let mut text = String::from(STATS_CSV_HEADER);
                text.push('\n');
                for s in &stats {
                    text.push_str(&s.csv_row());
                    text.push('\n');
                }
                fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Parses `us` or `name,us` rows (header lines ignored) into grouped stats.
fn stats_from_csv(text: &str) -> Result<Vec<cubesim::stats::LatencyStats>, String> {
    let mut groups: std::collections::BTreeMap<String, Vec<u64>> =
        std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = match line.split_once(',') {
            Some((name, value)) => (name.trim().to_string(), value.trim()),
            None => ("samples".to_string(), line),
        };
        match value.parse::<u64>() {
            Ok(us) => groups.entry(name).or_default().push(us),
            Err(_) if lineno == 0 => continue, // header row
            Err(_) => {
                return Err(format!(
                    "line {}: not a microsecond value: {line:?}",
                    lineno + 1
                ))
            }
        }
    }
    if groups.is_empty() {
        return Err("no-samples".into());
    }
    let mut out = Vec::new();
    for (name, samples) in groups {
        out.push(compute_stats(&name, &samples).map_err(|e| e.to_string())?);
    }
    Ok(out)
}
