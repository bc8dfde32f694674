//! Scenario execution: builds the node roster from a scenario, runs the
//! simulation to its configured duration, and collects all artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant};

use crate::bus::DeliveryModel;
use crate::can::DeviceModel;
use crate::imaging::{
    extended_methods, standard_methods, AcquisitionBehavior, ImagingConfig, ProcessingBehavior,
};
use crate::lifecycle::{LifecycleState, TransitionKind};
use crate::node::NodeId;
use crate::nodes::{
    MaintenanceBehavior, PayloadBehavior, PayloadConfig, SwitchBehavior, TimingBehavior,
    TimingConfig, TtcBehavior, TtcConfig,
};
use crate::scenario::{parse_failure_mode, parse_hex, parse_mode, Scenario, ScenarioError};
use crate::sim::{ClockMode, Sim, SimConfig, StoredImage};
use crate::stats::{compute_stats, LatencyStats, STATS_CSV_HEADER};
use crate::time::SimTime;
use crate::timeline::Timeline;

pub struct RunOutput {
    pub scenario_name: String,
    pub seed: u64,
    pub mode: ClockMode,
    pub timeline: Timeline,
    pub stats: Vec<LatencyStats>,
    pub downlink: Vec<u8>,
    pub images: Vec<StoredImage>,
    pub final_states: BTreeMap<NodeId, LifecycleState>,
}

/// Builds the simulation world for a validated scenario. Exposed so tests
/// can inspect or extend the world before running it.
pub fn build_sim(scenario: &Scenario, seed_override: Option<u64>) -> Result<Sim, ScenarioError> {
    scenario.validate()?;
    let seed = seed_override.unwrap_or(scenario.seed);
    let mode = parse_mode(&scenario.mode).expect("validated");
    let mut sim = Sim::new(SimConfig {
        scenario_name: scenario.name.clone(),
        seed,
        mode,
        delivery: DeliveryModel {
            base_delay_us: scenario.delivery.base_delay_us,
            jitter_bound_us: scenario.delivery.jitter_bound_us,
        },
        watchdog_enabled: scenario.watchdog_enabled(),
        watchdog_timeout_us: scenario.watchdog_timeout_us(),
        respawn_delay_us: scenario.respawn_delay_us.unwrap_or(100_000),
        reboot_delay_us: scenario.reboot_delay_us.unwrap_or(500_000),
    });

    let payload_ids: Vec<NodeId> = scenario
        .payloads
        .iter()
        .map(|p| NodeId::from(p.id.as_str()))
        .collect();

    // Frozen per-payload configs, captured by the behavior templates.
    let mut payload_cfgs: BTreeMap<NodeId, PayloadConfig> = BTreeMap::new();
    for (index, p) in scenario.payloads.iter().enumerate() {
        let id = NodeId::from(p.id.as_str());
        payload_cfgs.insert(
            id.clone(),
            PayloadConfig {
                id: id.clone(),
                index,
                payload_byte: (index + 1) as u8,
                device_id: p.device_id,
                can_enabled: true,
                await_timeout_us: p.await_timeout_us,
                processing_delay_us: p.processing_delay_us,
                command_delay_us: p.command_delay_us,
            },
        );
        sim.can_add_device(DeviceModel {
            device_id: p.device_id,
            response_delay_us: p.response_delay_us,
            response_payload: parse_hex(&p.response_payload_hex).expect("validated"),
            failure_mode: parse_failure_mode(&p.failure_mode).expect("validated"),
        });
    }

    let imaging = scenario.imaging_cfg();
    let imaging_cfg = ImagingConfig {
        width: imaging.width,
        height: imaging.height,
        image_seed: seed ^ 0x1ACE_D065_0000_0000,
        method_duration_us: imaging.method_duration_us,
        server_budget_us: imaging.budget_us,
    };

    // Behavior templates: every role the maintenance mechanism or the
    // supervisor may need to rebuild.
    let period = scenario.timing_period_us;
    sim.register_template(
        "timing",
        Rc::new(move |_| {
            Some(Box::new(TimingBehavior::new(TimingConfig { period_us: period })) as _)
        }),
    );
    let rotation = payload_ids.clone();
    sim.register_template(
        "switch",
        Rc::new(move |_| Some(Box::new(SwitchBehavior::new(rotation.clone())) as _)),
    );
    let ttc_cfg = TtcConfig {
        payload_ids: payload_ids.clone(),
        imaging_enabled: imaging.enabled,
        imaging_budget_us: imaging.budget_us,
    };
    sim.register_template(
        "ttc",
        Rc::new(move |_| Some(Box::new(TtcBehavior::new(ttc_cfg.clone())) as _)),
    );
    sim.register_template(
        "maintenance",
        Rc::new(|_| Some(Box::new(MaintenanceBehavior::new()) as _)),
    );
    let acq_cfg = imaging_cfg.clone();
    sim.register_template(
        "img_acq",
        Rc::new(move |_| Some(Box::new(AcquisitionBehavior::new(acq_cfg.clone())) as _)),
    );
    let duration = imaging.method_duration_us;
    sim.register_template(
        "img_proc",
        Rc::new(move |_| Some(Box::new(ProcessingBehavior::new(standard_methods(duration))) as _)),
    );
    sim.register_template(
        "img_proc_ext",
        Rc::new(move |_| Some(Box::new(ProcessingBehavior::new(extended_methods(duration))) as _)),
    );
    // Payload templates share the frozen config map and differ in CAN access.
    for (template, can_enabled) in [
        ("payload_v1", true),
        ("payload_no_can", false),
        ("can_enabled_v2", true),
    ] {
        let cfgs = payload_cfgs.clone();
        sim.register_template(
            template,
            Rc::new(move |id: &NodeId| {
                let mut cfg = cfgs.get(id)?.clone();
                cfg.can_enabled = can_enabled;
                Some(Box::new(PayloadBehavior::new(cfg)) as _)
            }),
        );
    }

    // Spawn the fixed roster, then the payloads in declaration order.
    let core: [(&str, &str); 6] = [
        ("timing", "timing"),
        ("switch", "switch"),
        ("ttc", "ttc"),
        ("maintenance", "maintenance"),
        ("img_acq", "img_acq"),
        ("img_proc", "img_proc"),
    ];
    for (name, template) in core {
        if !imaging.enabled && name.starts_with("img_") {
            continue;
        }
        let id = NodeId::from(name);
        sim.set_factory(&id, template);
        let behavior = sim.build_from_factory(&id).expect("core template");
        sim.spawn(&id, behavior);
    }
    for p in &scenario.payloads {
        let id = NodeId::from(p.id.as_str());
        sim.set_factory(&id, &p.behavior);
        let behavior = sim.build_from_factory(&id).expect("validated template");
        sim.spawn(&id, behavior);
        sim.set_transition_delay(&id, p.transition_delay_us);
    }

    if scenario.ring_enabled() {
        let order: Vec<NodeId> = scenario
            .ring_order()
            .iter()
            .map(|s| NodeId::from(s.as_str()))
            .collect();
        sim.configure_ring(
            order,
            scenario.probe_timeout_us(),
            scenario.probe_threshold(),
        );
    }

    // Bring the roster up: core nodes always, payloads per configuration.
    for (name, _) in core {
        if !imaging.enabled && name.starts_with("img_") {
            continue;
        }
        let id = NodeId::from(name);
        sim.request_transition(&id, TransitionKind::Configure)
            .expect("core configure");
        sim.request_transition(&id, TransitionKind::Activate)
            .expect("core activate");
    }
    for p in &scenario.payloads {
        if !p.initially_active {
            continue;
        }
        let id = NodeId::from(p.id.as_str());
        let _ = sim.request_transition(&id, TransitionKind::Configure);
        let _ = sim.request_transition(&id, TransitionKind::Activate);
    }

    sim.arm_watchdog();

    let ttc = NodeId::from("ttc");
    for uplink in &scenario.uplinks {
        let bytes = uplink.packet.build().expect("validated");
        sim.schedule_uplink(&ttc, SimTime(uplink.at_us), bytes);
    }
    let faults = scenario
        .faults
        .iter()
        .map(|f| f.build().expect("validated"))
        .collect();
    sim.schedule_faults(faults);

    Ok(sim)
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    run_scenario_with_seed(scenario, None)
}

pub fn run_scenario_with_seed(
    scenario: &Scenario,
    seed_override: Option<u64>,
) -> Result<RunOutput, ScenarioError> {
    let mut sim = build_sim(scenario, seed_override)?;
    let end = SimTime(scenario.run_duration_us);
    match sim.mode() {
        ClockMode::Deterministic => {
            sim.run_until(end);
        }
        ClockMode::WallClock => run_paced(&mut sim, end),
    }
    sim.finish();
    Ok(collect_output(scenario, seed_override, sim))
}

/// Wall-clock pacing: dispatch each event no earlier than its sim time.
fn run_paced(sim: &mut Sim, end: SimTime) {
    let started = Instant::now();
    while let Some(next) = sim.next_event_time() {
        if next > end {
            break;
        }
        let target = Duration::from_micros(next.micros());
        let elapsed = started.elapsed();
        if target > elapsed {
            std::thread::sleep(target - elapsed);
        }
        sim.run_until(next);
    }
    sim.run_until(end);
}

fn collect_output(scenario: &Scenario, seed_override: Option<u64>, sim: Sim) -> RunOutput {
    let mut stats = Vec::new();
    for (name, samples) in sim.latency_samples() {
        if let Ok(s) = compute_stats(name, samples) {
            stats.push(s);
        }
    }
    let final_states = sim
        .node_ids()
        .into_iter()
        .filter_map(|id| sim.current_state(&id).ok().map(|s| (id, s)))
        .collect();
    RunOutput {
        scenario_name: scenario.name.clone(),
        seed: seed_override.unwrap_or(scenario.seed),
        mode: parse_mode(&scenario.mode).expect("validated"),
        downlink: sim.downlink_bytes().to_vec(),
        images: sim.images().to_vec(),
        stats,
        final_states,
        timeline: sim.take_timeline(),
    }
}

/// Writes timeline.csv, stats.csv, downlink.bin and the image store into
/// `dir`, returning the paths written.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let timeline_path = dir.join("timeline.csv");
    output.timeline.write_csv(&timeline_path)?;
    written.push(timeline_path);

    let stats_path = dir.join("stats.csv");
    let mut stats_text = String::from(STATS_CSV_HEADER);
    stats_text.push('\n');
    for s in &output.stats {
        stats_text.push_str(&s.csv_row());
        stats_text.push('\n');
    }
    fs::write(&stats_path, stats_text)?;
    written.push(stats_path);

    let downlink_path = dir.join("downlink.bin");
    fs::write(&downlink_path, &output.downlink)?;
    written.push(downlink_path);

    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut index = String::from("image_id,width,height,captured_at_us,bytes\n");
    for image in &output.images {
        let image_path = images_dir.join(format!("{}.bin", image.image_id));
        fs::write(&image_path, &image.pixels)?;
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            image.image_id,
            image.width,
            image.height,
            image.captured_at,
            image.pixels.len()
        ));
        written.push(image_path);
    }
    let index_path = images_dir.join("index.csv");
    fs::write(&index_path, index)?;
    written.push(index_path);

    Ok(written)
}
