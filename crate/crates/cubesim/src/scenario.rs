//! Scenario files: TOML schema, loading and full validation. The schema is
//! documented with examples in `docs/scenario_format.md`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::can::FailureMode;
use crate::codec::{self, PacketType, TelecommandPacket};
use crate::fault::{FaultInjection, FaultKind};
use crate::imaging::ImageTask;
use crate::node::NodeId;
use crate::sim::ClockMode;
use crate::time::SimTime;

/// Node names reserved for the fixed roster.
pub const RESERVED_NODES: [&str; 7] = [
    "timing",
    "switch",
    "ttc",
    "maintenance",
    "img_acq",
    "img_proc",
    "watchdog",
];

pub const PAYLOAD_TEMPLATES: [&str; 3] = ["payload_v1", "payload_no_can", "can_enabled_v2"];

#[derive(Error, Debug)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub timing_period_us: u64,
    pub run_duration_us: u64,
    #[serde(default)]
    pub delivery: DeliveryCfg,
    #[serde(default)]
    pub payloads: Vec<PayloadCfg>,
    #[serde(default)]
    pub ring: Option<RingCfg>,
    #[serde(default)]
    pub watchdog: Option<WatchdogCfg>,
    #[serde(default)]
    pub imaging: Option<ImagingCfg>,
    #[serde(default)]
    pub respawn_delay_us: Option<u64>,
    #[serde(default)]
    pub reboot_delay_us: Option<u64>,
    #[serde(default)]
    pub uplinks: Vec<UplinkCfg>,
    #[serde(default)]
    pub faults: Vec<FaultCfg>,
}

fn default_mode() -> String {
    "deterministic".into()
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliveryCfg {
    #[serde(default = "default_base_delay")]
    pub base_delay_us: u64,
    #[serde(default)]
    pub jitter_bound_us: u64,
}

fn default_base_delay() -> u64 {
    300
}

impl Default for DeliveryCfg {
    fn default() -> Self {
        DeliveryCfg {
            base_delay_us: default_base_delay(),
            jitter_bound_us: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadCfg {
    pub id: String,
    pub device_id: u16,
    #[serde(default = "default_response_delay")]
    pub response_delay_us: u64,
    #[serde(default = "default_response_payload")]
    pub response_payload_hex: String,
    #[serde(default = "default_failure_mode")]
    pub failure_mode: String,
    #[serde(default = "default_processing_delay")]
    pub processing_delay_us: u64,
    #[serde(default = "default_await_timeout")]
    pub await_timeout_us: u64,
    #[serde(default = "default_command_delay")]
    pub command_delay_us: u64,
    #[serde(default = "default_behavior")]
    pub behavior: String,
    #[serde(default = "default_true")]
    pub initially_active: bool,
    #[serde(default)]
    pub transition_delay_us: u64,
}

fn default_response_delay() -> u64 {
    5_000
}
fn default_response_payload() -> String {
    "0102030405060708".into()
}
fn default_failure_mode() -> String {
    "none".into()
}
fn default_processing_delay() -> u64 {
    400_000
}
fn default_await_timeout() -> u64 {
    50_000
}
fn default_command_delay() -> u64 {
    10_000
}
fn default_behavior() -> String {
    "payload_v1".into()
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingCfg {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub order: Vec<String>,
    #[serde(default)]
    pub probe_timeout_us: Option<u64>,
    #[serde(default = "default_threshold")]
    pub threshold: u32,
}

fn default_threshold() -> u32 {
    3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchdogCfg {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub timeout_us: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingCfg {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_dim")]
    pub width: u16,
    #[serde(default = "default_dim")]
    pub height: u16,
    #[serde(default = "default_method_duration")]
    pub method_duration_us: u64,
    #[serde(default = "default_budget")]
    pub budget_us: u64,
}

fn default_dim() -> u16 {
    64
}
fn default_method_duration() -> u64 {
    500_000
}
fn default_budget() -> u64 {
    5_000_000
}

impl Default for ImagingCfg {
    fn default() -> Self {
        ImagingCfg {
            enabled: true,
            width: default_dim(),
            height: default_dim(),
            method_duration_us: default_method_duration(),
            budget_us: default_budget(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UplinkCfg {
    pub at_us: u64,
    pub packet: PacketCfg,
}

/// One uplink packet, either raw hex or a typed convenience form.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketCfg {
    pub kind: String,
    #[serde(default)]
    pub target: Option<u8>,
    #[serde(default)]
    pub args_hex: Option<String>,
    #[serde(default)]
    pub frame_kind: Option<String>,
    #[serde(default)]
    pub cycle_start: Option<u32>,
    #[serde(default)]
    pub cycle_end: Option<u32>,
    #[serde(default)]
    pub capture_at_us: Option<u64>,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub exposure_hex: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub raw_hex: Option<String>,
}

impl PacketCfg {
    /// Builds the encoded packet bytes, or a description of what is wrong.
    pub fn build(&self) -> Result<Vec<u8>, String> {
        match self.kind.as_str() {
            "raw" => {
                let hex = self.raw_hex.as_ref().ok_or("raw packet needs raw_hex")?;
                parse_hex(hex)
            }
            "downlink" => {
                let kind = match self.frame_kind.as_deref().unwrap_or("telemetry") {
                    "telemetry" => 0x01u8,
                    "image" => 0x02,
                    other => return Err(format!("unknown frame_kind {other}")),
                };
                let start = self.cycle_start.unwrap_or(0);
                let end = self.cycle_end.unwrap_or(0);
                let mut args = vec![kind];
                args.extend_from_slice(&start.to_be_bytes());
                args.extend_from_slice(&end.to_be_bytes());
                encode(PacketType::Downlink, 0, args)
            }
            "payload_command" => {
                let target = self.target.ok_or("payload_command needs target")?;
                let args = parse_hex(self.args_hex.as_deref().unwrap_or(""))?;
                if args.is_empty() {
                    return Err("payload_command needs non-empty args_hex".into());
                }
                encode(PacketType::PayloadCommand, target, args)
            }
            "imaging" => {
                let capture = self.capture_at_us.ok_or("imaging needs capture_at_us")?;
                let method = self.method.clone().ok_or("imaging needs method")?;
                let exposure = parse_hex(self.exposure_hex.as_deref().unwrap_or(""))?;
                let task = ImageTask {
                    capture_time: SimTime(capture),
                    method_id: method,
                    exposure,
                };
                encode(PacketType::Imaging, 0, task.encode())
            }
            "parameter" => {
                let text = self.text.as_ref().ok_or("parameter needs text")?;
                encode(PacketType::Parameter, 0, text.as_bytes().to_vec())
            }
            "node_replace" => {
                let text = self.text.as_ref().ok_or("node_replace needs text")?;
                encode(PacketType::NodeReplace, 0, text.as_bytes().to_vec())
            }
            other => Err(format!("unknown packet kind {other}")),
        }
    }
}

fn encode(packet_type: PacketType, target: u8, args: Vec<u8>) -> Result<Vec<u8>, String> {
    codec::encode_packet(&TelecommandPacket {
        packet_type,
        target,
        args,
    })
    .map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultCfg {
    pub kind: String,
    pub target: String,
    pub at_us: u64,
    #[serde(default)]
    pub extra_us: Option<u64>,
    #[serde(default)]
    pub count: Option<u32>,
}

impl FaultCfg {
    pub fn build(&self) -> Result<FaultInjection, String> {
        let kind = match self.kind.as_str() {
            "kill_node" => FaultKind::KillNode,
            "delay_bus_usage" => FaultKind::DelayBusUsage {
                extra_us: self.extra_us.ok_or("delay_bus_usage needs extra_us")?,
            },
            "drop_probe" => FaultKind::DropProbe {
                count: self.count.ok_or("drop_probe needs count")?,
            },
            "stop_watchdog_feeding" => FaultKind::StopWatchdogFeeding,
            "corrupt_uplink" => FaultKind::CorruptUplink,
            other => return Err(format!("unknown fault kind {other}")),
        };
        Ok(FaultInjection {
            kind,
            target: NodeId::from(self.target.as_str()),
            at: SimTime(self.at_us),
        })
    }
}

pub fn parse_hex(hex: &str) -> Result<Vec<u8>, String> {
    let clean: String = hex.chars().filter(|c| !c.is_whitespace()).collect();
    if !clean.len().is_multiple_of(2) {
        return Err(format!("odd-length hex string {hex:?}"));
    }
    (0..clean.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&clean[i..i + 2], 16).map_err(|_| format!("bad hex byte in {hex:?}"))
        })
        .collect()
}

pub fn parse_failure_mode(s: &str) -> Option<FailureMode> {
    match s {
        "none" => Some(FailureMode::None),
        "silent" => Some(FailureMode::Silent),
        "garbled" => Some(FailureMode::Garbled),
        _ => None,
    }
}

pub fn parse_mode(s: &str) -> Option<ClockMode> {
    match s {
        "deterministic" => Some(ClockMode::Deterministic),
        "wall_clock" => Some(ClockMode::WallClock),
        _ => None,
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Resolved ring order: explicit order, or the documented default
    /// (first, third, second, then declaration order for the rest).
    pub fn ring_order(&self) -> Vec<String> {
        if let Some(ring) = &self.ring {
            if !ring.order.is_empty() {
                return ring.order.clone();
            }
        }
        let ids: Vec<String> = self.payloads.iter().map(|p| p.id.clone()).collect();
        if ids.len() == 3 {
            vec![ids[0].clone(), ids[2].clone(), ids[1].clone()]
        } else {
            ids
        }
    }

    pub fn probe_timeout_us(&self) -> u64 {
        self.ring
            .as_ref()
            .and_then(|r| r.probe_timeout_us)
            .unwrap_or(self.timing_period_us / 2)
    }

    pub fn ring_enabled(&self) -> bool {
        self.ring.as_ref().map(|r| r.enabled).unwrap_or(true) && self.payloads.len() >= 2
    }

    pub fn probe_threshold(&self) -> u32 {
        self.ring.as_ref().map(|r| r.threshold).unwrap_or(3)
    }

    pub fn watchdog_enabled(&self) -> bool {
        self.watchdog.as_ref().map(|w| w.enabled).unwrap_or(true)
    }

    pub fn watchdog_timeout_us(&self) -> u64 {
        self.watchdog
            .as_ref()
            .and_then(|w| w.timeout_us)
            .unwrap_or(3 * self.timing_period_us)
    }

    pub fn imaging_cfg(&self) -> ImagingCfg {
        self.imaging.clone().unwrap_or_default()
    }

    /// Checks every structural rule, reporting every violation found.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        if self.name.is_empty() || self.name.contains(|c: char| c.is_whitespace() || c == ',') {
            errors.push(format!(
                "name must be non-empty without whitespace or commas, got {:?}",
                self.name
            ));
        }
        if parse_mode(&self.mode).is_none() {
            errors.push(format!(
                "mode must be deterministic or wall_clock, got {:?}",
                self.mode
            ));
        }
        // One day of microseconds per period, one year per run: keeps every
        // derived sum far from the integer range while allowing any sane run.
        const MAX_PERIOD_US: u64 = 86_400_000_000;
        const MAX_DURATION_US: u64 = 31_536_000_000_000;
        if self.timing_period_us == 0 || self.timing_period_us > MAX_PERIOD_US {
            errors.push(format!(
                "timing_period_us must be in 1..={MAX_PERIOD_US}, got {}",
                self.timing_period_us
            ));
        }
        if self.run_duration_us == 0 || self.run_duration_us > MAX_DURATION_US {
            errors.push(format!(
                "run_duration_us must be in 1..={MAX_DURATION_US}, got {}",
                self.run_duration_us
            ));
        }

        let mut ids = BTreeSet::new();
        let mut device_ids = BTreeSet::new();
        for p in &self.payloads {
            if p.id.is_empty() || p.id.contains(char::is_whitespace) {
                errors.push(format!(
                    "payload id {:?} must be non-empty without whitespace",
                    p.id
                ));
            }
            if RESERVED_NODES.contains(&p.id.as_str()) {
                errors.push(format!("payload id {:?} is reserved", p.id));
            }
            if !ids.insert(p.id.clone()) {
                errors.push(format!("duplicate payload id {:?}", p.id));
            }
            if p.device_id >= 2048 {
                errors.push(format!(
                    "payload {:?} device_id {} exceeds the 11-bit range",
                    p.id, p.device_id
                ));
            }
            if !device_ids.insert(p.device_id) {
                errors.push(format!("duplicate device_id {}", p.device_id));
            }
            if parse_failure_mode(&p.failure_mode).is_none() {
                errors.push(format!(
                    "payload {:?} failure_mode must be none|silent|garbled, got {:?}",
                    p.id, p.failure_mode
                ));
            }
            if !PAYLOAD_TEMPLATES.contains(&p.behavior.as_str()) {
                errors.push(format!(
                    "payload {:?} behavior {:?} is not a known template {:?}",
                    p.id, p.behavior, PAYLOAD_TEMPLATES
                ));
            }
            if let Err(e) = parse_hex(&p.response_payload_hex) {
                errors.push(format!("payload {:?} response_payload_hex: {e}", p.id));
            }
        }

        if let Some(ring) = &self.ring {
            let mut seen = BTreeSet::new();
            for entry in &ring.order {
                if !ids.contains(entry) {
                    errors.push(format!("ring references undefined payload {entry:?}"));
                }
                if !seen.insert(entry.clone()) {
                    errors.push(format!("ring lists {entry:?} twice"));
                }
            }
            if !ring.order.is_empty() {
                for p in &self.payloads {
                    if !ring.order.contains(&p.id) {
                        errors.push(format!("ring does not cover payload {:?}", p.id));
                    }
                }
            }
            if ring.threshold == 0 {
                errors.push("ring threshold must be at least 1".into());
            }
            if ring.probe_timeout_us == Some(0) {
                errors.push("probe_timeout_us must be positive".into());
            }
        }

        if let Some(w) = &self.watchdog {
            if w.timeout_us == Some(0) {
                errors.push("watchdog timeout_us must be positive".into());
            }
        }

        for (i, uplink) in self.uplinks.iter().enumerate() {
            if uplink.at_us > self.run_duration_us {
                errors.push(format!(
                    "uplink[{i}] at_us {} is beyond run_duration_us {}",
                    uplink.at_us, self.run_duration_us
                ));
            }
            if let Err(e) = uplink.packet.build() {
                errors.push(format!("uplink[{i}]: {e}"));
            }
        }

        for (i, fault) in self.faults.iter().enumerate() {
            if fault.at_us > self.run_duration_us {
                errors.push(format!(
                    "fault[{i}] at_us {} is beyond run_duration_us {}",
                    fault.at_us, self.run_duration_us
                ));
            }
            match fault.build() {
                Ok(built) => {
                    let target = built.target.as_str();
                    let known = ids.contains(target)
                        || RESERVED_NODES.contains(&target)
                        || target == "system";
                    if !known {
                        errors.push(format!("fault[{i}] targets undefined node {target:?}"));
                    }
                }
                Err(e) => errors.push(format!("fault[{i}]: {e}")),
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }
}
