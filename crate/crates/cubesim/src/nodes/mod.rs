//! The flight node roster: timing, CAN switch, payloads, TT&C and
//! maintenance, each a lifecycle behavior wired to the bus.

mod maintenance;
mod payload;
mod switch;
mod timing;
mod ttc;

pub use maintenance::MaintenanceBehavior;
pub use payload::{PayloadBehavior, PayloadConfig};
pub use switch::SwitchBehavior;
pub use timing::{TimingBehavior, TimingConfig};
pub use ttc::{TtcBehavior, TtcConfig};

use crate::node::NodeId;
use crate::time::SimTime;

pub const TOPIC_TIMING: &str = "/timing";
pub const TOPIC_TASK_FLAGS: &str = "/task_flags";
pub const TOPIC_TELECOMMAND: &str = "/telecommand";
pub const TOPIC_MAINTENANCE: &str = "/maintenance";

pub fn telemetry_topic(payload: &NodeId) -> String {
    format!("/telemetry/{payload}")
}

/// Periodic tick published by the timing node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimingTick {
    /// Starts at 1 and increments by exactly 1 per tick.
    pub cycle: u64,
    pub tick_time: SimTime,
}

impl TimingTick {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.cycle.to_be_bytes());
        out.extend_from_slice(&self.tick_time.micros().to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<TimingTick> {
        if bytes.len() != 16 {
            return None;
        }
        Some(TimingTick {
            cycle: u64::from_be_bytes(bytes[0..8].try_into().ok()?),
            tick_time: SimTime(u64::from_be_bytes(bytes[8..16].try_into().ok()?)),
        })
    }
}

/// Telecommand routed to one payload over the telecommand topic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayloadCommand {
    /// 1-based payload number, matching the record payload_id.
    pub target: u8,
    pub command: Vec<u8>,
}

impl PayloadCommand {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.command.len());
        out.push(self.target);
        out.extend_from_slice(&self.command);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<PayloadCommand> {
        // A command must carry at least the target and one command byte.
        if bytes.len() < 2 {
            return None;
        }
        Some(PayloadCommand {
            target: bytes[0],
            command: bytes[1..].to_vec(),
        })
    }
}

pub const RECORD_STATUS_OK: u8 = 0;
pub const RECORD_STATUS_NO_RESPONSE: u8 = 1;

/// One processed acquisition published on a payload's telemetry topic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TelemetryRecord {
    pub payload_id: u8,
    pub cycle: u32,
    /// RECORD_STATUS_OK or RECORD_STATUS_NO_RESPONSE.
    pub status: u8,
    pub data: Vec<u8>,
}

impl TelemetryRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.data.len());
        out.push(self.payload_id);
        out.extend_from_slice(&self.cycle.to_be_bytes());
        out.push(self.status);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<TelemetryRecord> {
        if bytes.len() < 6 {
            return None;
        }
        Some(TelemetryRecord {
            payload_id: bytes[0],
            cycle: u32::from_be_bytes(bytes[1..5].try_into().ok()?),
            status: bytes[5],
            data: bytes[6..].to_vec(),
        })
    }

    /// Frame-record data field: status byte followed by the processed bytes.
    pub fn frame_data(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.data.len());
        out.push(self.status);
        out.extend_from_slice(&self.data);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_round_trip() {
        let tick = TimingTick {
            cycle: 42,
            tick_time: SimTime(42_000_000),
        };
        assert_eq!(TimingTick::decode(&tick.encode()), Some(tick));
        assert_eq!(TimingTick::decode(&[0; 15]), None);
    }

    #[test]
    fn command_round_trip_and_malformed() {
        let cmd = PayloadCommand {
            target: 2,
            command: vec![0xBE, 0xEF],
        };
        assert_eq!(PayloadCommand::decode(&cmd.encode()), Some(cmd));
        assert_eq!(PayloadCommand::decode(&[1]), None);
        assert_eq!(PayloadCommand::decode(&[]), None);
    }

    #[test]
    fn record_round_trip() {
        let rec = TelemetryRecord {
            payload_id: 1,
            cycle: 7,
            status: RECORD_STATUS_OK,
            data: vec![9, 9, 9],
        };
        assert_eq!(TelemetryRecord::decode(&rec.encode()), Some(rec.clone()));
        assert_eq!(rec.frame_data(), vec![0, 9, 9, 9]);
    }
}
