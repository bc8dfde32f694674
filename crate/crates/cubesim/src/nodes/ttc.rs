//! TT&C node: stores processed payload records, frames downlink data on
//! command, unpacks uplinked telecommand packets and routes them.

use std::collections::BTreeMap;

use crate::bus::{ActionUpdate, GoalId, GoalStatus};
use crate::codec::{
    self, CodecError, FrameRecord, PacketType, TelemetryFrame, FRAME_TYPE_IMAGE,
    FRAME_TYPE_TELEMETRY,
};
use crate::imaging::{ImageTask, ProcessedImageInfo, ACTION_IMAGING, TOPIC_IMAGE_INFO};
use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, NodeId, SubTag};
use crate::sim::Cx;
use crate::time::SimTime;
use crate::timeline::TimelineKind;

use super::{telemetry_topic, TelemetryRecord, TOPIC_MAINTENANCE, TOPIC_TELECOMMAND};

const TAG_TELEMETRY: SubTag = 1;

pub const DOWNLINK_KIND_TELEMETRY: u8 = 0x01;
pub const DOWNLINK_KIND_IMAGE: u8 = 0x02;

#[derive(Clone, Debug)]
pub struct TtcConfig {
    pub payload_ids: Vec<NodeId>,
    pub imaging_enabled: bool,
    /// Extra wall of sim time allowed between capture and processed result.
    pub imaging_budget_us: u64,
}

struct StoredRecord {
    record: TelemetryRecord,
    #[allow(dead_code)]
    stored_at: SimTime,
}

pub struct TtcBehavior {
    cfg: TtcConfig,
    records: BTreeMap<(u32, u8), StoredRecord>,
    image_results: BTreeMap<u32, Vec<u8>>,
}

impl TtcBehavior {
    pub fn new(cfg: TtcConfig) -> Self {
        TtcBehavior {
            cfg,
            records: BTreeMap::new(),
            image_results: BTreeMap::new(),
        }
    }

    /// Frames every stored record with cycle in [start, end], ordered by
    /// (cycle, payload_id). An empty selection encodes the canonical empty
    /// range [0, 0].
    fn build_telemetry_frame(&self, start: u32, end: u32) -> TelemetryFrame {
        let records: Vec<FrameRecord> = self
            .records
            .range((start, u8::MIN)..=(end.max(start), u8::MAX))
            .filter(|((cycle, _), _)| *cycle >= start && *cycle <= end)
            .map(|((cycle, payload_id), stored)| FrameRecord {
                payload_id: *payload_id,
                cycle: *cycle,
                data: stored.record.frame_data(),
            })
            .collect();
        if records.is_empty() || start > end {
            TelemetryFrame {
                frame_type: FRAME_TYPE_TELEMETRY,
                cycle_start: 0,
                cycle_end: 0,
                records: Vec::new(),
            }
        } else {
            TelemetryFrame {
                frame_type: FRAME_TYPE_TELEMETRY,
                cycle_start: start,
                cycle_end: end,
                records,
            }
        }
    }

    /// Image-info frame: one record per stored processed result, keyed by
    /// image id in the cycle field, payload_id 0.
    fn build_image_frame(&self) -> TelemetryFrame {
        let records: Vec<FrameRecord> = self
            .image_results
            .iter()
            .map(|(image_id, info)| FrameRecord {
                payload_id: 0,
                cycle: *image_id,
                data: info.clone(),
            })
            .collect();
        let (start, end) = match (
            self.image_results.keys().next(),
            self.image_results.keys().last(),
        ) {
            (Some(first), Some(last)) => (*first, *last),
            _ => (0, 0),
        };
        TelemetryFrame {
            frame_type: FRAME_TYPE_IMAGE,
            cycle_start: start,
            cycle_end: end,
            records,
        }
    }

    fn emit_frame(&self, cx: &mut Cx<'_>, frame: &TelemetryFrame) {
        match codec::encode_frame(frame) {
            Ok(bytes) => {
                cx.push_downlink(&bytes);
                cx.emit(
                    TimelineKind::FrameOut,
                    format!(
                        "type=0x{:02x} records={} bytes={}",
                        frame.frame_type,
                        frame.records.len(),
                        bytes.len()
                    ),
                );
            }
            Err(err) => cx.log(format!("frame encode failed error={err}")),
        }
    }

    fn handle_downlink_command(&mut self, cx: &mut Cx<'_>, args: &[u8]) {
        if args.len() != 9 {
            cx.log("downlink command rejected: bad args length");
            return;
        }
        let kind = args[0];
        let start = u32::from_be_bytes(args[1..5].try_into().unwrap());
        let end = u32::from_be_bytes(args[5..9].try_into().unwrap());
        match kind {
            DOWNLINK_KIND_TELEMETRY => {
                let frame = self.build_telemetry_frame(start, end);
                self.emit_frame(cx, &frame);
            }
            DOWNLINK_KIND_IMAGE => {
                let frame = self.build_image_frame();
                self.emit_frame(cx, &frame);
            }
            other => cx.log(format!("downlink command rejected: kind=0x{other:02x}")),
        }
    }

    fn handle_imaging_command(&mut self, cx: &mut Cx<'_>, args: &[u8]) {
        if !self.cfg.imaging_enabled {
            cx.log("imaging command dropped: imaging disabled");
            return;
        }
        let Some(task) = ImageTask::decode(args) else {
            cx.log("imaging command rejected: malformed task");
            return;
        };
        // Publish the task info for the imaging pair, then drive the goal.
        cx.publish(TOPIC_IMAGE_INFO, args.to_vec()).ok();
        let deadline = task
            .capture_time
            .saturating_micros_since(cx.now())
            .saturating_add(self.cfg.imaging_budget_us);
        match cx.send_goal(ACTION_IMAGING, args.to_vec(), Some(deadline)) {
            Ok(goal) => cx.log(format!(
                "imaging goal sent goal_id={goal} method={} capture_at={}",
                task.method_id, task.capture_time
            )),
            Err(err) => cx.log(format!("imaging goal failed error={err}")),
        }
    }
}

impl Behavior for TtcBehavior {
    fn kind(&self) -> &'static str {
        "ttc"
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        for payload in self.cfg.payload_ids.clone() {
            cx.subscribe(&telemetry_topic(&payload), TAG_TELEMETRY);
        }
        CallbackOutcome::Success
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        if tag != TAG_TELEMETRY || !cx.is_active() {
            return;
        }
        let Some(record) = TelemetryRecord::decode(&env.payload) else {
            cx.log("malformed telemetry record dropped");
            return;
        };
        let key = (record.cycle, record.payload_id);
        if self.records.contains_key(&key) {
            cx.log(format!(
                "duplicate record ignored cycle={} payload={}",
                record.cycle, record.payload_id
            ));
            return;
        }
        cx.log(format!(
            "record stored cycle={} payload={} status={} bytes={}",
            record.cycle,
            record.payload_id,
            record.status,
            record.data.len()
        ));
        self.records.insert(
            key,
            StoredRecord {
                record,
                stored_at: cx.now(),
            },
        );
    }

    fn on_uplink(&mut self, cx: &mut Cx<'_>, bytes: &[u8]) {
        if !cx.is_active() {
            cx.log("uplink dropped (not active)");
            return;
        }
        let packet = match codec::decode_packet(bytes) {
            Ok(p) => p,
            Err(CodecError::CrcError) => {
                cx.log("uplink-crc-error packet dropped");
                return;
            }
            Err(err) => {
                cx.log(format!("uplink packet dropped error={err}"));
                return;
            }
        };
        match packet.packet_type {
            PacketType::Downlink => self.handle_downlink_command(cx, &packet.args),
            PacketType::PayloadCommand => {
                let mut message = Vec::with_capacity(1 + packet.args.len());
                message.push(packet.target);
                message.extend_from_slice(&packet.args);
                cx.publish(TOPIC_TELECOMMAND, message).ok();
                cx.log(format!("telecommand routed target={}", packet.target));
            }
            PacketType::Imaging => self.handle_imaging_command(cx, &packet.args),
            PacketType::Parameter | PacketType::NodeReplace => {
                cx.publish(TOPIC_MAINTENANCE, packet.args.clone()).ok();
                cx.log("maintenance command routed");
            }
        }
    }

    fn on_action_update(&mut self, cx: &mut Cx<'_>, goal: GoalId, update: &ActionUpdate) {
        match update {
            ActionUpdate::Result {
                status: GoalStatus::Succeeded,
                payload,
            } => match ProcessedImageInfo::decode(payload) {
                Some(info) => {
                    cx.log(format!(
                        "imaging result stored goal_id={goal} image_id={} method={}",
                        info.image_id, info.method_id
                    ));
                    self.image_results.insert(info.image_id, payload.clone());
                }
                None => cx.log(format!("imaging result malformed goal_id={goal}")),
            },
            ActionUpdate::Result {
                status: GoalStatus::Aborted,
                payload,
            } => {
                let reason = String::from_utf8_lossy(payload).into_owned();
                cx.log(format!("imaging failed goal_id={goal} reason={reason}"));
            }
            _ => {}
        }
    }
}
