//! Payload task node: waits for its task-flag grant, runs one acquisition
//! cycle over the CAN bus (queued telecommands first, then wake/await),
//! processes the device data, publishes the telemetry record, and ends the
//! cycle with its liveness-ring probe.

use std::collections::VecDeque;

use crate::can::{AcquireOutcome, CanEvent, CanFrame, TaskFlags};
use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, NodeId, ParamValue, RunState, SubTag, TimerTag};
use crate::sim::Cx;

use super::{
    telemetry_topic, PayloadCommand, TelemetryRecord, RECORD_STATUS_NO_RESPONSE, RECORD_STATUS_OK,
    TOPIC_TASK_FLAGS, TOPIC_TELECOMMAND,
};

const TAG_FLAGS: SubTag = 1;
const TAG_COMMAND: SubTag = 2;

const T_WAKE: TimerTag = 1;
const T_PROCESS_DONE: TimerTag = 2;
const T_COMMAND_DONE: TimerTag = 3;

pub const DEFAULT_POLL_DELAY_MS: i64 = 20;

#[derive(Clone, Debug)]
pub struct PayloadConfig {
    pub id: NodeId,
    /// Bit position in the task-flag array.
    pub index: usize,
    /// 1-based id used in telemetry records and telecommand targeting.
    pub payload_byte: u8,
    pub device_id: u16,
    pub can_enabled: bool,
    pub await_timeout_us: u64,
    pub processing_delay_us: u64,
    pub command_delay_us: u64,
}

enum Phase {
    Idle,
    PrePoll { cycle: u64 },
    Awaiting { cycle: u64 },
    Processing,
    CommandExcursion,
    ProbeWait,
}

pub struct PayloadBehavior {
    cfg: PayloadConfig,
    phase: Phase,
    pending_commands: VecDeque<Vec<u8>>,
    /// Stashed between device response and end of processing.
    finished: Option<(u64, u8, Vec<u8>)>,
}

impl PayloadBehavior {
    pub fn new(cfg: PayloadConfig) -> Self {
        PayloadBehavior {
            cfg,
            phase: Phase::Idle,
            pending_commands: VecDeque::new(),
            finished: None,
        }
    }

    fn liveness_service(&self) -> String {
        crate::fault::liveness_service(&self.cfg.id)
    }

    /// End-of-cycle: probe the ring downstream, or go straight to off.
    fn enter_probe_phase(&mut self, cx: &mut Cx<'_>) {
        if cx.ring_probe() {
            cx.set_run_state(RunState::OtherAsyncCommands);
            self.phase = Phase::ProbeWait;
        } else {
            cx.set_run_state(RunState::Off);
            self.phase = Phase::Idle;
        }
    }

    fn begin_processing(&mut self, cx: &mut Cx<'_>, cycle: u64, status: u8, data: Vec<u8>) {
        cx.can_release().ok();
        cx.set_run_state(RunState::DataProcessing);
        self.finished = Some((cycle, status, data));
        self.phase = Phase::Processing;
        cx.schedule(self.cfg.processing_delay_us, T_PROCESS_DONE);
    }
}

impl Behavior for PayloadBehavior {
    fn kind(&self) -> &'static str {
        if self.cfg.can_enabled {
            "payload"
        } else {
            "payload_no_can"
        }
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        cx.subscribe(TOPIC_TASK_FLAGS, TAG_FLAGS);
        cx.subscribe(TOPIC_TELECOMMAND, TAG_COMMAND);
        cx.declare_param("poll_delay_ms", ParamValue::Int(DEFAULT_POLL_DELAY_MS));
        cx.set_run_state(RunState::Off);
        CallbackOutcome::Success
    }

    fn on_activate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        let service = self.liveness_service();
        cx.register_service(&service);
        CallbackOutcome::Success
    }

    fn on_deactivate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        let service = self.liveness_service();
        cx.unregister_service(&service);
        CallbackOutcome::Success
    }

    fn on_service_request(
        &mut self,
        _cx: &mut Cx<'_>,
        _req: &crate::bus::ServiceRequest,
    ) -> Option<Vec<u8>> {
        Some(b"OK".to_vec())
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        match tag {
            TAG_FLAGS => self.on_flags(cx, &env.payload),
            TAG_COMMAND => self.on_telecommand(cx, &env.payload),
            _ => {}
        }
    }

    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: TimerTag) {
        match tag {
            T_WAKE => {
                let Phase::PrePoll { cycle } = self.phase else {
                    return;
                };
                // Deferred telecommands execute first, inside this ownership.
                while let Some(command) = self.pending_commands.pop_front() {
                    for chunk in command.chunks(8) {
                        if let Ok(frame) = CanFrame::new(self.cfg.device_id, chunk.to_vec()) {
                            cx.can_send(&frame).ok();
                        }
                    }
                    cx.log(format!(
                        "command executed cycle={cycle} bytes={}",
                        command.len()
                    ));
                }
                match CanFrame::wake(self.cfg.device_id) {
                    Ok(wake) => {
                        cx.can_send(&wake).ok();
                        cx.can_await_response(self.cfg.await_timeout_us).ok();
                        self.phase = Phase::Awaiting { cycle };
                    }
                    Err(_) => {
                        self.begin_processing(cx, cycle, RECORD_STATUS_NO_RESPONSE, Vec::new());
                    }
                }
            }
            T_PROCESS_DONE => {
                if !matches!(self.phase, Phase::Processing) {
                    return;
                }
                let Some((cycle, status, data)) = self.finished.take() else {
                    return;
                };
                let record = TelemetryRecord {
                    payload_id: self.cfg.payload_byte,
                    cycle: cycle as u32,
                    status,
                    data,
                };
                let topic = telemetry_topic(&self.cfg.id);
                cx.publish(&topic, record.encode()).ok();
                self.enter_probe_phase(cx);
            }
            T_COMMAND_DONE => {
                if matches!(self.phase, Phase::CommandExcursion) {
                    cx.set_run_state(RunState::Off);
                    self.phase = Phase::Idle;
                }
            }
            _ => {}
        }
    }

    fn on_can_event(&mut self, cx: &mut Cx<'_>, event: CanEvent) {
        let Phase::Awaiting { cycle } = self.phase else {
            return;
        };
        match event {
            CanEvent::Response { frames } => {
                let data: Vec<u8> = frames.iter().flat_map(|f| f.data().to_vec()).collect();
                self.begin_processing(cx, cycle, RECORD_STATUS_OK, data);
            }
            CanEvent::Timeout => {
                cx.log(format!("device no-response cycle={cycle}"));
                self.begin_processing(cx, cycle, RECORD_STATUS_NO_RESPONSE, Vec::new());
            }
        }
    }

    fn on_probe_complete(&mut self, cx: &mut Cx<'_>, _alive: bool) {
        if matches!(self.phase, Phase::ProbeWait) {
            cx.set_run_state(RunState::Off);
            self.phase = Phase::Idle;
        }
    }
}

impl PayloadBehavior {
    fn on_flags(&mut self, cx: &mut Cx<'_>, payload: &[u8]) {
        if !cx.is_active() {
            return;
        }
        let Some((flags, cycle)) = TaskFlags::decode(payload) else {
            cx.log("malformed task flags dropped");
            return;
        };
        if flags.active_index() != Some(self.cfg.index) {
            return;
        }
        if !matches!(self.phase, Phase::Idle) {
            cx.log(format!("grant skipped (busy) cycle={cycle}"));
            return;
        }
        if !self.cfg.can_enabled {
            cx.log(format!("can-disabled: skipping acquisition cycle={cycle}"));
            self.enter_probe_phase(cx);
            return;
        }
        match cx.can_acquire() {
            Ok(AcquireOutcome::Granted) => {}
            Ok(AcquireOutcome::Busy) | Err(_) => return,
        }
        cx.set_run_state(RunState::OccupyingCan);
        let poll_delay_us = cx
            .param("poll_delay_ms")
            .and_then(|v| v.as_int())
            .unwrap_or(DEFAULT_POLL_DELAY_MS)
            .max(0) as u64
            * 1_000;
        let extra_hold = cx.take_extra_bus_hold();
        if extra_hold > 0 {
            cx.log(format!("bus usage extended by {extra_hold}us (fault)"));
        }
        self.phase = Phase::PrePoll { cycle };
        cx.schedule(poll_delay_us + extra_hold, T_WAKE);
    }

    fn on_telecommand(&mut self, cx: &mut Cx<'_>, payload: &[u8]) {
        if !cx.is_active() {
            return;
        }
        let Some(command) = PayloadCommand::decode(payload) else {
            // Commands for anyone that cannot be parsed are rejected loudly;
            // the state machine is untouched.
            cx.log("telecommand rejected: malformed");
            return;
        };
        if command.target != self.cfg.payload_byte {
            return;
        }
        self.pending_commands.push_back(command.command);
        cx.log(format!(
            "command stored pending={}",
            self.pending_commands.len()
        ));
        if matches!(self.phase, Phase::Idle) {
            cx.set_run_state(RunState::OtherAsyncCommands);
            self.phase = Phase::CommandExcursion;
            cx.schedule(self.cfg.command_delay_us, T_COMMAND_DONE);
        } else {
            cx.log("command stored without excursion (busy)");
        }
    }
}
