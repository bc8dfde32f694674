//! Simulated CAN bus: single-owner arbitration granted by the switch
//! protocol, plus device models that answer wake-up frames after a delay.
//!
//! Frame-id contention is not modeled; ownership comes entirely from the
//! published task flags. Responses longer than 8 bytes are chunked into
//! consecutive frames delivered at the same instant, in order.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::kernel::EventId;
use crate::node::NodeId;
use crate::sim::{Sim, SimEvent};
use crate::time::SimTime;
use crate::timeline::TimelineKind;

/// Single-byte wake-up frame payload devices answer to.
pub const WAKE_BYTE: u8 = 0x57;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CanError {
    #[error("not-owner")]
    NotOwner,
    #[error("not-scheduled")]
    NotScheduled,
    #[error("frame id {0} out of 11-bit range")]
    BadId(u16),
    #[error("frame data longer than 8 bytes")]
    FrameTooLong,
    #[error("no exchange in flight")]
    NoExchange,
}

/// Classic frame: 11-bit id, up to 8 data bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanFrame {
    id: u16,
    data: Vec<u8>,
}

impl CanFrame {
    pub fn new(id: u16, data: Vec<u8>) -> Result<CanFrame, CanError> {
        if id >= 2048 {
            return Err(CanError::BadId(id));
        }
        if data.len() > 8 {
            return Err(CanError::FrameTooLong);
        }
        Ok(CanFrame { id, data })
    }

    pub fn wake(id: u16) -> Result<CanFrame, CanError> {
        CanFrame::new(id, vec![WAKE_BYTE])
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.data.len() as u8
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_wake(&self) -> bool {
        self.data == [WAKE_BYTE]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FailureMode {
    None,
    /// Never responds.
    Silent,
    /// Responds with corrupted payload bytes.
    Garbled,
}

impl FailureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::Silent => "silent",
            FailureMode::Garbled => "garbled",
        }
    }
}

/// Simulated device on the bus, addressed by frame id.
#[derive(Clone, Debug)]
pub struct DeviceModel {
    pub device_id: u16,
    pub response_delay_us: u64,
    pub response_payload: Vec<u8>,
    pub failure_mode: FailureMode,
}

impl DeviceModel {
    /// Response chunked into 8-byte frames, or None for a silent device.
    fn response_frames(&self) -> Option<Vec<CanFrame>> {
        let payload = match self.failure_mode {
            FailureMode::Silent => return None,
            FailureMode::None => self.response_payload.clone(),
            FailureMode::Garbled => {
                let mut corrupted = self.response_payload.clone();
                if corrupted.is_empty() {
                    corrupted.push(0xFF);
                } else {
                    corrupted[0] ^= 0xFF;
                }
                corrupted
            }
        };
        let frames = payload
            .chunks(8)
            .map(|chunk| CanFrame {
                id: self.device_id,
                data: chunk.to_vec(),
            })
            .collect::<Vec<_>>();
        // A device always answers a wake-up with at least one frame.
        if frames.is_empty() {
            Some(vec![CanFrame {
                id: self.device_id,
                data: Vec::new(),
            }])
        } else {
            Some(frames)
        }
    }
}

/// Delivered to the owning node's `Behavior::on_can_event`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CanEvent {
    Response { frames: Vec<CanFrame> },
    Timeout,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AcquireOutcome {
    Granted,
    Busy,
}

/// One-hot bus-grant bit array published by the switch node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskFlags {
    pub bits: Vec<bool>,
    pub generation: u64,
}

impl TaskFlags {
    pub fn one_hot(len: usize, active: usize, generation: u64) -> TaskFlags {
        let mut bits = vec![false; len];
        if active < len {
            bits[active] = true;
        }
        TaskFlags { bits, generation }
    }

    pub fn is_one_hot(&self) -> bool {
        self.bits.iter().filter(|b| **b).count() <= 1
    }

    pub fn active_index(&self) -> Option<usize> {
        self.bits.iter().position(|b| *b)
    }

    /// Wire form used on the task-flag topic; carries the triggering cycle so
    /// subscribers need not correlate with the timing topic.
    pub fn encode(&self, cycle: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.bits.len());
        out.extend_from_slice(&self.generation.to_be_bytes());
        out.extend_from_slice(&cycle.to_be_bytes());
        out.push(self.bits.len() as u8);
        out.extend(self.bits.iter().map(|b| u8::from(*b)));
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<(TaskFlags, u64)> {
        if bytes.len() < 17 {
            return None;
        }
        let generation = u64::from_be_bytes(bytes[0..8].try_into().ok()?);
        let cycle = u64::from_be_bytes(bytes[8..16].try_into().ok()?);
        let n = bytes[16] as usize;
        if bytes.len() != 17 + n {
            return None;
        }
        let bits = bytes[17..].iter().map(|b| *b != 0).collect();
        Some((TaskFlags { bits, generation }, cycle))
    }
}

impl fmt::Display for TaskFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gen={} bits=", self.generation)?;
        for b in &self.bits {
            write!(f, "{}", u8::from(*b))?;
        }
        Ok(())
    }
}

struct Exchange {
    owner: NodeId,
    device_id: u16,
    response_event: Option<EventId>,
    deadline_event: Option<EventId>,
}

pub(crate) struct CanBus {
    owner: Option<NodeId>,
    acquired_at: SimTime,
    grant: Option<NodeId>,
    devices: BTreeMap<u16, DeviceModel>,
    next_exchange: u64,
    exchange: Option<(u64, Exchange)>,
}

impl CanBus {
    pub fn new() -> Self {
        CanBus {
            owner: None,
            acquired_at: SimTime::ZERO,
            grant: None,
            devices: BTreeMap::new(),
            next_exchange: 0,
            exchange: None,
        }
    }

    pub fn add_device(&mut self, device: DeviceModel) {
        self.devices.insert(device.device_id, device);
    }

    pub fn is_free(&self) -> bool {
        self.owner.is_none()
    }
}

impl Sim {
    pub fn can_is_free(&self) -> bool {
        self.can.is_free()
    }

    pub fn can_owner(&self) -> Option<NodeId> {
        self.can.owner.clone()
    }

    /// Installs the current grant; called by the switch node when it
    /// publishes new task flags.
    pub fn can_set_grant(&mut self, node: Option<NodeId>) {
        self.can.grant = node;
    }

    pub fn can_add_device(&mut self, device: DeviceModel) {
        self.can.add_device(device);
    }

    /// Takes bus ownership. The caller must hold the active task-flag bit.
    pub fn can_acquire(&mut self, node: &NodeId) -> Result<AcquireOutcome, CanError> {
        if self.can.grant.as_ref() != Some(node) {
            self.emit(
                node,
                TimelineKind::Log,
                "acquire rejected: not-scheduled".into(),
            );
            return Err(CanError::NotScheduled);
        }
        if let Some(owner) = &self.can.owner {
            let owner = owner.clone();
            self.emit(
                node,
                TimelineKind::Log,
                format!("acquire busy: owned by {owner}"),
            );
            return Ok(AcquireOutcome::Busy);
        }
        self.can.owner = Some(node.clone());
        self.can.acquired_at = self.kernel.now();
        self.emit(node, TimelineKind::Acquire, "granted".into());
        Ok(AcquireOutcome::Granted)
    }

    /// Transmits a frame. A wake-up frame addressed to a known device
    /// schedules that device's response after its configured delay.
    pub fn can_send(&mut self, node: &NodeId, frame: &CanFrame) -> Result<(), CanError> {
        if self.can.owner.as_ref() != Some(node) {
            return Err(CanError::NotOwner);
        }
        self.emit(
            node,
            TimelineKind::Log,
            format!(
                "can tx id=0x{:03x} dlc={} wake={}",
                frame.id(),
                frame.dlc(),
                frame.is_wake()
            ),
        );
        if !frame.is_wake() {
            return Ok(());
        }
        let Some(device) = self.can.devices.get(&frame.id()) else {
            self.emit(
                node,
                TimelineKind::Log,
                format!("no device at id=0x{:03x}", frame.id()),
            );
            return Ok(());
        };
        let delay = device.response_delay_us;
        let frames = device.response_frames();
        let exchange_id = self.can.next_exchange;
        self.can.next_exchange += 1;
        let response_event = frames.and_then(|frames| {
            self.kernel
                .schedule_after(
                    delay,
                    SimEvent::CanResponse {
                        exchange: exchange_id,
                        frames,
                    },
                )
                .ok()
        });
        if let Some((old_id, old)) = self.can.exchange.take() {
            // Only one exchange per ownership; a second wake replaces it.
            if let Some(ev) = old.response_event {
                self.kernel.cancel(ev);
            }
            if let Some(ev) = old.deadline_event {
                self.kernel.cancel(ev);
            }
            self.emit(
                node,
                TimelineKind::Log,
                format!("previous exchange {old_id} superseded"),
            );
        }
        self.can.exchange = Some((
            exchange_id,
            Exchange {
                owner: node.clone(),
                device_id: frame.id(),
                response_event,
                deadline_event: None,
            },
        ));
        Ok(())
    }

    /// Arms the response deadline for the in-flight exchange.
    pub fn can_await_response(&mut self, node: &NodeId, timeout_us: u64) -> Result<(), CanError> {
        if self.can.owner.as_ref() != Some(node) {
            return Err(CanError::NotOwner);
        }
        let Some((id, exchange)) = &mut self.can.exchange else {
            return Err(CanError::NoExchange);
        };
        if exchange.owner != *node {
            return Err(CanError::NoExchange);
        }
        let id = *id;
        let ev = self
            .kernel
            .schedule_after(timeout_us, SimEvent::CanDeadline { exchange: id })
            .ok();
        if let Some((_, exchange)) = &mut self.can.exchange {
            exchange.deadline_event = ev;
        }
        Ok(())
    }

    /// Releases the bus; any pending device response is discarded (logged).
    pub fn can_release(&mut self, node: &NodeId) -> Result<usize, CanError> {
        if self.can.owner.as_ref() != Some(node) {
            return Err(CanError::NotOwner);
        }
        let discarded = self.discard_exchange(node);
        self.can.owner = None;
        self.emit(
            node,
            TimelineKind::Release,
            format!("ok pending_discarded={discarded}"),
        );
        Ok(discarded)
    }

    /// Clears ownership held by a node being torn down.
    pub(crate) fn can_clear_owner(&mut self, node: &NodeId) {
        if self.can.owner.as_ref() == Some(node) {
            let discarded = self.discard_exchange(node);
            self.can.owner = None;
            self.emit(
                node,
                TimelineKind::Log,
                format!("bus ownership cleared (node torn down) pending_discarded={discarded}"),
            );
        }
    }

    fn discard_exchange(&mut self, node: &NodeId) -> usize {
        let mut discarded = 0;
        if let Some((id, exchange)) = self.can.exchange.take() {
            if exchange.owner == *node {
                if let Some(ev) = exchange.response_event {
                    if self.kernel.cancel(ev) {
                        discarded += 1;
                        self.emit(
                            node,
                            TimelineKind::Log,
                            format!("pending device response discarded exchange={id}"),
                        );
                    }
                }
                if let Some(ev) = exchange.deadline_event {
                    self.kernel.cancel(ev);
                }
            } else {
                self.can.exchange = Some((id, exchange));
            }
        }
        discarded
    }

    pub(crate) fn dispatch_can_response(&mut self, exchange_id: u64, frames: Vec<CanFrame>) {
        let Some((id, exchange)) = &self.can.exchange else {
            return;
        };
        if *id != exchange_id {
            return;
        }
        let owner = exchange.owner.clone();
        let deadline_event = exchange.deadline_event;
        let device_id = exchange.device_id;
        self.can.exchange = None;
        if let Some(ev) = deadline_event {
            self.kernel.cancel(ev);
        } else {
            // Response landed before the owner armed a deadline; deliver anyway.
        }
        self.emit(
            &owner,
            TimelineKind::Log,
            format!(
                "device response id=0x{device_id:03x} frames={}",
                frames.len()
            ),
        );
        self.with_behavior(&owner.clone(), |b, cx| {
            b.on_can_event(cx, CanEvent::Response { frames })
        });
    }

    pub(crate) fn dispatch_can_deadline(&mut self, exchange_id: u64) {
        let Some((id, exchange)) = &self.can.exchange else {
            return;
        };
        if *id != exchange_id {
            return;
        }
        let owner = exchange.owner.clone();
        let device_id = exchange.device_id;
        let response_event = exchange.response_event;
        self.can.exchange = None;
        if let Some(ev) = response_event {
            self.kernel.cancel(ev);
        }
        self.emit(
            &owner,
            TimelineKind::Timeout,
            format!("device=0x{device_id:03x}"),
        );
        self.with_behavior(&owner.clone(), |b, cx| {
            b.on_can_event(cx, CanEvent::Timeout)
        });
    }
}
