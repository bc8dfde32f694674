//! The simulation world: owns the kernel, bus, CAN bus, node roster, fault
//! machinery and timeline, and serializes every handler invocation.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::bus::{
    ActionUpdate, DeliveryModel, Envelope, GoalState, PendingCall, ServiceEntry, ServiceRequest,
    SubId, Subscription, TopicName,
};
use crate::can::{CanBus, CanFrame};
use crate::fault::{FaultInjection, Ring, Watchdog};
use crate::kernel::{EventId, Kernel};
use crate::lifecycle::{
    CallbackOutcome, LifecycleError, LifecycleState, Resolution, TransitionKind,
};
use crate::node::{Behavior, NodeId, NodeSlot, ParamValue, RunState, SharedBehavior, TimerTag};
use crate::rng::SplitMix64;
use crate::time::SimTime;
use crate::timeline::{Timeline, TimelineKind};

/// Clock mode for a run, fixed at start.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ClockMode {
    #[default]
    Deterministic,
    /// Same event semantics, dispatch paced against the wall clock.
    /// Determinism guarantees are suspended in this mode.
    WallClock,
}

impl ClockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClockMode::Deterministic => "deterministic",
            ClockMode::WallClock => "wall_clock",
        }
    }
}

/// Deferred work dispatched by the event loop.
pub(crate) enum SimEvent {
    Deliver {
        sub: SubId,
        env: Envelope,
    },
    ServiceArrive {
        call: u64,
        request: ServiceRequest,
    },
    ServiceRespond {
        call: u64,
        payload: Vec<u8>,
    },
    ServiceDeadline {
        call: u64,
    },
    NodeTimer {
        node: NodeId,
        generation: u32,
        tag: TimerTag,
    },
    TransitionComplete {
        node: NodeId,
        generation: u32,
        kind: TransitionKind,
    },
    CanResponse {
        exchange: u64,
        frames: Vec<CanFrame>,
    },
    CanDeadline {
        exchange: u64,
    },
    GoalArrive {
        goal: u64,
    },
    ActionDeliver {
        goal: u64,
        update: ActionUpdate,
    },
    GoalDeadline {
        goal: u64,
    },
    Uplink {
        node: NodeId,
        bytes: Vec<u8>,
    },
    ApplyFault {
        index: usize,
    },
    WatchdogCheck {
        feed_count: u64,
    },
    Respawn {
        node: NodeId,
    },
    RebootRestore,
}

/// Builds a node's behavior from its recorded setup; returns None when the
/// template cannot serve that node's role.
pub type TemplateFn = Rc<dyn Fn(&NodeId) -> Option<Box<dyn Behavior>>>;

pub(crate) struct NodeFactory {
    pub template: String,
}

/// Synthetic image captured during a run, persisted by the harness.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredImage {
    pub image_id: u32,
    pub width: u16,
    pub height: u16,
    pub captured_at: SimTime,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub scenario_name: String,
    pub seed: u64,
    pub mode: ClockMode,
    pub delivery: DeliveryModel,
    pub watchdog_enabled: bool,
    pub watchdog_timeout_us: u64,
    pub respawn_delay_us: u64,
    pub reboot_delay_us: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario_name: "adhoc".into(),
            seed: 1,
            mode: ClockMode::Deterministic,
            delivery: DeliveryModel::default(),
            watchdog_enabled: false,
            watchdog_timeout_us: 3_000_000,
            respawn_delay_us: 100_000,
            reboot_delay_us: 500_000,
        }
    }
}

pub struct Sim {
    pub(crate) kernel: Kernel<SimEvent>,
    pub(crate) rng: SplitMix64,
    pub(crate) delivery: DeliveryModel,
    pub(crate) mode: ClockMode,

    pub(crate) roster: BTreeMap<NodeId, NodeSlot>,
    pub(crate) roster_order: Vec<NodeId>,
    pub(crate) factories: BTreeMap<NodeId, NodeFactory>,
    pub(crate) templates: BTreeMap<String, TemplateFn>,

    // bus state
    pub(crate) subs: BTreeMap<SubId, Subscription>,
    pub(crate) topic_subs: BTreeMap<TopicName, Vec<SubId>>,
    pub(crate) next_sub_id: u64,
    pub(crate) seqs: BTreeMap<(NodeId, TopicName), u64>,
    pub(crate) fifo_floor: BTreeMap<(NodeId, SubId), SimTime>,
    pub(crate) services: BTreeMap<TopicName, ServiceEntry>,
    pub(crate) calls: BTreeMap<u64, PendingCall>,
    pub(crate) next_call_id: u64,
    pub(crate) blocking_outcomes: BTreeMap<u64, (SimTime, crate::bus::ServiceOutcome)>,
    pub(crate) action_servers: BTreeMap<TopicName, NodeId>,
    pub(crate) goals: BTreeMap<u64, GoalState>,
    pub(crate) next_goal_id: u64,

    pub(crate) can: CanBus,

    // fault machinery
    pub(crate) watchdog: Watchdog,
    pub(crate) ring: Option<Ring>,
    pub(crate) respawn_delay_us: u64,
    pub(crate) reboot_delay_us: u64,
    pub(crate) rebooting: bool,
    pub(crate) fault_plan: Vec<FaultInjection>,
    pub(crate) extra_bus_hold: BTreeMap<NodeId, u64>,
    pub(crate) probe_drops: BTreeMap<NodeId, u32>,
    pub(crate) corrupt_next_uplink: bool,
    pub(crate) pending_respawns: BTreeSet<NodeId>,

    // run outputs
    pub(crate) timeline: Timeline,
    pub(crate) metrics: BTreeMap<String, Vec<u64>>,
    pub(crate) downlink: Vec<u8>,
    pub(crate) images: Vec<StoredImage>,
}

impl Sim {
    pub fn new(config: SimConfig) -> Sim {
        Sim {
            kernel: Kernel::new(),
            rng: SplitMix64::new(config.seed),
            delivery: config.delivery,
            mode: config.mode,
            roster: BTreeMap::new(),
            roster_order: Vec::new(),
            factories: BTreeMap::new(),
            templates: BTreeMap::new(),
            subs: BTreeMap::new(),
            topic_subs: BTreeMap::new(),
            next_sub_id: 0,
            seqs: BTreeMap::new(),
            fifo_floor: BTreeMap::new(),
            services: BTreeMap::new(),
            calls: BTreeMap::new(),
            next_call_id: 0,
            blocking_outcomes: BTreeMap::new(),
            action_servers: BTreeMap::new(),
            goals: BTreeMap::new(),
            next_goal_id: 0,
            can: CanBus::new(),
            watchdog: Watchdog::new(config.watchdog_enabled, config.watchdog_timeout_us),
            ring: None,
            respawn_delay_us: config.respawn_delay_us,
            reboot_delay_us: config.reboot_delay_us,
            rebooting: false,
            fault_plan: Vec::new(),
            extra_bus_hold: BTreeMap::new(),
            probe_drops: BTreeMap::new(),
            corrupt_next_uplink: false,
            pending_respawns: BTreeSet::new(),
            timeline: Timeline::new(&config.scenario_name, config.seed, config.mode.as_str()),
            metrics: BTreeMap::new(),
            downlink: Vec::new(),
            images: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    /// Fire time of the earliest pending event, if any.
    pub fn next_event_time(&self) -> Option<SimTime> {
        self.kernel.next_time()
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn take_timeline(self) -> Timeline {
        self.timeline
    }

    pub fn downlink_bytes(&self) -> &[u8] {
        &self.downlink
    }

    pub fn images(&self) -> &[StoredImage] {
        &self.images
    }

    pub fn latency_samples(&self) -> &BTreeMap<String, Vec<u64>> {
        &self.metrics
    }

    pub(crate) fn emit(&mut self, node: &NodeId, kind: TimelineKind, detail: String) {
        let now = self.kernel.now();
        self.timeline.push(now, node, kind, detail);
    }

    /// Runs the node's behavior under a context. Returns None when the node
    /// is missing, crashed, behaviorless, or already borrowed (re-entrant).
    pub(crate) fn with_behavior<R>(
        &mut self,
        node: &NodeId,
        f: impl FnOnce(&mut dyn Behavior, &mut Cx<'_>) -> R,
    ) -> Option<R> {
        let slot = self.roster.get(node)?;
        if slot.dead {
            return None;
        }
        let behavior: SharedBehavior = slot.behavior.clone()?;
        let Ok(mut guard) = behavior.try_borrow_mut() else {
            self.emit(
                node,
                TimelineKind::Log,
                "re-entrant dispatch suppressed".into(),
            );
            return None;
        };
        let mut cx = Cx {
            sim: self,
            node: node.clone(),
        };
        Some(f(&mut **guard, &mut cx))
    }

    // --- roster -----------------------------------------------------------

    /// Registers a node with a behavior; it starts Unconfigured.
    pub fn spawn(&mut self, id: &NodeId, behavior: Box<dyn Behavior>) {
        let kind = behavior.kind();
        let generation = self.roster.get(id).map(|s| s.generation + 1).unwrap_or(0);
        let slot = NodeSlot::new(Some(Rc::new(RefCell::new(behavior))), generation);
        self.roster.insert(id.clone(), slot);
        if !self.roster_order.contains(id) {
            self.roster_order.push(id.clone());
        }
        self.emit(
            id,
            TimelineKind::Log,
            format!("spawned kind={kind} generation={generation}"),
        );
    }

    /// Registers a behaviorless endpoint, brought straight to Active. Used by
    /// tests and tools that drive the bus with closures.
    pub fn register_endpoint(&mut self, name: &str) -> NodeId {
        let id = NodeId::from(name);
        self.spawn_endpoint_slot(&id);
        id
    }

    fn spawn_endpoint_slot(&mut self, id: &NodeId) {
        let generation = self.roster.get(id).map(|s| s.generation + 1).unwrap_or(0);
        let slot = NodeSlot::new(None, generation);
        self.roster.insert(id.clone(), slot);
        if !self.roster_order.contains(id) {
            self.roster_order.push(id.clone());
        }
        self.request_transition(id, TransitionKind::Configure)
            .expect("fresh endpoint configures");
        self.request_transition(id, TransitionKind::Activate)
            .expect("fresh endpoint activates");
    }

    /// Registers a behavior template under `name` for maintenance/respawn.
    pub fn register_template(&mut self, name: &str, template: TemplateFn) {
        self.templates.insert(name.to_string(), template);
    }

    /// Records which template builds `node`, for supervisor restarts.
    pub fn set_factory(&mut self, node: &NodeId, template: &str) {
        self.factories.insert(
            node.clone(),
            NodeFactory {
                template: template.to_string(),
            },
        );
    }

    /// Builds a node instance from its registered factory template.
    pub(crate) fn build_from_factory(&mut self, node: &NodeId) -> Option<Box<dyn Behavior>> {
        let template = self.factories.get(node)?.template.clone();
        let f = self.templates.get(&template)?.clone();
        f(node)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.roster_order.clone()
    }

    pub fn is_dead(&self, node: &NodeId) -> bool {
        self.roster.get(node).map(|s| s.dead).unwrap_or(false)
    }

    // --- lifecycle orchestration -------------------------------------------

    /// Instantaneous lifecycle state of a node.
    pub fn current_state(&self, node: &NodeId) -> Result<LifecycleState, LifecycleError> {
        self.roster
            .get(node)
            .map(|s| s.lifecycle.state())
            .ok_or_else(|| LifecycleError::UnknownNode(node.to_string()))
    }

    pub fn run_state(&self, node: &NodeId) -> Option<RunState> {
        self.roster.get(node).and_then(|s| s.run_state)
    }

    /// Configures the simulated duration of a node's transition callbacks.
    pub fn set_transition_delay(&mut self, node: &NodeId, delay_us: u64) {
        if let Some(slot) = self.roster.get_mut(node) {
            slot.transition_delay_us = delay_us;
        }
    }

    /// Requests a lifecycle transition. With the default zero callback
    /// duration the transition completes within this call and the new primary
    /// state is returned; with a configured duration, the transition state is
    /// returned and completion is scheduled. Requests against a node already
    /// in transition are queued FIFO.
    pub fn request_transition(
        &mut self,
        node: &NodeId,
        kind: TransitionKind,
    ) -> Result<LifecycleState, LifecycleError> {
        let slot = self
            .roster
            .get_mut(node)
            .ok_or_else(|| LifecycleError::UnknownNode(node.to_string()))?;
        if slot.in_transition.is_some() {
            slot.queued_transitions.push_back(kind);
            return Ok(slot.lifecycle.state());
        }
        self.begin_transition(node, kind)
    }

    fn begin_transition(
        &mut self,
        node: &NodeId,
        kind: TransitionKind,
    ) -> Result<LifecycleState, LifecycleError> {
        let slot = self
            .roster
            .get_mut(node)
            .ok_or_else(|| LifecycleError::UnknownNode(node.to_string()))?;
        let before = slot.lifecycle.state();
        let trans_state = slot.lifecycle.begin(kind)?;
        slot.in_transition = Some(kind);
        let delay = slot.transition_delay_us;
        let generation = slot.generation;
        self.emit(
            node,
            TimelineKind::StateChange,
            format!("lifecycle {before}->{trans_state} request={kind}"),
        );
        if delay == 0 {
            Ok(self.complete_transition(node, kind))
        } else {
            self.kernel
                .schedule_after(
                    delay,
                    SimEvent::TransitionComplete {
                        node: node.clone(),
                        generation,
                        kind,
                    },
                )
                .ok();
            Ok(trans_state)
        }
    }

    /// Runs the callback and resolves the machine; then drains queued requests.
    fn complete_transition(&mut self, node: &NodeId, kind: TransitionKind) -> LifecycleState {
        let outcome = self
            .with_behavior(node, |b, cx| match kind {
                TransitionKind::Configure => b.on_configure(cx),
                TransitionKind::Activate => b.on_activate(cx),
                TransitionKind::Deactivate => b.on_deactivate(cx),
                TransitionKind::Cleanup => b.on_cleanup(cx),
                TransitionKind::Shutdown => b.on_shutdown(cx),
            })
            .unwrap_or(CallbackOutcome::Success);
        let Some(slot) = self.roster.get_mut(node) else {
            return LifecycleState::Finalized;
        };
        let trans_state = slot.lifecycle.state();
        let resolution = slot.lifecycle.resolve(kind, outcome);
        slot.in_transition = None;
        let final_state = resolution.final_state();
        match resolution {
            Resolution::Completed(state) => {
                self.emit(
                    node,
                    TimelineKind::StateChange,
                    format!("lifecycle {trans_state}->{state}"),
                );
            }
            Resolution::Errored { ended_in } => {
                self.emit(
                    node,
                    TimelineKind::StateChange,
                    format!("lifecycle {trans_state}->ErrorProcessing callback={kind} failed"),
                );
                self.emit(
                    node,
                    TimelineKind::StateChange,
                    format!("lifecycle ErrorProcessing->{ended_in}"),
                );
            }
        }
        if final_state == LifecycleState::Finalized {
            self.detach_node(node);
        }
        // Serialized follow-ups for this node.
        let next = self
            .roster
            .get_mut(node)
            .and_then(|s| s.queued_transitions.pop_front());
        if let Some(next_kind) = next {
            if let Err(err) = self.begin_transition(node, next_kind) {
                self.emit(
                    node,
                    TimelineKind::Log,
                    format!("queued {next_kind} dropped: {err}"),
                );
            }
        }
        final_state
    }

    pub(crate) fn dispatch_transition_complete(
        &mut self,
        node: &NodeId,
        generation: u32,
        kind: TransitionKind,
    ) {
        let Some(slot) = self.roster.get(node) else {
            return;
        };
        if slot.generation != generation || slot.in_transition != Some(kind) {
            return;
        }
        self.complete_transition(node, kind);
    }

    /// Tears down the endpoints of a node that reached Finalized (or died).
    pub(crate) fn detach_node(&mut self, node: &NodeId) {
        let sub_ids: Vec<SubId> = self
            .subs
            .iter()
            .filter(|(_, s)| s.subscriber == *node)
            .map(|(id, _)| *id)
            .collect();
        for id in sub_ids {
            self.unsubscribe(id);
        }
        let services: Vec<TopicName> = self
            .services
            .iter()
            .filter(|(_, e)| e.server == *node)
            .map(|(name, _)| name.clone())
            .collect();
        for name in services {
            self.services.remove(&name);
        }
        let actions: Vec<TopicName> = self
            .action_servers
            .iter()
            .filter(|(_, server)| *server == node)
            .map(|(name, _)| name.clone())
            .collect();
        for name in actions {
            self.action_servers.remove(&name);
        }
        self.can_clear_owner(node);
    }

    /// Marks a node crashed: handlers stop running, pending events for this
    /// instance are invalidated, endpoints disappear. Lifecycle state stays
    /// frozen until a supervisor restarts or reboots it.
    pub fn kill_node(&mut self, node: &NodeId) {
        let Some(slot) = self.roster.get_mut(node) else {
            return;
        };
        if slot.dead {
            return;
        }
        slot.dead = true;
        slot.generation += 1;
        slot.in_transition = None;
        slot.queued_transitions.clear();
        self.emit(node, TimelineKind::Log, "killed (fault injection)".into());
        self.detach_node(node);
    }

    /// Finalizes a crashed node without running callbacks.
    pub(crate) fn force_finalize(&mut self, node: &NodeId) {
        let Some(slot) = self.roster.get_mut(node) else {
            return;
        };
        let before = slot.lifecycle.state();
        if before == LifecycleState::Finalized {
            return;
        }
        slot.lifecycle.force_finalize();
        slot.in_transition = None;
        slot.queued_transitions.clear();
        self.emit(
            node,
            TimelineKind::StateChange,
            format!("lifecycle {before}->Finalized forced=true"),
        );
        self.detach_node(node);
    }

    // --- run loop -----------------------------------------------------------

    /// Dispatches every event due up to `t`, then advances the clock to `t`.
    pub fn run_until(&mut self, t: SimTime) -> usize {
        let mut fired = 0;
        while let Some((_, _, ev)) = self.kernel.pop_due(t) {
            self.dispatch(ev);
            fired += 1;
        }
        self.kernel.run_until(t, |_, _| {});
        fired
    }

    /// Dispatches the single next event, if any.
    pub fn step(&mut self) -> bool {
        match self.kernel.pop_due(SimTime(u64::MAX)) {
            Some((_, _, ev)) => {
                self.dispatch(ev);
                true
            }
            None => false,
        }
    }

    /// Ends the run; further scheduling is rejected.
    pub fn finish(&mut self) {
        self.kernel.close();
    }

    fn dispatch(&mut self, ev: SimEvent) {
        match ev {
            SimEvent::Deliver { sub, env } => self.dispatch_deliver(sub, env),
            SimEvent::ServiceArrive { call, request } => {
                self.dispatch_service_arrive(call, request)
            }
            SimEvent::ServiceRespond { call, payload } => {
                self.dispatch_service_respond(call, payload)
            }
            SimEvent::ServiceDeadline { call } => self.dispatch_service_deadline(call),
            SimEvent::NodeTimer {
                node,
                generation,
                tag,
            } => {
                let current = self.roster.get(&node).map(|s| (s.generation, s.dead));
                if current == Some((generation, false)) {
                    self.with_behavior(&node, |b, cx| b.on_timer(cx, tag));
                }
            }
            SimEvent::TransitionComplete {
                node,
                generation,
                kind,
            } => self.dispatch_transition_complete(&node, generation, kind),
            SimEvent::CanResponse { exchange, frames } => {
                self.dispatch_can_response(exchange, frames)
            }
            SimEvent::CanDeadline { exchange } => self.dispatch_can_deadline(exchange),
            SimEvent::GoalArrive { goal } => self.dispatch_goal_arrive(goal),
            SimEvent::ActionDeliver { goal, update } => self.dispatch_action_deliver(goal, update),
            SimEvent::GoalDeadline { goal } => self.dispatch_goal_deadline(goal),
            SimEvent::Uplink { node, bytes } => self.dispatch_uplink(node, bytes),
            SimEvent::ApplyFault { index } => self.apply_fault(index),
            SimEvent::WatchdogCheck { feed_count } => self.watchdog_check(feed_count),
            SimEvent::Respawn { node } => self.dispatch_respawn(&node),
            SimEvent::RebootRestore => self.dispatch_reboot_restore(),
        }
    }

    fn dispatch_uplink(&mut self, node: NodeId, mut bytes: Vec<u8>) {
        if self.corrupt_next_uplink {
            self.corrupt_next_uplink = false;
            if !bytes.is_empty() {
                let idx = bytes.len() / 2;
                bytes[idx] ^= 0x01;
            }
            self.emit(&node, TimelineKind::Log, "uplink corrupted (fault)".into());
        }
        self.emit(
            &node,
            TimelineKind::Log,
            format!("uplink received bytes={}", bytes.len()),
        );
        self.with_behavior(&node, |b, cx| b.on_uplink(cx, &bytes));
    }

    /// Schedules raw uplink bytes for delivery to `node` at time `at`.
    pub fn schedule_uplink(&mut self, node: &NodeId, at: SimTime, bytes: Vec<u8>) {
        self.kernel
            .schedule_at(
                at,
                SimEvent::Uplink {
                    node: node.clone(),
                    bytes,
                },
            )
            .ok();
    }

    /// Records a fault plan and schedules its triggers.
    pub fn schedule_faults(&mut self, faults: Vec<FaultInjection>) {
        for (index, fault) in faults.iter().enumerate() {
            self.kernel
                .schedule_at(fault.at, SimEvent::ApplyFault { index })
                .ok();
        }
        self.fault_plan = faults;
    }

    /// Appends frame bytes to the downlink byte stream.
    pub(crate) fn push_downlink(&mut self, bytes: &[u8]) {
        self.downlink.extend_from_slice(bytes);
    }
}

/// Handler context: the node's window onto the world. All operations only
/// enqueue events; nothing re-enters another handler synchronously.
pub struct Cx<'a> {
    pub(crate) sim: &'a mut Sim,
    pub(crate) node: NodeId,
}

impl Cx<'_> {
    pub fn now(&self) -> SimTime {
        self.sim.kernel.now()
    }

    pub fn me(&self) -> &NodeId {
        &self.node
    }

    pub fn my_state(&self) -> LifecycleState {
        self.sim
            .current_state(&self.node)
            .unwrap_or(LifecycleState::Finalized)
    }

    pub fn is_active(&self) -> bool {
        self.my_state() == LifecycleState::Active
    }

    pub fn log(&mut self, detail: impl Into<String>) {
        let node = self.node.clone();
        self.sim.emit(&node, TimelineKind::Log, detail.into());
    }

    pub fn emit(&mut self, kind: TimelineKind, detail: String) {
        let node = self.node.clone();
        self.sim.emit(&node, kind, detail);
    }

    // bus
    pub fn publish(&mut self, topic: &str, payload: Vec<u8>) -> Result<u64, crate::bus::BusError> {
        let node = self.node.clone();
        self.sim.publish(&node, topic, payload)
    }

    pub fn subscribe(&mut self, topic: &str, tag: crate::node::SubTag) {
        let node = self.node.clone();
        if let Err(err) = self.sim.subscribe(&node, topic, tag) {
            self.log(format!("subscribe failed topic={topic} error={err}"));
        }
    }

    pub fn register_service(&mut self, service: &str) {
        let node = self.node.clone();
        if let Err(err) = self.sim.register_service(&node, service) {
            self.log(format!(
                "service registration failed name={service} error={err}"
            ));
        }
    }

    pub fn unregister_service(&mut self, service: &str) {
        self.sim.unregister_service(service);
    }

    pub fn call_service(
        &mut self,
        service: &str,
        payload: Vec<u8>,
        timeout_us: u64,
        token: crate::node::CallToken,
    ) {
        let node = self.node.clone();
        if let Err(err) = self
            .sim
            .call_service(&node, service, payload, timeout_us, token)
        {
            self.log(format!("service call failed name={service} error={err}"));
        }
    }

    // timers
    pub fn schedule(&mut self, delay_us: u64, tag: TimerTag) -> Option<EventId> {
        let generation = self.sim.roster.get(&self.node)?.generation;
        self.sim
            .kernel
            .schedule_after(
                delay_us,
                SimEvent::NodeTimer {
                    node: self.node.clone(),
                    generation,
                    tag,
                },
            )
            .ok()
    }

    pub fn cancel_timer(&mut self, id: EventId) -> bool {
        self.sim.kernel.cancel(id)
    }

    // run state
    pub fn run_state(&self) -> Option<RunState> {
        self.sim.run_state(&self.node)
    }

    /// Moves the payload run state, enforcing the legal-move table. Illegal
    /// moves are refused and logged.
    pub fn set_run_state(&mut self, next: RunState) -> bool {
        let node = self.node.clone();
        let Some(slot) = self.sim.roster.get_mut(&node) else {
            return false;
        };
        let current = slot.run_state;
        let legal = match current {
            None => next == RunState::Off, // initial entry
            Some(c) => c.can_move_to(next),
        };
        if !legal {
            let from = current.map(|c| c.as_str()).unwrap_or("none");
            self.sim.emit(
                &node,
                TimelineKind::Log,
                format!("illegal run transition {from}->{next} refused"),
            );
            return false;
        }
        slot.run_state = Some(next);
        let from = current.map(|c| c.as_str()).unwrap_or("none");
        self.sim.emit(
            &node,
            TimelineKind::StateChange,
            format!("run {from}->{next}"),
        );
        true
    }

    // parameters
    pub fn declare_param(&mut self, key: &str, value: ParamValue) {
        let node = self.node.clone();
        self.sim.declare_parameter(&node, key, value);
    }

    pub fn param(&self, key: &str) -> Option<ParamValue> {
        self.sim
            .roster
            .get(&self.node)
            .and_then(|s| s.params.get(key).cloned())
    }

    pub fn set_parameter(
        &mut self,
        node: &NodeId,
        key: &str,
        value: ParamValue,
    ) -> Result<ParamValue, crate::bus::BusError> {
        self.sim.set_parameter(node, key, value)
    }

    pub fn get_parameter(
        &self,
        node: &NodeId,
        key: &str,
    ) -> Result<ParamValue, crate::bus::BusError> {
        self.sim.get_parameter(node, key)
    }

    // CAN
    pub fn can_acquire(&mut self) -> Result<crate::can::AcquireOutcome, crate::can::CanError> {
        let node = self.node.clone();
        self.sim.can_acquire(&node)
    }

    pub fn can_send(&mut self, frame: &CanFrame) -> Result<(), crate::can::CanError> {
        let node = self.node.clone();
        self.sim.can_send(&node, frame)
    }

    pub fn can_await_response(&mut self, timeout_us: u64) -> Result<(), crate::can::CanError> {
        let node = self.node.clone();
        self.sim.can_await_response(&node, timeout_us)
    }

    pub fn can_release(&mut self) -> Result<usize, crate::can::CanError> {
        let node = self.node.clone();
        self.sim.can_release(&node)
    }

    pub fn can_is_free(&self) -> bool {
        self.sim.can_is_free()
    }

    pub fn can_owner(&self) -> Option<NodeId> {
        self.sim.can_owner()
    }

    pub fn can_set_grant(&mut self, node: Option<NodeId>) {
        self.sim.can_set_grant(node);
    }

    /// One-shot extra bus occupancy injected by a fault, consumed here.
    pub fn take_extra_bus_hold(&mut self) -> u64 {
        self.sim.extra_bus_hold.remove(&self.node).unwrap_or(0)
    }

    // actions
    pub fn send_goal(
        &mut self,
        action: &str,
        goal: Vec<u8>,
        deadline_us: Option<u64>,
    ) -> Result<crate::bus::GoalId, crate::bus::BusError> {
        let node = self.node.clone();
        self.sim.send_goal(&node, action, goal, deadline_us)
    }

    pub fn register_action_server(&mut self, action: &str) {
        let node = self.node.clone();
        if let Err(err) = self.sim.register_action_server(&node, action) {
            self.log(format!(
                "action registration failed name={action} error={err}"
            ));
        }
    }

    pub fn action_feedback(&mut self, goal: crate::bus::GoalId, data: Vec<u8>) {
        self.sim.action_feedback(goal, data);
    }

    pub fn action_succeed(&mut self, goal: crate::bus::GoalId, result: Vec<u8>) {
        self.sim.action_succeed(goal, result);
    }

    pub fn action_abort(&mut self, goal: crate::bus::GoalId, reason: &str) {
        self.sim.action_abort(goal, reason);
    }

    // system
    pub fn feed_watchdog(&mut self) {
        let node = self.node.clone();
        self.sim.feed_watchdog_from(&node);
    }

    /// Issues this node's liveness probe; returns false when the node is not
    /// part of the ring.
    pub fn ring_probe(&mut self) -> bool {
        let node = self.node.clone();
        self.sim.start_probe(&node)
    }

    /// On-line node replacement: validate, tear down, rebuild after
    /// `build_delay_us`. Errors leave the old node untouched.
    pub fn replace_node(
        &mut self,
        target: &NodeId,
        template: &str,
        build_delay_us: u64,
    ) -> Result<(), String> {
        self.sim.replace_node_impl(target, template, build_delay_us)
    }

    pub fn store_image(&mut self, image: StoredImage) {
        let node = self.node.clone();
        self.sim.emit(
            &node,
            TimelineKind::Log,
            format!(
                "image stored id={} bytes={}",
                image.image_id,
                image.pixels.len()
            ),
        );
        self.sim.images.push(image);
    }

    pub fn push_downlink(&mut self, bytes: &[u8]) {
        self.sim.push_downlink(bytes);
    }

    pub fn goal_exchange(&self, goal: crate::bus::GoalId) -> Option<crate::bus::ActionExchange> {
        self.sim.goal_exchange(goal)
    }
}
