//! In-process reliable pub-sub, request-response, goal/feedback/result and
//! remote-parameter messaging, with simulated delivery latency.
//!
//! Everything here only *schedules* kernel events; handlers are invoked from
//! event dispatch, never synchronously from inside another handler.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::kernel::EventId;
use crate::node::{CallToken, NodeId, ParamValue, SubTag};
use crate::sim::{Cx, Sim, SimEvent};
use crate::time::SimTime;
use crate::timeline::TimelineKind;

/// Topic or service name: '/'-separated non-empty segments, no whitespace.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TopicName(Arc<str>);

impl TopicName {
    pub fn new(name: &str) -> Result<TopicName, BusError> {
        if name.is_empty() {
            return Err(BusError::InvalidTopic("empty name".into()));
        }
        if name.chars().any(char::is_whitespace) {
            return Err(BusError::InvalidTopic(format!(
                "whitespace in topic {name:?}"
            )));
        }
        let segments = name.strip_prefix('/').unwrap_or(name);
        if segments.is_empty() || segments.split('/').any(str::is_empty) {
            return Err(BusError::InvalidTopic(format!(
                "empty segment in topic {name:?}"
            )));
        }
        Ok(TopicName(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A timestamped, sequenced message on a topic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub topic: TopicName,
    pub publisher: NodeId,
    /// Strictly increasing per (publisher, topic), starting at 1.
    pub seq: u64,
    pub publish_time: SimTime,
    pub payload: Vec<u8>,
}

/// Delivery latency model: `delivered = publish + base + jitter`, jitter
/// uniform over `[0, jitter_bound]`, FIFO preserved per
/// (publisher, subscriber, topic) edge.
#[derive(Clone, Copy, Debug)]
pub struct DeliveryModel {
    pub base_delay_us: u64,
    pub jitter_bound_us: u64,
}

impl Default for DeliveryModel {
    fn default() -> Self {
        DeliveryModel {
            base_delay_us: 300,
            jitter_bound_us: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SubId(pub u64);

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("unknown-publisher: {0}")]
    UnknownPublisher(String),
    #[error("unknown-subscriber: {0}")]
    UnknownSubscriber(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate subscription")]
    DuplicateSubscription,
    #[error("service already has a server")]
    ServiceTaken,
    #[error("no action server registered")]
    NoActionServer,
    #[error("unknown-parameter: {0}")]
    UnknownParameter(String),
    #[error("unreachable")]
    Unreachable,
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
}

pub(crate) type MessageFn = Rc<RefCell<dyn FnMut(&mut Cx<'_>, &Envelope)>>;
pub(crate) type RequestFn = Rc<RefCell<dyn FnMut(&mut Cx<'_>, &ServiceRequest) -> Vec<u8>>>;
pub(crate) type UpdateFn = Rc<RefCell<dyn FnMut(&mut Cx<'_>, GoalId, &ActionUpdate)>>;

pub(crate) enum MessageSink {
    Closure(MessageFn),
    Node { tag: SubTag },
}

pub(crate) struct Subscription {
    pub subscriber: NodeId,
    pub topic: TopicName,
    pub sink: MessageSink,
}

/// A request in flight to a service server.
#[derive(Clone, Debug)]
pub struct ServiceRequest {
    pub service: TopicName,
    pub request_id: u64,
    pub sender: NodeId,
    pub payload: Vec<u8>,
    pub deadline: SimTime,
}

/// Terminal outcome of a service call: exactly one of these per call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServiceOutcome {
    Response(Vec<u8>),
    Timeout,
}

pub(crate) enum RequestSink {
    Closure(RequestFn),
    Node,
}

pub(crate) struct ServiceEntry {
    pub server: NodeId,
    pub sink: RequestSink,
    /// Simulated handler duration before the response leaves the server.
    pub processing_delay_us: u64,
}

pub(crate) type OutcomeFn = Box<dyn FnOnce(&mut Cx<'_>, ServiceOutcome)>;

pub(crate) enum ReplySink {
    Closure(Option<OutcomeFn>),
    Node {
        token: CallToken,
    },
    /// Liveness-ring probe; resolution feeds the no-response counters.
    Ring,
    /// Outcome parked for `call_service_blocking`.
    Blocking,
}

pub(crate) struct PendingCall {
    pub client: NodeId,
    pub service: TopicName,
    pub resolved: bool,
    pub reply: ReplySink,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct GoalId(pub u64);

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GoalStatus {
    Accepted,
    Executing,
    Succeeded,
    Aborted,
}

impl GoalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalStatus::Accepted => "accepted",
            GoalStatus::Executing => "executing",
            GoalStatus::Succeeded => "succeeded",
            GoalStatus::Aborted => "aborted",
        }
    }
}

/// Update delivered to an action client, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionUpdate {
    Accepted,
    Executing,
    Feedback(Vec<u8>),
    Result {
        status: GoalStatus,
        payload: Vec<u8>,
    },
}

pub(crate) enum ActionClientSink {
    Closure(UpdateFn),
    Node,
}

pub(crate) struct GoalState {
    pub client: NodeId,
    pub server: Option<NodeId>,
    pub goal: Vec<u8>,
    pub status: GoalStatus,
    pub feedback: Vec<Vec<u8>>,
    pub result: Option<(GoalStatus, Vec<u8>)>,
    pub sink: ActionClientSink,
    /// Set once a terminal update has been issued; later server calls are
    /// discarded.
    pub closed: bool,
    pub deadline_event: Option<EventId>,
    /// FIFO floor for client-bound updates.
    pub last_update_at: SimTime,
}

/// Client-observable view of one goal exchange.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionExchange {
    pub goal_id: GoalId,
    pub goal: Vec<u8>,
    pub feedback: Vec<Vec<u8>>,
    pub result: Option<Vec<u8>>,
    pub status: GoalStatus,
}

impl Sim {
    /// Publishes `payload` on `topic`; one envelope is scheduled per live
    /// subscriber. Returns the assigned per-(publisher, topic) sequence.
    pub fn publish(
        &mut self,
        publisher: &NodeId,
        topic: &str,
        payload: Vec<u8>,
    ) -> Result<u64, BusError> {
        let topic = TopicName::new(topic)?;
        let slot = self
            .roster
            .get(publisher)
            .ok_or_else(|| BusError::UnknownPublisher(publisher.to_string()))?;
        if slot.lifecycle.state() == crate::lifecycle::LifecycleState::Finalized {
            return Err(BusError::Unreachable);
        }
        let seq = {
            let counter = self
                .seqs
                .entry((publisher.clone(), topic.clone()))
                .or_insert(0);
            *counter += 1;
            *counter
        };
        let now = self.kernel.now();
        self.emit(
            publisher,
            TimelineKind::Publish,
            format!("topic={} seq={} bytes={}", topic, seq, payload.len()),
        );
        let sub_ids: Vec<SubId> = self.topic_subs.get(&topic).cloned().unwrap_or_default();
        for sub_id in sub_ids {
            let jitter = self.rng.next_inclusive(self.delivery.jitter_bound_us);
            let raw = now + self.delivery.base_delay_us + jitter;
            let floor = self
                .fifo_floor
                .get(&(publisher.clone(), sub_id))
                .copied()
                .unwrap_or(SimTime::ZERO);
            let at = raw.max(floor);
            self.fifo_floor.insert((publisher.clone(), sub_id), at);
            let env = Envelope {
                topic: topic.clone(),
                publisher: publisher.clone(),
                seq,
                publish_time: now,
                payload: payload.clone(),
            };
            self.kernel
                .schedule_at(at, SimEvent::Deliver { sub: sub_id, env })
                .ok();
        }
        Ok(seq)
    }

    /// Subscribes a node-dispatched handler (delivered to `Behavior::on_envelope`).
    pub fn subscribe(
        &mut self,
        subscriber: &NodeId,
        topic: &str,
        tag: SubTag,
    ) -> Result<SubId, BusError> {
        self.subscribe_sink(subscriber, topic, MessageSink::Node { tag })
    }

    /// Subscribes a closure handler.
    pub fn subscribe_fn(
        &mut self,
        subscriber: &NodeId,
        topic: &str,
        handler: impl FnMut(&mut Cx<'_>, &Envelope) + 'static,
    ) -> Result<SubId, BusError> {
        self.subscribe_sink(
            subscriber,
            topic,
            MessageSink::Closure(Rc::new(RefCell::new(handler))),
        )
    }

    fn subscribe_sink(
        &mut self,
        subscriber: &NodeId,
        topic: &str,
        sink: MessageSink,
    ) -> Result<SubId, BusError> {
        let topic = TopicName::new(topic)?;
        if !self.roster.contains_key(subscriber) {
            return Err(BusError::UnknownSubscriber(subscriber.to_string()));
        }
        let existing = self.topic_subs.get(&topic).cloned().unwrap_or_default();
        for id in &existing {
            let sub = &self.subs[id];
            if sub.subscriber != *subscriber {
                continue;
            }
            let duplicate = match (&sub.sink, &sink) {
                (MessageSink::Node { tag: a }, MessageSink::Node { tag: b }) => a == b,
                (MessageSink::Closure(a), MessageSink::Closure(b)) => Rc::ptr_eq(a, b),
                _ => false,
            };
            if duplicate {
                return Err(BusError::DuplicateSubscription);
            }
        }
        let id = SubId(self.next_sub_id);
        self.next_sub_id += 1;
        self.subs.insert(
            id,
            Subscription {
                subscriber: subscriber.clone(),
                topic: topic.clone(),
                sink,
            },
        );
        self.topic_subs.entry(topic.clone()).or_default().push(id);
        self.emit(
            subscriber,
            TimelineKind::Log,
            format!("subscribed topic={topic}"),
        );
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubId) -> bool {
        let Some(sub) = self.subs.remove(&id) else {
            return false;
        };
        if let Some(list) = self.topic_subs.get_mut(&sub.topic) {
            list.retain(|s| *s != id);
        }
        self.fifo_floor.retain(|(_, s), _| *s != id);
        true
    }

    /// Registers the single server for `service`, dispatching to
    /// `Behavior::on_service_request`.
    pub fn register_service(&mut self, server: &NodeId, service: &str) -> Result<(), BusError> {
        self.register_service_sink(server, service, RequestSink::Node, 0)
    }

    /// Closure-handled server with a simulated processing delay.
    pub fn register_service_fn(
        &mut self,
        server: &NodeId,
        service: &str,
        processing_delay_us: u64,
        handler: impl FnMut(&mut Cx<'_>, &ServiceRequest) -> Vec<u8> + 'static,
    ) -> Result<(), BusError> {
        self.register_service_sink(
            server,
            service,
            RequestSink::Closure(Rc::new(RefCell::new(handler))),
            processing_delay_us,
        )
    }

    fn register_service_sink(
        &mut self,
        server: &NodeId,
        service: &str,
        sink: RequestSink,
        processing_delay_us: u64,
    ) -> Result<(), BusError> {
        let service = TopicName::new(service)?;
        if !self.roster.contains_key(server) {
            return Err(BusError::UnknownNode(server.to_string()));
        }
        if self.services.contains_key(&service) {
            return Err(BusError::ServiceTaken);
        }
        self.services.insert(
            service.clone(),
            ServiceEntry {
                server: server.clone(),
                sink,
                processing_delay_us,
            },
        );
        self.emit(
            server,
            TimelineKind::Log,
            format!("service registered name={service}"),
        );
        Ok(())
    }

    pub fn unregister_service(&mut self, service: &str) -> bool {
        match TopicName::new(service) {
            Ok(name) => self.services.remove(&name).is_some(),
            Err(_) => false,
        }
    }

    /// Issues a service call resolving to `Behavior::on_service_outcome`.
    pub fn call_service(
        &mut self,
        client: &NodeId,
        service: &str,
        payload: Vec<u8>,
        timeout_us: u64,
        token: CallToken,
    ) -> Result<u64, BusError> {
        self.call_service_sink(
            client,
            service,
            payload,
            timeout_us,
            ReplySink::Node { token },
        )
    }

    /// Issues a service call resolving into a one-shot closure.
    pub fn call_service_with(
        &mut self,
        client: &NodeId,
        service: &str,
        payload: Vec<u8>,
        timeout_us: u64,
        on_outcome: impl FnOnce(&mut Cx<'_>, ServiceOutcome) + 'static,
    ) -> Result<u64, BusError> {
        self.call_service_sink(
            client,
            service,
            payload,
            timeout_us,
            ReplySink::Closure(Some(Box::new(on_outcome))),
        )
    }

    /// Issues a call and steps the simulation until it resolves. Returns the
    /// outcome and the time it resolved at. Test/tooling convenience; flight
    /// nodes use the asynchronous forms.
    pub fn call_service_blocking(
        &mut self,
        client: &NodeId,
        service: &str,
        payload: Vec<u8>,
        timeout_us: u64,
    ) -> Result<(ServiceOutcome, SimTime), BusError> {
        let id =
            self.call_service_sink(client, service, payload, timeout_us, ReplySink::Blocking)?;
        while !self.blocking_outcomes.contains_key(&id) {
            if !self.step() {
                break;
            }
        }
        // The deadline event resolves every call; a closed kernel (run ended)
        // cannot schedule it, which reads as an immediate timeout.
        let (at, outcome) = self
            .blocking_outcomes
            .remove(&id)
            .unwrap_or((self.kernel.now(), ServiceOutcome::Timeout));
        Ok((outcome, at))
    }

    pub(crate) fn call_service_sink(
        &mut self,
        client: &NodeId,
        service: &str,
        payload: Vec<u8>,
        timeout_us: u64,
        reply: ReplySink,
    ) -> Result<u64, BusError> {
        let service = TopicName::new(service)?;
        if !self.roster.contains_key(client) {
            return Err(BusError::UnknownNode(client.to_string()));
        }
        let now = self.kernel.now();
        let deadline = now + timeout_us;
        let id = self.next_call_id;
        self.next_call_id += 1;
        self.calls.insert(
            id,
            PendingCall {
                client: client.clone(),
                service: service.clone(),
                resolved: false,
                reply,
            },
        );
        if self.services.contains_key(&service) {
            let jitter = self.rng.next_inclusive(self.delivery.jitter_bound_us);
            let at = now + self.delivery.base_delay_us + jitter;
            let request = ServiceRequest {
                service: service.clone(),
                request_id: id,
                sender: client.clone(),
                payload,
                deadline,
            };
            self.kernel
                .schedule_at(at, SimEvent::ServiceArrive { call: id, request })
                .ok();
        }
        self.kernel
            .schedule_at(deadline, SimEvent::ServiceDeadline { call: id })
            .ok();
        Ok(id)
    }

    pub(crate) fn dispatch_service_arrive(&mut self, call: u64, request: ServiceRequest) {
        let Some(pending) = self.calls.get(&call) else {
            return;
        };
        let service = pending.service.clone();
        let Some(entry) = self.services.get(&service) else {
            // Server unregistered between call and arrival; the client times out.
            return;
        };
        let server = entry.server.clone();
        let processing_delay = entry.processing_delay_us;

        // Probe-drop fault: requests to this node's liveness service vanish.
        if service.as_str().starts_with("/liveness/") {
            if let Some(remaining) = self.probe_drops.get_mut(&server) {
                if *remaining > 0 {
                    *remaining -= 1;
                    self.emit(
                        &server,
                        TimelineKind::Log,
                        format!("probe dropped (fault) service={service}"),
                    );
                    return;
                }
            }
        }

        let Some(slot) = self.roster.get(&server) else {
            return;
        };
        if slot.dead {
            self.emit(
                &server,
                TimelineKind::Log,
                format!("request dropped (dead) service={service}"),
            );
            return;
        }
        if slot.lifecycle.state() == crate::lifecycle::LifecycleState::Finalized {
            return;
        }

        let response = match &entry.sink {
            RequestSink::Node => self
                .with_behavior(&server, |b, cx| b.on_service_request(cx, &request))
                .flatten(),
            RequestSink::Closure(f) => {
                let f = f.clone();
                let mut cx = Cx {
                    sim: self,
                    node: server.clone(),
                };
                let out = (f.borrow_mut())(&mut cx, &request);
                Some(out)
            }
        };
        if let Some(payload) = response {
            let jitter = self.rng.next_inclusive(self.delivery.jitter_bound_us);
            let at = self.kernel.now() + processing_delay + self.delivery.base_delay_us + jitter;
            self.kernel
                .schedule_at(at, SimEvent::ServiceRespond { call, payload })
                .ok();
        }
    }

    pub(crate) fn dispatch_service_respond(&mut self, call: u64, payload: Vec<u8>) {
        let now = self.kernel.now();
        match self.calls.get_mut(&call) {
            Some(pending) if !pending.resolved => {
                pending.resolved = true;
                let client = pending.client.clone();
                self.resolve_call(call, client, ServiceOutcome::Response(payload));
            }
            _ => {
                // Already timed out (or the deadline reaped the record).
                let node = self
                    .calls
                    .get(&call)
                    .map(|c| c.client.clone())
                    .unwrap_or_else(|| NodeId::from("bus"));
                self.timeline.push(
                    now,
                    &node,
                    TimelineKind::Log,
                    format!("late response discarded request={call}"),
                );
            }
        }
    }

    pub(crate) fn dispatch_service_deadline(&mut self, call: u64) {
        let Some(pending) = self.calls.get_mut(&call) else {
            return;
        };
        if pending.resolved {
            self.calls.remove(&call);
            return;
        }
        pending.resolved = true;
        let client = pending.client.clone();
        let service = pending.service.clone();
        let is_ring = matches!(pending.reply, ReplySink::Ring);
        if !is_ring {
            self.emit(
                &client,
                TimelineKind::Timeout,
                format!("service={service} request={call}"),
            );
        }
        self.resolve_call(call, client, ServiceOutcome::Timeout);
        self.calls.remove(&call);
    }

    fn resolve_call(&mut self, call: u64, client: NodeId, outcome: ServiceOutcome) {
        let now = self.kernel.now();
        let reply = match self.calls.get_mut(&call) {
            Some(p) => std::mem::replace(&mut p.reply, ReplySink::Blocking),
            None => return,
        };
        match reply {
            ReplySink::Closure(mut f) => {
                if let Some(f) = f.take() {
                    let mut cx = Cx {
                        sim: self,
                        node: client,
                    };
                    f(&mut cx, outcome);
                }
            }
            ReplySink::Node { token } => {
                self.with_behavior(&client, |b, cx| b.on_service_outcome(cx, token, outcome));
            }
            ReplySink::Ring => {
                let alive = matches!(outcome, ServiceOutcome::Response(_));
                self.ring_probe_resolved(&client, alive);
            }
            ReplySink::Blocking => {
                self.blocking_outcomes.insert(call, (now, outcome));
            }
        }
    }

    pub(crate) fn dispatch_deliver(&mut self, sub_id: SubId, env: Envelope) {
        let Some(sub) = self.subs.get(&sub_id) else {
            return;
        };
        let subscriber = sub.subscriber.clone();
        let Some(slot) = self.roster.get(&subscriber) else {
            return;
        };
        if slot.dead {
            self.emit(
                &subscriber,
                TimelineKind::Log,
                format!("delivery dropped (dead) topic={}", env.topic),
            );
            return;
        }
        if slot.lifecycle.state() == crate::lifecycle::LifecycleState::Finalized {
            self.emit(
                &subscriber,
                TimelineKind::Log,
                format!("delivery dropped (finalized) topic={}", env.topic),
            );
            return;
        }
        let now = self.kernel.now();
        let latency = now.saturating_micros_since(env.publish_time);
        if let Some(payload_name) = env.topic.as_str().strip_prefix("/telemetry/") {
            self.metrics
                .entry(payload_name.to_string())
                .or_default()
                .push(latency);
        }
        self.emit(
            &subscriber,
            TimelineKind::Deliver,
            format!(
                "topic={} from={} seq={} latency_us={}",
                env.topic, env.publisher, env.seq, latency
            ),
        );
        let sink_action = match &self.subs[&sub_id].sink {
            MessageSink::Node { tag } => Ok(*tag),
            MessageSink::Closure(f) => Err(f.clone()),
        };
        match sink_action {
            Ok(tag) => {
                self.with_behavior(&subscriber, |b, cx| b.on_envelope(cx, tag, &env));
            }
            Err(f) => {
                let mut cx = Cx {
                    sim: self,
                    node: subscriber,
                };
                (f.borrow_mut())(&mut cx, &env);
            }
        }
    }

    // --- parameters -------------------------------------------------------

    pub fn declare_parameter(&mut self, node: &NodeId, key: &str, value: ParamValue) {
        if let Some(slot) = self.roster.get_mut(node) {
            slot.params.insert(key.to_string(), value);
        }
    }

    /// Atomically installs `value`, returning the previous one.
    pub fn set_parameter(
        &mut self,
        node: &NodeId,
        key: &str,
        value: ParamValue,
    ) -> Result<ParamValue, BusError> {
        let slot = self
            .roster
            .get_mut(node)
            .ok_or_else(|| BusError::UnknownNode(node.to_string()))?;
        if slot.dead || slot.lifecycle.state() == crate::lifecycle::LifecycleState::Finalized {
            return Err(BusError::Unreachable);
        }
        match slot.params.get_mut(key) {
            Some(current) => {
                let previous = std::mem::replace(current, value.clone());
                self.emit(
                    node,
                    TimelineKind::Log,
                    format!("parameter set key={key} value={value} previous={previous}"),
                );
                Ok(previous)
            }
            None => Err(BusError::UnknownParameter(key.to_string())),
        }
    }

    pub fn get_parameter(&self, node: &NodeId, key: &str) -> Result<ParamValue, BusError> {
        let slot = self
            .roster
            .get(node)
            .ok_or_else(|| BusError::UnknownNode(node.to_string()))?;
        if slot.dead || slot.lifecycle.state() == crate::lifecycle::LifecycleState::Finalized {
            return Err(BusError::Unreachable);
        }
        slot.params
            .get(key)
            .cloned()
            .ok_or_else(|| BusError::UnknownParameter(key.to_string()))
    }

    // --- actions ----------------------------------------------------------

    /// Registers `server` as the action server for `action`; goals route to
    /// `Behavior::on_goal`.
    pub fn register_action_server(
        &mut self,
        server: &NodeId,
        action: &str,
    ) -> Result<(), BusError> {
        let action = TopicName::new(action)?;
        if !self.roster.contains_key(server) {
            return Err(BusError::UnknownNode(server.to_string()));
        }
        if self.action_servers.contains_key(&action) {
            return Err(BusError::ServiceTaken);
        }
        self.action_servers.insert(action.clone(), server.clone());
        self.emit(
            server,
            TimelineKind::Log,
            format!("action server registered name={action}"),
        );
        Ok(())
    }

    /// Sends a goal whose updates land in `Behavior::on_action_update`.
    pub fn send_goal(
        &mut self,
        client: &NodeId,
        action: &str,
        goal: Vec<u8>,
        deadline_us: Option<u64>,
    ) -> Result<GoalId, BusError> {
        self.send_goal_sink(client, action, goal, deadline_us, ActionClientSink::Node)
    }

    /// Sends a goal observed by a closure (tests and tooling).
    pub fn send_goal_fn(
        &mut self,
        client: &NodeId,
        action: &str,
        goal: Vec<u8>,
        deadline_us: Option<u64>,
        observer: impl FnMut(&mut Cx<'_>, GoalId, &ActionUpdate) + 'static,
    ) -> Result<GoalId, BusError> {
        self.send_goal_sink(
            client,
            action,
            goal,
            deadline_us,
            ActionClientSink::Closure(Rc::new(RefCell::new(observer))),
        )
    }

    fn send_goal_sink(
        &mut self,
        client: &NodeId,
        action: &str,
        goal: Vec<u8>,
        deadline_us: Option<u64>,
        sink: ActionClientSink,
    ) -> Result<GoalId, BusError> {
        let action = TopicName::new(action)?;
        if !self.roster.contains_key(client) {
            return Err(BusError::UnknownNode(client.to_string()));
        }
        let id = GoalId(self.next_goal_id);
        self.next_goal_id += 1;
        let server = self.action_servers.get(&action).cloned();
        let now = self.kernel.now();
        self.goals.insert(
            id.0,
            GoalState {
                client: client.clone(),
                server: server.clone(),
                goal: goal.clone(),
                status: GoalStatus::Accepted,
                feedback: Vec::new(),
                result: None,
                sink,
                closed: false,
                deadline_event: None,
                last_update_at: now,
            },
        );
        self.emit(
            client,
            TimelineKind::Log,
            format!("goal sent action={action} goal_id={id}"),
        );
        match server {
            None => {
                // No server: immediately aborted.
                self.queue_action_update(
                    id,
                    ActionUpdate::Result {
                        status: GoalStatus::Aborted,
                        payload: b"no-server".to_vec(),
                    },
                );
            }
            Some(_) => {
                let jitter = self.rng.next_inclusive(self.delivery.jitter_bound_us);
                let delay = self.delivery.base_delay_us + jitter;
                self.kernel
                    .schedule_after(delay, SimEvent::GoalArrive { goal: id.0 })
                    .ok();
                if let Some(timeout) = deadline_us {
                    let ev = self
                        .kernel
                        .schedule_after(timeout, SimEvent::GoalDeadline { goal: id.0 })
                        .ok();
                    if let Some(g) = self.goals.get_mut(&id.0) {
                        g.deadline_event = ev;
                    }
                }
            }
        }
        Ok(id)
    }

    pub(crate) fn dispatch_goal_arrive(&mut self, goal_id: u64) {
        let Some(goal) = self.goals.get(&goal_id) else {
            return;
        };
        if goal.closed {
            return;
        }
        let Some(server) = goal.server.clone() else {
            return;
        };
        let payload = goal.goal.clone();
        let alive = self
            .roster
            .get(&server)
            .map(|s| !s.dead && s.lifecycle.state() != crate::lifecycle::LifecycleState::Finalized)
            .unwrap_or(false);
        if !alive {
            self.emit(
                &server,
                TimelineKind::Log,
                format!("goal dropped (server unavailable) goal_id={goal_id}"),
            );
            return; // the client's deadline, if any, will abort
        }
        let disposition = self
            .with_behavior(&server, |b, cx| b.on_goal(cx, GoalId(goal_id), &payload))
            .unwrap_or(crate::node::GoalDisposition::Reject(
                "server unavailable".into(),
            ));
        match disposition {
            crate::node::GoalDisposition::Accept => {
                self.queue_action_update(GoalId(goal_id), ActionUpdate::Accepted);
                self.queue_action_update(GoalId(goal_id), ActionUpdate::Executing);
                if let Some(g) = self.goals.get_mut(&goal_id) {
                    g.status = GoalStatus::Executing;
                }
            }
            crate::node::GoalDisposition::Reject(reason) => {
                self.finish_goal(GoalId(goal_id), GoalStatus::Aborted, reason.into_bytes());
            }
        }
    }

    /// Server-side feedback; valid only while executing.
    pub fn action_feedback(&mut self, goal: GoalId, data: Vec<u8>) {
        let Some(g) = self.goals.get_mut(&goal.0) else {
            return;
        };
        if g.closed || g.status != GoalStatus::Executing {
            let client = g.client.clone();
            self.emit(
                &client,
                TimelineKind::Log,
                format!("feedback outside executing discarded goal_id={goal}"),
            );
            return;
        }
        self.queue_action_update(goal, ActionUpdate::Feedback(data));
    }

    pub fn action_succeed(&mut self, goal: GoalId, result: Vec<u8>) {
        self.finish_goal(goal, GoalStatus::Succeeded, result);
    }

    pub fn action_abort(&mut self, goal: GoalId, reason: &str) {
        self.finish_goal(goal, GoalStatus::Aborted, reason.as_bytes().to_vec());
    }

    fn finish_goal(&mut self, goal: GoalId, status: GoalStatus, payload: Vec<u8>) {
        let Some(g) = self.goals.get_mut(&goal.0) else {
            return;
        };
        if g.closed {
            let client = g.client.clone();
            self.emit(
                &client,
                TimelineKind::Log,
                format!("late result discarded goal_id={goal}"),
            );
            return;
        }
        g.closed = true;
        if let Some(ev) = g.deadline_event.take() {
            self.kernel.cancel(ev);
        }
        self.queue_action_update(goal, ActionUpdate::Result { status, payload });
    }

    pub(crate) fn dispatch_goal_deadline(&mut self, goal_id: u64) {
        let Some(g) = self.goals.get_mut(&goal_id) else {
            return;
        };
        if g.closed {
            return;
        }
        g.closed = true;
        g.deadline_event = None;
        let client = g.client.clone();
        self.emit(
            &client,
            TimelineKind::Timeout,
            format!("goal deadline goal_id={goal_id}"),
        );
        self.queue_action_update(
            GoalId(goal_id),
            ActionUpdate::Result {
                status: GoalStatus::Aborted,
                payload: b"deadline".to_vec(),
            },
        );
    }

    /// Schedules an update toward the client, preserving per-goal FIFO order.
    fn queue_action_update(&mut self, goal: GoalId, update: ActionUpdate) {
        let jitter = self.rng.next_inclusive(self.delivery.jitter_bound_us);
        let now = self.kernel.now();
        let raw = now + self.delivery.base_delay_us + jitter;
        let Some(g) = self.goals.get_mut(&goal.0) else {
            return;
        };
        let at = raw.max(g.last_update_at);
        g.last_update_at = at;
        self.kernel
            .schedule_at(
                at,
                SimEvent::ActionDeliver {
                    goal: goal.0,
                    update,
                },
            )
            .ok();
    }

    pub(crate) fn dispatch_action_deliver(&mut self, goal_id: u64, update: ActionUpdate) {
        let Some(g) = self.goals.get_mut(&goal_id) else {
            return;
        };
        match &update {
            ActionUpdate::Accepted => g.status = GoalStatus::Accepted,
            ActionUpdate::Executing => g.status = GoalStatus::Executing,
            ActionUpdate::Feedback(data) => g.feedback.push(data.clone()),
            ActionUpdate::Result { status, payload } => {
                g.status = *status;
                g.result = Some((*status, payload.clone()));
            }
        }
        let client = g.client.clone();
        let sink = match &g.sink {
            ActionClientSink::Node => None,
            ActionClientSink::Closure(f) => Some(f.clone()),
        };
        match sink {
            None => {
                self.with_behavior(&client, |b, cx| {
                    b.on_action_update(cx, GoalId(goal_id), &update)
                });
            }
            Some(f) => {
                let mut cx = Cx {
                    sim: self,
                    node: client,
                };
                (f.borrow_mut())(&mut cx, GoalId(goal_id), &update);
            }
        }
    }

    /// Client-observable view of a goal (tests, assertions).
    pub fn goal_exchange(&self, goal: GoalId) -> Option<ActionExchange> {
        self.goals.get(&goal.0).map(|g| ActionExchange {
            goal_id: goal,
            goal: g.goal.clone(),
            feedback: g.feedback.clone(),
            result: g.result.as_ref().map(|(_, p)| p.clone()),
            status: g.status,
        })
    }
}
