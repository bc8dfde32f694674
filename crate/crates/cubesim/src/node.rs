//! Node identity, the behavior trait every flight node implements, and the
//! per-node bookkeeping the engine keeps.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::bus::{ActionUpdate, Envelope, GoalId, ServiceOutcome, ServiceRequest};
use crate::can::CanEvent;
use crate::lifecycle::{CallbackOutcome, LifecycleMachine, TransitionKind};
use crate::sim::Cx;

/// Node name, cheap to clone, ordered for deterministic map iteration.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(Arc<str>);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(Arc::from(s))
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(Arc::from(s.as_str()))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Subscription discriminator a behavior picks when subscribing, echoed back
/// on delivery so one node can tell its feeds apart.
pub type SubTag = u32;

/// Timer discriminator, same idea.
pub type TimerTag = u64;

/// Token correlating an issued service call with its eventual outcome.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct CallToken(pub u64);

/// Scalar-or-string parameter value.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
    Flag(bool),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "i:{v}"),
            ParamValue::Real(v) => write!(f, "r:{v}"),
            ParamValue::Text(v) => write!(f, "s:{v}"),
            ParamValue::Flag(v) => write!(f, "b:{v}"),
        }
    }
}

impl ParamValue {
    /// Parses the `<type>:<value>` form used by maintenance commands.
    pub fn parse(s: &str) -> Option<ParamValue> {
        let (tag, rest) = s.split_once(':')?;
        match tag {
            "i" => rest.parse().ok().map(ParamValue::Int),
            "r" => rest.parse().ok().map(ParamValue::Real),
            "s" => Some(ParamValue::Text(rest.to_string())),
            "b" => rest.parse().ok().map(ParamValue::Flag),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

/// Payload-node operating state.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RunState {
    Off,
    OccupyingCan,
    DataProcessing,
    OtherAsyncCommands,
}

impl RunState {
    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Off => "off",
            RunState::OccupyingCan => "occupying_can",
            RunState::DataProcessing => "data_processing",
            RunState::OtherAsyncCommands => "other_async_commands",
        }
    }

    /// Legal moves between run states.
    pub fn can_move_to(self, next: RunState) -> bool {
        use RunState::*;
        matches!(
            (self, next),
            (Off, OccupyingCan)
                | (OccupyingCan, DataProcessing)
                | (DataProcessing, Off)
                | (Off, OtherAsyncCommands)
                | (DataProcessing, OtherAsyncCommands)
                | (OtherAsyncCommands, Off)
        )
    }
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Server-side answer to an incoming action goal.
#[derive(Clone, Debug)]
pub enum GoalDisposition {
    Accept,
    Reject(String),
}

/// Behavior of one node: lifecycle callbacks plus event handlers. Handlers
/// must not block; long work is modeled by scheduling timers.
#[allow(unused_variables)]
pub trait Behavior {
    /// Behavior template name, recorded in the timeline on spawn.
    fn kind(&self) -> &'static str;

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        CallbackOutcome::Success
    }
    fn on_activate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        CallbackOutcome::Success
    }
    fn on_deactivate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        CallbackOutcome::Success
    }
    fn on_cleanup(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        CallbackOutcome::Success
    }
    fn on_shutdown(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        CallbackOutcome::Success
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &Envelope) {}
    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: TimerTag) {}
    fn on_service_request(&mut self, cx: &mut Cx<'_>, req: &ServiceRequest) -> Option<Vec<u8>> {
        None
    }
    fn on_service_outcome(&mut self, cx: &mut Cx<'_>, token: CallToken, outcome: ServiceOutcome) {}
    fn on_can_event(&mut self, cx: &mut Cx<'_>, event: CanEvent) {}
    fn on_goal(&mut self, cx: &mut Cx<'_>, goal: GoalId, payload: &[u8]) -> GoalDisposition {
        GoalDisposition::Reject("no goal handler".into())
    }
    fn on_action_update(&mut self, cx: &mut Cx<'_>, goal: GoalId, update: &ActionUpdate) {}
    /// Liveness-ring probe issued by this node resolved (alive or not).
    fn on_probe_complete(&mut self, cx: &mut Cx<'_>, alive: bool) {}
    /// Raw uplink bytes arriving at this node (ground station side).
    fn on_uplink(&mut self, cx: &mut Cx<'_>, bytes: &[u8]) {}
}

pub(crate) type SharedBehavior = Rc<RefCell<Box<dyn Behavior>>>;

pub(crate) struct NodeSlot {
    pub lifecycle: LifecycleMachine,
    pub behavior: Option<SharedBehavior>,
    /// Process considered crashed: handlers never run, state is frozen until
    /// the supervisor tears the instance down.
    pub dead: bool,
    /// Bumped on every (re)instantiation; stale events carry the old value.
    pub generation: u32,
    pub params: BTreeMap<String, ParamValue>,
    pub run_state: Option<RunState>,
    pub transition_delay_us: u64,
    pub in_transition: Option<TransitionKind>,
    pub queued_transitions: VecDeque<TransitionKind>,
}

impl NodeSlot {
    pub fn new(behavior: Option<SharedBehavior>, generation: u32) -> Self {
        NodeSlot {
            lifecycle: LifecycleMachine::new(),
            behavior,
            dead: false,
            generation,
            params: BTreeMap::new(),
            run_state: None,
            transition_delay_us: 0,
            in_transition: None,
            queued_transitions: VecDeque::new(),
        }
    }
}
