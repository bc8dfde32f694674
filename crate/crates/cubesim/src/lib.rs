//! cubesim: a deterministic, fault-tolerant CubeSat flight-software
//! simulator.
//!
//! The library models a small satellite's management computer as a set of
//! lifecycle nodes connected by an in-process publish-subscribe bus with
//! services, actions and remote parameters. Payload nodes time-share a
//! simulated CAN bus under a one-hot grant schedule published by a switching
//! node; a TT&C node stores processed telemetry and speaks a bit-exact frame
//! and packet codec; a watchdog and a cyclic liveness ring recover the system
//! from node crashes; a maintenance node reparameterizes or replaces nodes in
//! flight.
//!
//! Runs are driven by scenario files (see `docs/scenario_format.md`) and are
//! fully deterministic for a given seed: the timeline CSV produced by two
//! runs of the same scenario is byte-identical. The `examples/` directory
//! demonstrates each capability; the `cubesim` binary exposes the same
//! machinery as a CLI (`run`, `validate`, `stats`, `diff`, `bench`).

pub mod bench;
pub mod bus;
pub mod can;
pub mod codec;
pub mod fault;
pub mod harness;
pub mod imaging;
pub mod kernel;
pub mod lifecycle;
pub mod node;
pub mod nodes;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod time;
pub mod timeline;

pub use bus::{
    ActionExchange, ActionUpdate, BusError, DeliveryModel, Envelope, GoalId, GoalStatus,
    ServiceOutcome, ServiceRequest, SubId, TopicName,
};
pub use can::{AcquireOutcome, CanError, CanEvent, CanFrame, DeviceModel, FailureMode, TaskFlags};
pub use codec::{
    decode_frame, decode_frame_prefix, decode_packet, encode_frame, encode_packet, CodecError,
    FrameRecord, PacketType, TelecommandPacket, TelemetryFrame,
};
pub use fault::{FaultInjection, FaultKind};
pub use harness::{build_sim, run_scenario, run_scenario_with_seed, write_outputs, RunOutput};
pub use kernel::{EventId, Kernel, KernelError};
pub use lifecycle::{
    CallbackOutcome, LifecycleError, LifecycleMachine, LifecycleState, TransitionKind,
};
pub use node::{Behavior, CallToken, NodeId, ParamValue, RunState, SubTag, TimerTag};
pub use rng::SplitMix64;
pub use scenario::{Scenario, ScenarioError};
pub use sim::{ClockMode, Cx, Sim, SimConfig, StoredImage};
pub use stats::{compute_stats, format_table, LatencyStats, StatsError};
pub use time::SimTime;
pub use timeline::{diff_lines, DiffResult, Interval, Timeline, TimelineEvent, TimelineKind};
