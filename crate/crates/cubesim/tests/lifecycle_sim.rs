//! Lifecycle orchestration at the world level: callback execution, error
//! processing, queuing, and timeline bracketing of transition states.

use cubesim::lifecycle::{CallbackOutcome, LifecycleError, LifecycleState, TransitionKind};
use cubesim::node::Behavior;
use cubesim::sim::{Cx, Sim, SimConfig};
use cubesim::time::SimTime;
use cubesim::timeline::TimelineKind;
use cubesim::NodeId;

struct PlainNode;

impl Behavior for PlainNode {
    fn kind(&self) -> &'static str {
        "plain"
    }
}

/// Node whose configure callback fails in a configurable way.
struct FussyNode {
    recoverable: Option<bool>,
}

impl Behavior for FussyNode {
    fn kind(&self) -> &'static str {
        "fussy"
    }
    fn on_configure(&mut self, _cx: &mut Cx<'_>) -> CallbackOutcome {
        match self.recoverable {
            None => CallbackOutcome::Success,
            Some(recoverable) => CallbackOutcome::Failure { recoverable },
        }
    }
}

fn spawn(sim: &mut Sim, name: &str, behavior: Box<dyn Behavior>) -> NodeId {
    let id = NodeId::from(name);
    sim.spawn(&id, behavior);
    id
}

#[test]
fn fresh_node_is_unconfigured_then_walks_to_active_and_finalized() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(&mut sim, "n", Box::new(PlainNode));
    assert_eq!(
        sim.current_state(&node).unwrap(),
        LifecycleState::Unconfigured
    );
    assert_eq!(
        sim.request_transition(&node, TransitionKind::Configure)
            .unwrap(),
        LifecycleState::Inactive
    );
    assert_eq!(
        sim.request_transition(&node, TransitionKind::Activate)
            .unwrap(),
        LifecycleState::Active
    );
    assert_eq!(
        sim.request_transition(&node, TransitionKind::Shutdown)
            .unwrap(),
        LifecycleState::Finalized
    );
    assert_eq!(
        sim.request_transition(&node, TransitionKind::Configure)
            .unwrap_err(),
        LifecycleError::Terminal
    );
}

#[test]
fn illegal_edge_leaves_state_unchanged() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(&mut sim, "n", Box::new(PlainNode));
    let err = sim
        .request_transition(&node, TransitionKind::Activate)
        .unwrap_err();
    assert!(matches!(err, LifecycleError::InvalidTransition { .. }));
    assert_eq!(
        sim.current_state(&node).unwrap(),
        LifecycleState::Unconfigured
    );
}

#[test]
fn unknown_node_state_query_errors() {
    let sim = Sim::new(SimConfig::default());
    assert!(matches!(
        sim.current_state(&NodeId::from("ghost")),
        Err(LifecycleError::UnknownNode(_))
    ));
}

#[test]
fn failing_configure_callback_routes_through_error_processing_to_unconfigured() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(
        &mut sim,
        "n",
        Box::new(FussyNode {
            recoverable: Some(true),
        }),
    );
    let state = sim
        .request_transition(&node, TransitionKind::Configure)
        .unwrap();
    assert_eq!(state, LifecycleState::Unconfigured);
    let entries: Vec<String> = sim
        .timeline()
        .events()
        .iter()
        .filter(|e| e.kind == TimelineKind::StateChange && e.node == node)
        .map(|e| e.detail.clone())
        .collect();
    assert_eq!(
        entries,
        vec![
            "lifecycle Unconfigured->Configuring request=configure",
            "lifecycle Configuring->ErrorProcessing callback=configure failed",
            "lifecycle ErrorProcessing->Unconfigured",
        ]
    );
}

#[test]
fn unrecoverable_failure_finalizes_the_node() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(
        &mut sim,
        "n",
        Box::new(FussyNode {
            recoverable: Some(false),
        }),
    );
    let state = sim
        .request_transition(&node, TransitionKind::Configure)
        .unwrap();
    assert_eq!(state, LifecycleState::Finalized);
}

#[test]
fn timed_transition_returns_transition_state_and_completes_later() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(&mut sim, "n", Box::new(PlainNode));
    sim.set_transition_delay(&node, 5_000);
    let state = sim
        .request_transition(&node, TransitionKind::Configure)
        .unwrap();
    assert_eq!(state, LifecycleState::Configuring);
    sim.run_until(SimTime(4_999));
    assert_eq!(
        sim.current_state(&node).unwrap(),
        LifecycleState::Configuring
    );
    sim.run_until(SimTime(5_000));
    assert_eq!(sim.current_state(&node).unwrap(), LifecycleState::Inactive);
}

#[test]
fn replacement_with_timed_callbacks_walks_a_clean_shutdown() {
    use cubesim::harness::build_sim;
    use cubesim::scenario::Scenario;

    let scenario = Scenario::from_toml_str(
        r#"
name = "timed_replace"
seed = 5
timing_period_us = 1_000_000
run_duration_us = 8_500_000

[[payloads]]
id = "payload1"
device_id = 0x101

[[payloads]]
id = "payload2"
device_id = 0x102

[[payloads]]
id = "payload3"
device_id = 0x103
transition_delay_us = 50_000

[[uplinks]]
at_us = 1_600_000
packet = { kind = "node_replace", text = "replace payload3 can_enabled_v2 500000" }
"#,
    )
    .unwrap();
    let mut sim = build_sim(&scenario, None).unwrap();
    sim.run_until(SimTime(8_500_000));
    let target = NodeId::from("payload3");
    let states: Vec<LifecycleState> = sim
        .timeline()
        .lifecycle_entries(&target)
        .into_iter()
        .filter(|(t, _)| (1_600_000..3_000_000).contains(&t.micros()))
        .map(|(_, s)| s)
        .collect();
    // Deactivate completes, the queued shutdown follows, then the fresh
    // instance configures and activates; no forced finalization.
    assert_eq!(
        states,
        vec![
            LifecycleState::Deactivating,
            LifecycleState::Inactive,
            LifecycleState::ShuttingDown,
            LifecycleState::Finalized,
            LifecycleState::Configuring,
            LifecycleState::Inactive,
            LifecycleState::Activating,
            LifecycleState::Active,
        ]
    );
    assert!(!sim
        .timeline()
        .events()
        .iter()
        .any(|e| e.node == target && e.detail.contains("forced=true")));
    assert_eq!(sim.current_state(&target).unwrap(), LifecycleState::Active);
}

#[test]
fn concurrent_requests_for_one_node_queue_fifo() {
    let mut sim = Sim::new(SimConfig::default());
    let node = spawn(&mut sim, "n", Box::new(PlainNode));
    sim.set_transition_delay(&node, 1_000);
    sim.request_transition(&node, TransitionKind::Configure)
        .unwrap();
    // Queued while configuring; runs after completion, in order.
    sim.request_transition(&node, TransitionKind::Activate)
        .unwrap();
    sim.request_transition(&node, TransitionKind::Deactivate)
        .unwrap();
    sim.run_until(SimTime(10_000));
    assert_eq!(sim.current_state(&node).unwrap(), LifecycleState::Inactive);

    // Every transition-state interval is bracketed request->completion with
    // no second in-flight request for the node.
    let mut depth = 0i32;
    for ev in sim.timeline().events() {
        if ev.node != node || ev.kind != TimelineKind::StateChange {
            continue;
        }
        if ev.detail.contains("request=") {
            depth += 1;
        } else {
            depth -= 1;
        }
        assert!(
            (0..=1).contains(&depth),
            "overlapping transitions: {}",
            ev.detail
        );
    }
    assert_eq!(depth, 0);
}
