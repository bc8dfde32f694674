//! CAN bus arbitration and device exchange semantics.

use std::cell::RefCell;
use std::rc::Rc;

use cubesim::can::{AcquireOutcome, CanError, CanEvent, CanFrame, DeviceModel, FailureMode};
use cubesim::lifecycle::TransitionKind;
use cubesim::node::Behavior;
use cubesim::sim::{Cx, Sim, SimConfig};
use cubesim::time::SimTime;
use cubesim::timeline::TimelineKind;
use cubesim::NodeId;

type RecordedEvents = Rc<RefCell<Vec<(u64, CanEvent)>>>;

/// Records CAN events delivered to this node.
struct CanRecorder {
    events: RecordedEvents,
}

impl Behavior for CanRecorder {
    fn kind(&self) -> &'static str {
        "can_recorder"
    }
    fn on_can_event(&mut self, cx: &mut Cx<'_>, event: CanEvent) {
        self.events.borrow_mut().push((cx.now().micros(), event));
    }
}

fn spawn_recorder(sim: &mut Sim, name: &str) -> (NodeId, RecordedEvents) {
    let events = Rc::new(RefCell::new(Vec::new()));
    let id = NodeId::from(name);
    sim.spawn(
        &id,
        Box::new(CanRecorder {
            events: events.clone(),
        }),
    );
    sim.request_transition(&id, TransitionKind::Configure)
        .unwrap();
    sim.request_transition(&id, TransitionKind::Activate)
        .unwrap();
    (id, events)
}

fn device(id: u16, delay: u64, payload: Vec<u8>, mode: FailureMode) -> DeviceModel {
    DeviceModel {
        device_id: id,
        response_delay_us: delay,
        response_payload: payload,
        failure_mode: mode,
    }
}

#[test]
fn acquire_requires_grant_and_single_ownership() {
    let mut sim = Sim::new(SimConfig::default());
    let (a, _) = spawn_recorder(&mut sim, "a");
    let (b, _) = spawn_recorder(&mut sim, "b");

    // No grant at all: protocol violation.
    assert_eq!(sim.can_acquire(&a).unwrap_err(), CanError::NotScheduled);

    sim.can_set_grant(Some(a.clone()));
    assert_eq!(sim.can_acquire(&a).unwrap(), AcquireOutcome::Granted);

    // b is granted next but a still owns: busy.
    sim.can_set_grant(Some(b.clone()));
    assert_eq!(sim.can_acquire(&b).unwrap(), AcquireOutcome::Busy);

    sim.can_release(&a).unwrap();
    assert_eq!(sim.can_acquire(&b).unwrap(), AcquireOutcome::Granted);
}

#[test]
fn wake_up_response_is_chunked_and_delayed() {
    let mut sim = Sim::new(SimConfig::default());
    sim.can_add_device(device(0x101, 5_000, (1..=16).collect(), FailureMode::None));
    let (owner, events) = spawn_recorder(&mut sim, "owner");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    sim.run_until(SimTime(1_000));
    sim.can_send(&owner, &CanFrame::wake(0x101).unwrap())
        .unwrap();
    sim.can_await_response(&owner, 50_000).unwrap();
    sim.run_until(SimTime(100_000));

    let events = events.borrow();
    assert_eq!(events.len(), 1);
    let (at, event) = &events[0];
    assert_eq!(*at, 6_000, "response_delay after the wake send");
    let CanEvent::Response { frames } = event else {
        panic!("expected response, got {event:?}");
    };
    assert_eq!(frames.len(), 2, "16 bytes chunk into two frames");
    assert_eq!(frames[0].data(), (1..=8).collect::<Vec<u8>>().as_slice());
    assert_eq!(frames[1].data(), (9..=16).collect::<Vec<u8>>().as_slice());
}

#[test]
fn silent_device_times_out_at_deadline() {
    let mut sim = Sim::new(SimConfig::default());
    sim.can_add_device(device(0x102, 5_000, vec![1, 2, 3], FailureMode::Silent));
    let (owner, events) = spawn_recorder(&mut sim, "owner");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    sim.can_send(&owner, &CanFrame::wake(0x102).unwrap())
        .unwrap();
    sim.can_await_response(&owner, 50_000).unwrap();
    sim.run_until(SimTime(200_000));

    let events = events.borrow();
    assert_eq!(events.as_slice(), &[(50_000, CanEvent::Timeout)]);
}

#[test]
fn send_by_non_owner_rejected_and_nothing_transmitted() {
    let mut sim = Sim::new(SimConfig::default());
    sim.can_add_device(device(0x101, 5_000, vec![9], FailureMode::None));
    let (owner, _) = spawn_recorder(&mut sim, "owner");
    let (outsider, events) = spawn_recorder(&mut sim, "outsider");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    assert_eq!(
        sim.can_send(&outsider, &CanFrame::wake(0x101).unwrap()),
        Err(CanError::NotOwner)
    );
    sim.run_until(SimTime(100_000));
    assert!(
        events.borrow().is_empty(),
        "no response for a rejected send"
    );
}

#[test]
fn double_release_is_not_owner() {
    let mut sim = Sim::new(SimConfig::default());
    let (owner, _) = spawn_recorder(&mut sim, "owner");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    assert!(sim.can_release(&owner).is_ok());
    assert_eq!(sim.can_release(&owner), Err(CanError::NotOwner));
}

#[test]
fn release_while_response_pending_discards_it() {
    let mut sim = Sim::new(SimConfig::default());
    sim.can_add_device(device(0x103, 5_000, vec![7; 4], FailureMode::None));
    let (owner, events) = spawn_recorder(&mut sim, "owner");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    sim.can_send(&owner, &CanFrame::wake(0x103).unwrap())
        .unwrap();
    sim.can_await_response(&owner, 50_000).unwrap();
    // Release before the 5 ms response lands.
    let discarded = sim.can_release(&owner).unwrap();
    assert_eq!(discarded, 1);
    sim.run_until(SimTime(200_000));
    assert!(
        events.borrow().is_empty(),
        "discarded response must not arrive"
    );
    assert!(sim
        .timeline()
        .events()
        .iter()
        .any(|e| e.detail.starts_with("pending device response discarded")));
}

#[test]
fn garbled_device_corrupts_but_still_responds() {
    let mut sim = Sim::new(SimConfig::default());
    sim.can_add_device(device(0x104, 1_000, vec![0xAA, 0xBB], FailureMode::Garbled));
    let (owner, events) = spawn_recorder(&mut sim, "owner");
    sim.can_set_grant(Some(owner.clone()));
    sim.can_acquire(&owner).unwrap();
    sim.can_send(&owner, &CanFrame::wake(0x104).unwrap())
        .unwrap();
    sim.can_await_response(&owner, 50_000).unwrap();
    sim.run_until(SimTime(100_000));
    let events = events.borrow();
    let CanEvent::Response { frames } = &events[0].1 else {
        panic!("expected response");
    };
    assert_eq!(frames[0].data(), &[0xAA ^ 0xFF, 0xBB]);
}

#[test]
fn ownership_intervals_from_timeline_never_overlap() {
    let mut sim = Sim::new(SimConfig::default());
    let (a, _) = spawn_recorder(&mut sim, "a");
    let (b, _) = spawn_recorder(&mut sim, "b");
    for round in 0..10u64 {
        let node = if round % 2 == 0 { &a } else { &b };
        sim.run_until(SimTime(round * 1_000));
        sim.can_set_grant(Some(node.clone()));
        sim.can_acquire(node).unwrap();
        sim.run_until(SimTime(round * 1_000 + 500));
        sim.can_release(node).unwrap();
    }
    let intervals = sim.timeline().ownership_intervals();
    assert_eq!(intervals.len(), 10);
    for (i, (_, a)) in intervals.iter().enumerate() {
        for (_, b) in &intervals[i + 1..] {
            assert!(!a.overlaps(b), "{a:?} overlaps {b:?}");
        }
    }
}

#[test]
fn acquire_without_grant_is_logged_as_protocol_violation() {
    let mut sim = Sim::new(SimConfig::default());
    let (a, _) = spawn_recorder(&mut sim, "a");
    let _ = sim.can_acquire(&a);
    assert!(sim
        .timeline()
        .events()
        .iter()
        .any(|e| e.kind == TimelineKind::Log && e.detail.contains("not-scheduled")));
}
