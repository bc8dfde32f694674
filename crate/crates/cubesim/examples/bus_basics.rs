//! Embedding the simulator directly: build a world by hand, wire endpoints
//! with closures, and exercise topics, services and actions without a
//! scenario file.
//!
//! ```bash
//! cargo run -p cubesim --example bus_basics
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use cubesim::bus::{ActionUpdate, DeliveryModel, ServiceOutcome};
use cubesim::lifecycle::TransitionKind;
use cubesim::node::{Behavior, GoalDisposition};
use cubesim::sim::{Cx, Sim, SimConfig};
use cubesim::time::SimTime;
use cubesim::{GoalId, NodeId};

/// Minimal action server: echoes the goal payload back after one feedback.
struct EchoServer;

impl Behavior for EchoServer {
    fn kind(&self) -> &'static str {
        "echo_server"
    }
    fn on_goal(&mut self, cx: &mut Cx<'_>, goal: GoalId, _payload: &[u8]) -> GoalDisposition {
        cx.schedule(1_000, goal.0);
        GoalDisposition::Accept
    }
    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: u64) {
        let goal = GoalId(tag);
        cx.action_feedback(goal, b"working".to_vec());
        cx.action_succeed(goal, b"echo!".to_vec());
    }
}

fn main() {
    let mut sim = Sim::new(SimConfig {
        delivery: DeliveryModel {
            base_delay_us: 250,
            jitter_bound_us: 100,
        },
        seed: 7,
        ..SimConfig::default()
    });

    // Pub-sub between two endpoints.
    let sensor = sim.register_endpoint("sensor");
    let logger = sim.register_endpoint("logger");
    let received = Rc::new(RefCell::new(Vec::new()));
    let sink = received.clone();
    sim.subscribe_fn(&logger, "/readings", move |cx, env| {
        sink.borrow_mut().push(format!(
            "t={}us seq={} payload={:?}",
            cx.now(),
            env.seq,
            env.payload
        ));
    })
    .unwrap();
    for reading in [21u8, 22, 23] {
        sim.publish(&sensor, "/readings", vec![reading]).unwrap();
    }
    sim.run_until(SimTime(5_000));
    println!("deliveries (FIFO, jittered):");
    for line in received.borrow().iter() {
        println!("  {line}");
    }

    // A service with a blocking-style call from the outside.
    sim.register_service_fn(&logger, "/health", 0, |_, _| b"OK".to_vec())
        .unwrap();
    let (outcome, at) = sim
        .call_service_blocking(&sensor, "/health", b"?".to_vec(), 100_000)
        .unwrap();
    match outcome {
        ServiceOutcome::Response(bytes) => {
            println!(
                "\nservice answered {:?} at t={at}us",
                String::from_utf8_lossy(&bytes)
            )
        }
        ServiceOutcome::Timeout => println!("\nservice timed out at t={at}us"),
    }

    // An action goal observed with a closure.
    let server = NodeId::from("worker");
    sim.spawn(&server, Box::new(EchoServer));
    sim.request_transition(&server, TransitionKind::Configure)
        .unwrap();
    sim.request_transition(&server, TransitionKind::Activate)
        .unwrap();
    sim.register_action_server(&server, "/echo").unwrap();
    sim.send_goal_fn(
        &sensor,
        "/echo",
        b"hello".to_vec(),
        None,
        |cx, goal, update| match update {
            ActionUpdate::Result { status, payload } => println!(
                "  goal {goal} -> {} with {:?} at t={}us",
                status.as_str(),
                String::from_utf8_lossy(payload),
                cx.now()
            ),
            other => println!("  goal {goal} update {other:?} at t={}us", cx.now()),
        },
    )
    .unwrap();
    println!("\naction updates:");
    sim.run_until(SimTime(50_000));
}
