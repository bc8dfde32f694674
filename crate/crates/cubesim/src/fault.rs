//! Fault tolerance: the hardware-watchdog analogue fed by the timing node,
//! the cyclic liveness ring with no-response counters, and the restart
//! supervisor both of them drive. Fault injections land here too.

use std::fmt;

use crate::lifecycle::{LifecycleState, TransitionKind};
use crate::node::NodeId;
use crate::sim::{Sim, SimEvent};
use crate::time::SimTime;
use crate::timeline::TimelineKind;

/// Node id used for system rows (watchdog feed/reboot) in the timeline.
pub const WATCHDOG_NODE: &str = "watchdog";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaultKind {
    KillNode,
    DelayBusUsage { extra_us: u64 },
    DropProbe { count: u32 },
    StopWatchdogFeeding,
    CorruptUplink,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::KillNode => write!(f, "kill_node"),
            FaultKind::DelayBusUsage { extra_us } => {
                write!(f, "delay_bus_usage extra_us={extra_us}")
            }
            FaultKind::DropProbe { count } => write!(f, "drop_probe count={count}"),
            FaultKind::StopWatchdogFeeding => write!(f, "stop_watchdog_feeding"),
            FaultKind::CorruptUplink => write!(f, "corrupt_uplink"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaultInjection {
    pub kind: FaultKind,
    pub target: NodeId,
    pub at: SimTime,
}

/// Hardware watchdog analogue. Starvation beyond `timeout_us` reboots the
/// whole management computer: every node is finalized and the roster is
/// re-instantiated from factories.
pub(crate) struct Watchdog {
    pub enabled: bool,
    pub timeout_us: u64,
    pub last_fed: SimTime,
    pub feed_count: u64,
    pub suppressed: bool,
}

impl Watchdog {
    pub fn new(enabled: bool, timeout_us: u64) -> Self {
        Watchdog {
            enabled,
            timeout_us,
            last_fed: SimTime::ZERO,
            feed_count: 0,
            suppressed: false,
        }
    }

    /// Pure starvation predicate: strictly more than `timeout_us` since the
    /// last feed.
    pub fn starved(&self, now: SimTime) -> bool {
        now.saturating_micros_since(self.last_fed) > self.timeout_us
    }
}

/// Liveness ring: each entry probes the next entry (wrapping) once per cycle
/// it ran, and restarts it after `threshold` consecutive unanswered probes.
pub(crate) struct Ring {
    pub order: Vec<NodeId>,
    pub probe_timeout_us: u64,
    pub threshold: u32,
    /// Consecutive-timeout count per prober (its downstream is fixed).
    pub counters: std::collections::BTreeMap<NodeId, u32>,
}

pub fn liveness_service(node: &NodeId) -> String {
    format!("/liveness/{node}")
}

impl Sim {
    /// Installs the probe ring. `order` lists the probe direction: each node
    /// probes the next one, the last wraps to the first.
    pub fn configure_ring(&mut self, order: Vec<NodeId>, probe_timeout_us: u64, threshold: u32) {
        self.ring = Some(Ring {
            order,
            probe_timeout_us,
            threshold,
            counters: std::collections::BTreeMap::new(),
        });
    }

    pub fn ring_downstream(&self, prober: &NodeId) -> Option<NodeId> {
        let ring = self.ring.as_ref()?;
        let idx = ring.order.iter().position(|n| n == prober)?;
        let next = (idx + 1) % ring.order.len();
        if next == idx {
            return None; // single-node ring probes nobody
        }
        Some(ring.order[next].clone())
    }

    /// Arms the watchdog at the current instant.
    pub fn arm_watchdog(&mut self) {
        if !self.watchdog.enabled {
            return;
        }
        self.watchdog.last_fed = self.kernel.now();
        let feed_count = self.watchdog.feed_count;
        let timeout = self.watchdog.timeout_us;
        self.kernel
            .schedule_after(timeout + 1, SimEvent::WatchdogCheck { feed_count })
            .ok();
    }

    pub(crate) fn feed_watchdog_from(&mut self, node: &NodeId) {
        if !self.watchdog.enabled {
            return;
        }
        if self.watchdog.suppressed {
            self.emit(
                node,
                TimelineKind::Log,
                "watchdog feed suppressed (fault)".into(),
            );
            return;
        }
        self.watchdog.last_fed = self.kernel.now();
        self.watchdog.feed_count += 1;
        let feed_count = self.watchdog.feed_count;
        let timeout = self.watchdog.timeout_us;
        self.emit(
            node,
            TimelineKind::Log,
            format!("watchdog_feed count={feed_count}"),
        );
        self.kernel
            .schedule_after(timeout + 1, SimEvent::WatchdogCheck { feed_count })
            .ok();
    }

    pub(crate) fn watchdog_check(&mut self, feed_count: u64) {
        if !self.watchdog.enabled || self.rebooting {
            return;
        }
        if feed_count != self.watchdog.feed_count {
            return; // re-fed since this check was armed
        }
        let now = self.kernel.now();
        if self.watchdog.starved(now) {
            self.trigger_reboot();
        }
    }

    /// Whole-system reboot: exactly one per starvation episode.
    fn trigger_reboot(&mut self) {
        if self.rebooting {
            return;
        }
        self.rebooting = true;
        let watchdog_node = NodeId::from(WATCHDOG_NODE);
        let last_fed = self.watchdog.last_fed;
        let timeout = self.watchdog.timeout_us;
        self.emit(
            &watchdog_node,
            TimelineKind::Reboot,
            format!("starvation last_fed_us={last_fed} timeout_us={timeout}"),
        );
        for node in self.roster_order.clone() {
            self.teardown_instance(&node);
        }
        self.pending_respawns.clear();
        let delay = self.reboot_delay_us;
        self.kernel
            .schedule_after(delay, SimEvent::RebootRestore)
            .ok();
    }

    pub(crate) fn dispatch_reboot_restore(&mut self) {
        let watchdog_node = NodeId::from(WATCHDOG_NODE);
        for node in self.roster_order.clone() {
            self.respawn_instance(&node);
        }
        if let Some(ring) = &mut self.ring {
            ring.counters.clear();
        }
        // Fresh software image: injected run-state faults do not survive.
        self.watchdog.suppressed = false;
        self.watchdog.feed_count += 1;
        self.arm_watchdog();
        self.rebooting = false;
        self.emit(&watchdog_node, TimelineKind::Log, "reboot complete".into());
    }

    /// Issues one liveness probe from `prober` to its ring downstream.
    pub(crate) fn start_probe(&mut self, prober: &NodeId) -> bool {
        let Some(target) = self.ring_downstream(prober) else {
            return false;
        };
        let timeout = self
            .ring
            .as_ref()
            .map(|r| r.probe_timeout_us)
            .unwrap_or(500_000);
        self.emit(
            prober,
            TimelineKind::Probe,
            format!("target={target} issued"),
        );
        let service = liveness_service(&target);
        if self
            .call_service_sink(
                prober,
                &service,
                b"ping".to_vec(),
                timeout,
                crate::bus::ReplySink::Ring,
            )
            .is_err()
        {
            return false;
        }
        true
    }

    /// Probe resolution: reset on response, count on timeout, restart on the
    /// transition to `threshold`.
    pub(crate) fn ring_probe_resolved(&mut self, prober: &NodeId, alive: bool) {
        let Some(target) = self.ring_downstream(prober) else {
            return;
        };
        let Some(ring) = self.ring.as_mut() else {
            return;
        };
        let threshold = ring.threshold;
        let counter = ring.counters.entry(prober.clone()).or_insert(0);
        if alive {
            *counter = 0;
            self.emit(
                prober,
                TimelineKind::Probe,
                format!("target={target} outcome=alive count=0"),
            );
        } else {
            *counter += 1;
            let count = *counter;
            self.emit(
                prober,
                TimelineKind::Timeout,
                format!("probe target={target} count={count}"),
            );
            if count >= threshold {
                if let Some(ring) = self.ring.as_mut() {
                    ring.counters.insert(prober.clone(), 0);
                }
                self.supervisor_restart(prober, &target);
            }
        }
        let prober = prober.clone();
        self.with_behavior(&prober, |b, cx| b.on_probe_complete(cx, alive));
    }

    /// Restarts `target` on behalf of `by`: current instance (alive or
    /// crashed) is finalized, a fresh one is brought to Active after the
    /// respawn delay. Idempotent while a respawn is already pending.
    pub fn restart_node(&mut self, by: &NodeId, target: &NodeId) {
        self.supervisor_restart(by, target);
    }

    /// Tears the target down and schedules a fresh instance after the
    /// configured respawn delay.
    pub(crate) fn supervisor_restart(&mut self, by: &NodeId, target: &NodeId) {
        if !self.factories.contains_key(target) {
            self.emit(
                by,
                TimelineKind::Log,
                format!("restart aborted: unknown target {target}"),
            );
            return;
        }
        if self.pending_respawns.contains(target) {
            self.emit(
                by,
                TimelineKind::Log,
                format!("restart already pending target={target}"),
            );
            return;
        }
        self.emit(
            by,
            TimelineKind::Restart,
            format!("target={target} reason=no-response"),
        );
        self.teardown_instance(target);
        self.pending_respawns.insert(target.clone());
        let delay = self.respawn_delay_us;
        self.kernel
            .schedule_after(
                delay,
                SimEvent::Respawn {
                    node: target.clone(),
                },
            )
            .ok();
    }

    /// Brings an instance down: clean shutdown for live nodes (queued behind
    /// any in-flight transition), forced finalization for crashed ones.
    pub(crate) fn teardown_instance(&mut self, node: &NodeId) {
        let Some(slot) = self.roster.get(node) else {
            return;
        };
        let state = slot.lifecycle.state();
        if state == LifecycleState::Finalized {
            self.detach_node(node);
            return;
        }
        if slot.dead {
            self.force_finalize(node);
        } else {
            let _ = self.request_transition(node, TransitionKind::Shutdown);
        }
    }

    pub(crate) fn dispatch_respawn(&mut self, node: &NodeId) {
        if !self.pending_respawns.remove(node) {
            return; // superseded by a reboot
        }
        self.respawn_instance(node);
    }

    /// Builds a fresh instance from the node's factory and brings it Active.
    pub(crate) fn respawn_instance(&mut self, node: &NodeId) {
        let Some(behavior) = self.build_from_factory(node) else {
            self.emit(
                node,
                TimelineKind::Log,
                "respawn failed: no factory/template".into(),
            );
            return;
        };
        // Dropped state is intentional: restarted nodes start empty.
        if let Some(slot) = self.roster.get(node) {
            if !slot.queued_transitions.is_empty() {
                let n = slot.queued_transitions.len();
                self.emit(
                    node,
                    TimelineKind::Log,
                    format!("dropping {n} queued transitions on respawn"),
                );
            }
        }
        self.spawn(node, behavior);
        let _ = self.request_transition(node, TransitionKind::Configure);
        let _ = self.request_transition(node, TransitionKind::Activate);
    }

    /// Maintenance-driven replacement: validates the template against the
    /// target before any teardown, then deactivate+shutdown, build for
    /// `build_delay_us`, and bring the replacement Active.
    pub(crate) fn replace_node_impl(
        &mut self,
        target: &NodeId,
        template: &str,
        build_delay_us: u64,
    ) -> Result<(), String> {
        if !self.roster.contains_key(target) {
            return Err(format!("unknown target {target}"));
        }
        let Some(template_fn) = self.templates.get(template).cloned() else {
            return Err(format!("unknown behavior id {template}"));
        };
        // Probe-build the template to prove compatibility before teardown.
        if template_fn(target).is_none() {
            return Err(format!("behavior id {template} cannot build node {target}"));
        }
        self.factories.insert(
            target.clone(),
            crate::sim::NodeFactory {
                template: template.to_string(),
            },
        );
        let state = self.current_state(target).map_err(|e| e.to_string())?;
        if state == LifecycleState::Active {
            let _ = self.request_transition(target, TransitionKind::Deactivate);
        }
        self.teardown_instance(target);
        self.pending_respawns.insert(target.clone());
        self.kernel
            .schedule_after(
                build_delay_us,
                SimEvent::Respawn {
                    node: target.clone(),
                },
            )
            .ok();
        Ok(())
    }

    /// Applies a scheduled fault from the plan.
    pub(crate) fn apply_fault(&mut self, index: usize) {
        let Some(fault) = self.fault_plan.get(index).cloned() else {
            return;
        };
        let target = fault.target.clone();
        self.emit(
            &target,
            TimelineKind::Log,
            format!("fault injected kind={}", fault.kind),
        );
        match fault.kind {
            FaultKind::KillNode => self.kill_node(&target),
            FaultKind::DelayBusUsage { extra_us } => {
                self.extra_bus_hold.insert(target, extra_us);
            }
            FaultKind::DropProbe { count } => {
                self.probe_drops.insert(target, count);
            }
            FaultKind::StopWatchdogFeeding => {
                self.watchdog.suppressed = true;
            }
            FaultKind::CorruptUplink => {
                self.corrupt_next_uplink = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Starvation is strict: exactly timeout since the last feed is still ok.
    #[test]
    fn watchdog_starvation_boundary() {
        let mut dog = Watchdog::new(true, 3_000_000);
        for fed_at in [1_000_000u64, 2_000_000, 3_000_000] {
            dog.last_fed = SimTime(fed_at);
            assert!(!dog.starved(SimTime(fed_at + 3_000_000)));
            assert!(dog.starved(SimTime(fed_at + 3_000_001)));
        }
        // Fed at 1, 2, 3 s with a 3 s timeout: never starved through 6 s.
        dog.last_fed = SimTime(3_000_000);
        assert!(!dog.starved(SimTime(6_000_000)));
    }
}
