//! CAN bus task-switching node: on every tick it checks the bus, and when
//! free advances the one-hot grant to the next payload in rotation. Blocked
//! ticks publish nothing and do not advance the rotation.

use crate::can::TaskFlags;
use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, NodeId, SubTag};
use crate::sim::Cx;
use crate::timeline::TimelineKind;

use super::{TimingTick, TOPIC_TASK_FLAGS, TOPIC_TIMING};

const TAG_TIMING: SubTag = 1;

pub struct SwitchBehavior {
    rotation: Vec<NodeId>,
    next_idx: usize,
    generation: u64,
}

impl SwitchBehavior {
    pub fn new(rotation: Vec<NodeId>) -> Self {
        SwitchBehavior {
            rotation,
            next_idx: 0,
            generation: 0,
        }
    }
}

impl Behavior for SwitchBehavior {
    fn kind(&self) -> &'static str {
        "switch"
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        cx.subscribe(TOPIC_TIMING, TAG_TIMING);
        CallbackOutcome::Success
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        if tag != TAG_TIMING {
            return;
        }
        if !cx.is_active() {
            cx.log("tick ignored (not active)");
            return;
        }
        let Some(tick) = TimingTick::decode(&env.payload) else {
            cx.log("malformed timing tick dropped");
            return;
        };
        if self.rotation.is_empty() {
            cx.log(format!("cycle={} no payloads configured", tick.cycle));
            return;
        }
        if !cx.can_is_free() {
            let owner = cx.can_owner().map(|n| n.to_string()).unwrap_or_default();
            cx.log(format!(
                "cycle={} blocked: bus owned by {owner}",
                tick.cycle
            ));
            return;
        }
        let target = self.rotation[self.next_idx].clone();
        self.generation += 1;
        let flags = TaskFlags::one_hot(self.rotation.len(), self.next_idx, self.generation);
        debug_assert!(flags.is_one_hot());
        cx.can_set_grant(Some(target.clone()));
        cx.emit(
            TimelineKind::Grant,
            format!(
                "target={target} generation={} cycle={}",
                self.generation, tick.cycle
            ),
        );
        cx.publish(TOPIC_TASK_FLAGS, flags.encode(tick.cycle)).ok();
        self.next_idx = (self.next_idx + 1) % self.rotation.len();
    }
}
