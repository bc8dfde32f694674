//! Timing node: publishes the periodic tick (GPS pulse analogue) and feeds
//! the watchdog in the same dispatch.

use crate::kernel::EventId;
use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, TimerTag};
use crate::sim::Cx;
use crate::time::SimTime;

use super::{TimingTick, TOPIC_TIMING};

const TICK: TimerTag = 1;

#[derive(Clone, Copy, Debug)]
pub struct TimingConfig {
    pub period_us: u64,
}

pub struct TimingBehavior {
    period_us: u64,
    start: SimTime,
    cycle: u64,
    timer: Option<EventId>,
}

impl TimingBehavior {
    pub fn new(config: TimingConfig) -> Self {
        TimingBehavior {
            period_us: config.period_us,
            start: SimTime::ZERO,
            cycle: 0,
            timer: None,
        }
    }
}

impl Behavior for TimingBehavior {
    fn kind(&self) -> &'static str {
        "timing"
    }

    fn on_activate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        self.start = cx.now();
        self.cycle = 0;
        self.timer = cx.schedule(self.period_us, TICK);
        CallbackOutcome::Success
    }

    fn on_deactivate(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        if let Some(timer) = self.timer.take() {
            cx.cancel_timer(timer);
        }
        CallbackOutcome::Success
    }

    fn on_shutdown(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        if let Some(timer) = self.timer.take() {
            cx.cancel_timer(timer);
        }
        CallbackOutcome::Success
    }

    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: TimerTag) {
        if tag != TICK {
            return;
        }
        if !cx.is_active() {
            cx.log("tick skipped (not active)");
            return;
        }
        self.cycle += 1;
        let tick = TimingTick {
            cycle: self.cycle,
            tick_time: self.start + self.cycle * self.period_us,
        };
        cx.publish(TOPIC_TIMING, tick.encode()).ok();
        cx.feed_watchdog();
        self.timer = cx.schedule(self.period_us, TICK);
    }
}
