//! Discrete-event kernel: a seedless priority queue of deferred actions.
//!
//! Events fire in `(fire_at, seq)` lexicographic order, where `seq` is a
//! global tie-break counter assigned at scheduling time. The kernel never
//! invokes anything itself; callers pop due events and dispatch them, which
//! keeps all handler invocations serialized by construction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::time::SimTime;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct EventId(pub u64);

#[derive(Error, Debug, PartialEq, Eq)]
pub enum KernelError {
    #[error("kernel closed: the run has ended")]
    Closed,
}

pub struct Kernel<A> {
    now: SimTime,
    next_seq: u64,
    queue: BTreeMap<(SimTime, u64), A>,
    fire_times: BTreeMap<u64, SimTime>,
    closed: bool,
}

impl<A> Kernel<A> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BTreeMap::new(),
            fire_times: BTreeMap::new(),
            closed: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Fire time of the earliest queued event.
    pub fn next_time(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    pub fn schedule_after(&mut self, delay_us: u64, action: A) -> Result<EventId, KernelError> {
        let at = self.now + delay_us;
        self.schedule_at(at, action)
    }

    pub fn schedule_at(&mut self, at: SimTime, action: A) -> Result<EventId, KernelError> {
        if self.closed {
            return Err(KernelError::Closed);
        }
        let at = at.max(self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at, seq), action);
        self.fire_times.insert(seq, at);
        Ok(EventId(seq))
    }

    /// Returns true iff the event existed and had not fired yet.
    pub fn cancel(&mut self, id: EventId) -> bool {
        match self.fire_times.remove(&id.0) {
            Some(at) => self.queue.remove(&(at, id.0)).is_some(),
            None => false,
        }
    }

    /// Pops the earliest event with `fire_at <= until`, advancing `now` to its
    /// fire time. Returns `None` when nothing is due.
    pub fn pop_due(&mut self, until: SimTime) -> Option<(SimTime, EventId, A)> {
        let (&(at, seq), _) = self.queue.iter().next()?;
        if at > until {
            return None;
        }
        let action = self.queue.remove(&(at, seq)).expect("peeked entry present");
        self.fire_times.remove(&seq);
        debug_assert!(at >= self.now, "event queue went backwards");
        self.now = at;
        Some((at, EventId(seq), action))
    }

    /// Fires every event with `fire_at <= t` into `f`, leaves `now = t`.
    /// Returns the number of events fired.
    pub fn run_until(&mut self, t: SimTime, mut f: impl FnMut(SimTime, A)) -> usize {
        debug_assert!(t >= self.now, "run_until into the past");
        let mut fired = 0;
        while let Some((at, _, action)) = self.pop_due(t) {
            f(at, action);
            fired += 1;
        }
        if t > self.now {
            self.now = t;
        }
        fired
    }

    /// Marks the run as ended; later scheduling attempts are rejected.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

impl<A> Default for Kernel<A> {
    fn default() -> Self {
        Self::new()
    }
}
