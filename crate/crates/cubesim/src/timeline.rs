//! Append-only run record: every scheduling, bus, CAN, fault and lifecycle
//! occurrence lands here, and every assertion about a run reads from here.
//!
//! CSV layout: line 1 is `# scenario=<name> seed=<seed> mode=<mode>`, line 2
//! the column row `time_us,node,event_kind,detail`, then one row per event in
//! dispatch order. Details never contain commas, so no quoting is needed.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::lifecycle::LifecycleState;
use crate::node::NodeId;
use crate::time::SimTime;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TimelineKind {
    StateChange,
    Publish,
    Deliver,
    Grant,
    Acquire,
    Release,
    Probe,
    Timeout,
    Restart,
    Reboot,
    FrameOut,
    Log,
}

impl TimelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TimelineKind::StateChange => "state_change",
            TimelineKind::Publish => "publish",
            TimelineKind::Deliver => "deliver",
            TimelineKind::Grant => "grant",
            TimelineKind::Acquire => "acquire",
            TimelineKind::Release => "release",
            TimelineKind::Probe => "probe",
            TimelineKind::Timeout => "timeout",
            TimelineKind::Restart => "restart",
            TimelineKind::Reboot => "reboot",
            TimelineKind::FrameOut => "frame_out",
            TimelineKind::Log => "log",
        }
    }
}

impl fmt::Display for TimelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimelineEvent {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: TimelineKind,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Timeline {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    events: Vec<TimelineEvent>,
}

impl Timeline {
    pub fn new(scenario: &str, seed: u64, mode: &str) -> Self {
        Timeline {
            scenario: scenario.to_string(),
            seed,
            mode: mode.to_string(),
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, time: SimTime, node: &NodeId, kind: TimelineKind, detail: String) {
        // Commas would break the CSV; details are written without them.
        let detail = detail.replace(',', ";");
        self.events.push(TimelineEvent {
            time,
            node: node.clone(),
            kind,
            detail,
        });
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# scenario={} seed={} mode={}\ntime_us,node,event_kind,detail\n",
            self.scenario, self.seed, self.mode
        );
        for ev in &self.events {
            out.push_str(&format!(
                "{},{},{},{}\n",
                ev.time, ev.node, ev.kind, ev.detail
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiffResult {
    Equal,
    Divergence {
        /// 1-based line number of the first differing line.
        line: usize,
        left: Option<String>,
        right: Option<String>,
    },
}

/// Line-by-line comparison of two timeline CSV texts.
pub fn diff_lines(left: &str, right: &str) -> DiffResult {
    let mut l = left.lines();
    let mut r = right.lines();
    let mut line = 0;
    loop {
        line += 1;
        match (l.next(), r.next()) {
            (None, None) => return DiffResult::Equal,
            (a, b) if a == b => {}
            (a, b) => {
                return DiffResult::Divergence {
                    line,
                    left: a.map(str::to_string),
                    right: b.map(str::to_string),
                }
            }
        }
    }
}

/// A closed time interval extracted from the timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub start: SimTime,
    pub end: SimTime,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t <= self.end
    }
}

// Query helpers used by assertions, examples and the acceptance suite.
impl Timeline {
    pub fn of_kind(&self, kind: TimelineKind) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Grants in publication order: (time, granted node, flag generation).
    pub fn grants(&self) -> Vec<(SimTime, NodeId, u64)> {
        self.of_kind(TimelineKind::Grant)
            .filter_map(|e| {
                let target = detail_field(&e.detail, "target")?;
                let generation = detail_field(&e.detail, "generation")?.parse().ok()?;
                Some((e.time, NodeId::from(target), generation))
            })
            .collect()
    }

    /// CAN ownership intervals per node, paired acquire..release. An
    /// unreleased trailing acquire is closed at the final event time.
    pub fn ownership_intervals(&self) -> Vec<(NodeId, Interval)> {
        let mut out = Vec::new();
        let mut open: Vec<(NodeId, SimTime)> = Vec::new();
        for ev in &self.events {
            match ev.kind {
                TimelineKind::Acquire => open.push((ev.node.clone(), ev.time)),
                TimelineKind::Release => {
                    if let Some(pos) = open.iter().rposition(|(n, _)| *n == ev.node) {
                        let (node, start) = open.remove(pos);
                        out.push((
                            node,
                            Interval {
                                start,
                                end: ev.time,
                            },
                        ));
                    }
                }
                _ => {}
            }
        }
        let last = self.events.last().map(|e| e.time).unwrap_or(SimTime::ZERO);
        for (node, start) in open {
            out.push((node, Interval { start, end: last }));
        }
        out.sort_by_key(|(_, iv)| iv.start);
        out
    }

    /// Intervals a node spent in the given run state.
    pub fn run_state_intervals(&self, node: &NodeId, state: &str) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut entered: Option<SimTime> = None;
        for ev in self.events.iter().filter(|e| e.node == *node) {
            if ev.kind != TimelineKind::StateChange || !ev.detail.starts_with("run ") {
                continue;
            }
            let Some(rest) = ev.detail.strip_prefix("run ") else {
                continue;
            };
            let Some((from, to)) = rest.split_once("->") else {
                continue;
            };
            if to == state {
                entered = Some(ev.time);
            } else if from == state {
                if let Some(start) = entered.take() {
                    out.push(Interval {
                        start,
                        end: ev.time,
                    });
                }
            }
        }
        if let Some(start) = entered {
            let last = self.events.last().map(|e| e.time).unwrap_or(start);
            out.push(Interval { start, end: last });
        }
        out
    }

    /// Lifecycle states a node entered, in order.
    pub fn lifecycle_entries(&self, node: &NodeId) -> Vec<(SimTime, LifecycleState)> {
        self.events
            .iter()
            .filter(|e| e.node == *node && e.kind == TimelineKind::StateChange)
            .filter_map(|e| {
                let rest = e.detail.strip_prefix("lifecycle ")?;
                let (_, to) = rest.split_once("->")?;
                let state = parse_lifecycle(to.split_whitespace().next()?)?;
                Some((e.time, state))
            })
            .collect()
    }

    /// Probe timeouts recorded by `prober` against `target`, with counters.
    pub fn probe_timeouts(&self, prober: &NodeId, target: &NodeId) -> Vec<(SimTime, u32)> {
        self.of_kind(TimelineKind::Timeout)
            .filter(|e| e.node == *prober)
            .filter_map(|e| {
                if detail_field(&e.detail, "target")? != target.as_str() {
                    return None;
                }
                let count = detail_field(&e.detail, "count")?.parse().ok()?;
                Some((e.time, count))
            })
            .collect()
    }

    /// Supervisor restarts: (time, prober, target).
    pub fn restarts(&self) -> Vec<(SimTime, NodeId, NodeId)> {
        self.of_kind(TimelineKind::Restart)
            .filter_map(|e| {
                let target = detail_field(&e.detail, "target")?;
                Some((e.time, e.node.clone(), NodeId::from(target)))
            })
            .collect()
    }

    pub fn reboots(&self) -> Vec<SimTime> {
        self.of_kind(TimelineKind::Reboot).map(|e| e.time).collect()
    }

    /// Frames emitted on the downlink: (time, frame type byte, record count).
    pub fn frame_outs(&self) -> Vec<(SimTime, u8, u16)> {
        self.of_kind(TimelineKind::FrameOut)
            .filter_map(|e| {
                let ty = detail_field(&e.detail, "type")?;
                let ty = u8::from_str_radix(ty.trim_start_matches("0x"), 16).ok()?;
                let records = detail_field(&e.detail, "records")?.parse().ok()?;
                Some((e.time, ty, records))
            })
            .collect()
    }

    /// Publish events on a topic: (time, publisher, seq).
    pub fn publishes_on(&self, topic: &str) -> Vec<(SimTime, NodeId, u64)> {
        self.of_kind(TimelineKind::Publish)
            .filter(|e| detail_field(&e.detail, "topic") == Some(topic))
            .filter_map(|e| {
                let seq = detail_field(&e.detail, "seq")?.parse().ok()?;
                Some((e.time, e.node.clone(), seq))
            })
            .collect()
    }
}

/// Extracts `key=value` fields from a detail string.
pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split_whitespace().find_map(|part| {
        let (k, v) = part.split_once('=')?;
        (k == key).then_some(v)
    })
}

fn parse_lifecycle(s: &str) -> Option<LifecycleState> {
    use LifecycleState::*;
    Some(match s {
        "Unconfigured" => Unconfigured,
        "Inactive" => Inactive,
        "Active" => Active,
        "Finalized" => Finalized,
        "Configuring" => Configuring,
        "CleaningUp" => CleaningUp,
        "ShuttingDown" => ShuttingDown,
        "Activating" => Activating,
        "Deactivating" => Deactivating,
        "ErrorProcessing" => ErrorProcessing,
        _ => return None,
    })
}
