//! Wall-clock latency harness: a thread-safe bus variant with concurrent
//! publishers and per-subscriber serialized delivery, measuring end-to-end
//! publish-to-receive latency per payload topic under light or heavy load.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::stats::{compute_stats, LatencyStats, StatsError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Load {
    Light,
    Heavy,
}

impl Load {
    pub fn as_str(self) -> &'static str {
        match self {
            Load::Light => "light",
            Load::Heavy => "heavy",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub duration: Duration,
    pub load: Load,
    pub payload_count: usize,
    pub publish_interval: Duration,
    pub message_bytes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            duration: Duration::from_secs(10),
            load: Load::Light,
            payload_count: 3,
            publish_interval: Duration::from_millis(10),
            message_bytes: 64,
        }
    }
}

/// Message on the wall-clock bus: publish instant carried for latency
/// measurement, sequence assigned under the bus lock.
pub struct WallEnvelope {
    pub topic: String,
    pub publisher: String,
    pub seq: u64,
    pub published: Instant,
    pub payload: Vec<u8>,
}

struct WallBusInner {
    subscribers: BTreeMap<String, Vec<Sender<Arc<WallEnvelope>>>>,
    seqs: BTreeMap<(String, String), u64>,
}

/// Thread-safe bus: publishers may race, per-subscriber order is the channel
/// order, and per-(publisher, topic) sequences are strictly increasing.
pub struct WallBus {
    inner: Mutex<WallBusInner>,
}

impl WallBus {
    pub fn new() -> Self {
        WallBus {
            inner: Mutex::new(WallBusInner {
                subscribers: BTreeMap::new(),
                seqs: BTreeMap::new(),
            }),
        }
    }

    pub fn subscribe(&self, topic: &str) -> Receiver<Arc<WallEnvelope>> {
        let (tx, rx) = channel();
        let mut inner = self.inner.lock().expect("bus lock");
        inner
            .subscribers
            .entry(topic.to_string())
            .or_default()
            .push(tx);
        rx
    }

    pub fn publish(&self, publisher: &str, topic: &str, payload: Vec<u8>) -> u64 {
        let mut inner = self.inner.lock().expect("bus lock");
        let seq = {
            let counter = inner
                .seqs
                .entry((publisher.to_string(), topic.to_string()))
                .or_insert(0);
            *counter += 1;
            *counter
        };
        let envelope = Arc::new(WallEnvelope {
            topic: topic.to_string(),
            publisher: publisher.to_string(),
            seq,
            published: Instant::now(),
            payload,
        });
        if let Some(subs) = inner.subscribers.get(topic) {
            for tx in subs {
                tx.send(envelope.clone()).ok();
            }
        }
        seq
    }
}

impl Default for WallBus {
    fn default() -> Self {
        Self::new()
    }
}

/// Busy-spin load generator saturating the available cores.
struct LoadGenerator {
    stop: Arc<AtomicBool>,
    threads: Vec<thread::JoinHandle<()>>,
}

impl LoadGenerator {
    fn start() -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let cores = thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(2);
        let threads = (0..cores)
            .map(|_| {
                let stop = stop.clone();
                thread::spawn(move || {
                    let mut x: u64 = 0x9E3779B97F4A7C15;
                    while !stop.load(Ordering::Relaxed) {
                        for _ in 0..10_000 {
                            x = x
                                .wrapping_mul(6364136223846793005)
                                .wrapping_add(1442695040888963407);
                        }
                        std::hint::black_box(x);
                    }
                })
            })
            .collect();
        LoadGenerator { stop, threads }
    }

    fn stop(self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            t.join().ok();
        }
    }
}

/// Runs the publish-subscribe latency benchmark and returns one stats entry
/// per payload topic, named payload1..payloadN.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<LatencyStats>, StatsError> {
    let bus = Arc::new(WallBus::new());
    let stop = Arc::new(AtomicBool::new(false));

    // Subscriber threads: one per topic, serialized per subscriber by the
    // channel consumer loop.
    let mut collectors = Vec::new();
    for i in 1..=config.payload_count {
        let topic = format!("/telemetry/payload{i}");
        let rx = bus.subscribe(&topic);
        collectors.push(thread::spawn(move || {
            let mut samples: Vec<u64> = Vec::new();
            while let Ok(envelope) = rx.recv() {
                let latency = envelope.published.elapsed();
                samples.push(latency.as_micros() as u64);
            }
            samples
        }));
    }

    let load = (config.load == Load::Heavy).then(LoadGenerator::start);

    // Publisher threads: one per payload, periodic.
    let mut publishers = Vec::new();
    for i in 1..=config.payload_count {
        let bus = bus.clone();
        let stop = stop.clone();
        let interval = config.publish_interval;
        let bytes = config.message_bytes;
        publishers.push(thread::spawn(move || {
            let publisher = format!("payload{i}");
            let topic = format!("/telemetry/payload{i}");
            let payload = vec![i as u8; bytes];
            while !stop.load(Ordering::Relaxed) {
                bus.publish(&publisher, &topic, payload.clone());
                thread::sleep(interval);
            }
        }));
    }

    thread::sleep(config.duration);
    stop.store(true, Ordering::Relaxed);
    for p in publishers {
        p.join().ok();
    }
    if let Some(load) = load {
        load.stop();
    }
    drop(bus); // closes the channels so collectors drain and exit

    let mut stats = Vec::new();
    for (i, collector) in collectors.into_iter().enumerate() {
        let samples = collector.join().unwrap_or_default();
        stats.push(compute_stats(&format!("payload{}", i + 1), &samples)?);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_bus_preserves_per_edge_fifo_under_concurrent_publishers() {
        let bus = Arc::new(WallBus::new());
        let rx = bus.subscribe("/t");
        let mut handles = Vec::new();
        for p in 0..4 {
            let bus = bus.clone();
            handles.push(thread::spawn(move || {
                let name = format!("pub{p}");
                for _ in 0..500 {
                    bus.publish(&name, "/t", vec![]);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        drop(bus);
        let mut last_seq: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0;
        while let Ok(env) = rx.recv() {
            let last = last_seq.entry(env.publisher.clone()).or_insert(0);
            assert!(env.seq > *last, "seq regression for {}", env.publisher);
            *last = env.seq;
            total += 1;
        }
        assert_eq!(total, 2000);
    }

    #[test]
    fn bench_smoke_produces_finite_ordered_stats() {
        let stats = run_bench(&BenchConfig {
            duration: Duration::from_millis(300),
            load: Load::Light,
            payload_count: 2,
            publish_interval: Duration::from_millis(5),
            message_bytes: 16,
        })
        .unwrap();
        assert_eq!(stats.len(), 2);
        for s in &stats {
            assert!(s.count > 0);
            assert!(s.min_ms <= s.avg_ms && s.avg_ms <= s.max_ms);
            assert!(s.avg_ms.is_finite() && s.std_ms.is_finite());
        }
    }
}
