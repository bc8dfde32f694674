//! Image acquisition and processing node pair, driven by an action goal from
//! the TT&C flow. Image sources are synthetic seeded pixel buffers; the
//! processing methods are pluggable stand-ins kept in a string-keyed registry
//! so maintenance can swap in a richer processing node.

use std::collections::{BTreeMap, VecDeque};

use crate::bus::GoalId;
use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, GoalDisposition, SubTag, TimerTag};
use crate::rng::SplitMix64;
use crate::sim::{Cx, StoredImage};
use crate::time::SimTime;

pub const ACTION_IMAGING: &str = "/imaging/task";
pub const TOPIC_IMAGE_INFO: &str = "/imaging/info";
pub const TOPIC_IMAGE_BLOB: &str = "/imaging/blob";
pub const TOPIC_IMAGE_RESULT: &str = "/imaging/result";

const TAG_RESULT: SubTag = 1;
const TAG_INFO: SubTag = 2;
const TAG_BLOB: SubTag = 3;

// Timer tags carry the image/job id in the low bits.
const T_CAPTURE: u64 = 1 << 56;
const T_BUDGET: u64 = 2 << 56;
const T_JOB: u64 = 3 << 56;
const T_MASK: u64 = 0xFF << 56;

/// Imaging task carried in the goal and on the info topic:
/// `capture_time(8) method_len(1) method exposure...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTask {
    pub capture_time: SimTime,
    pub method_id: String,
    pub exposure: Vec<u8>,
}

impl ImageTask {
    pub fn encode(&self) -> Vec<u8> {
        let method = self.method_id.as_bytes();
        let mut out = Vec::with_capacity(9 + method.len() + self.exposure.len());
        out.extend_from_slice(&self.capture_time.micros().to_be_bytes());
        out.push(method.len() as u8);
        out.extend_from_slice(method);
        out.extend_from_slice(&self.exposure);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<ImageTask> {
        if bytes.len() < 9 {
            return None;
        }
        let capture_time = SimTime(u64::from_be_bytes(bytes[0..8].try_into().ok()?));
        let method_len = bytes[8] as usize;
        if bytes.len() < 9 + method_len {
            return None;
        }
        let method_id = String::from_utf8(bytes[9..9 + method_len].to_vec()).ok()?;
        Some(ImageTask {
            capture_time,
            method_id,
            exposure: bytes[9 + method_len..].to_vec(),
        })
    }
}

/// Image published on the blob topic:
/// `image_id(4) width(2) height(2) captured_at(8) pixels...` (1 byte/pixel).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBlob {
    pub image_id: u32,
    pub width: u16,
    pub height: u16,
    pub captured_at: SimTime,
    pub pixels: Vec<u8>,
}

impl ImageBlob {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&self.image_id.to_be_bytes());
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.captured_at.micros().to_be_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<ImageBlob> {
        if bytes.len() < 16 {
            return None;
        }
        let image_id = u32::from_be_bytes(bytes[0..4].try_into().ok()?);
        let width = u16::from_be_bytes(bytes[4..6].try_into().ok()?);
        let height = u16::from_be_bytes(bytes[6..8].try_into().ok()?);
        let captured_at = SimTime(u64::from_be_bytes(bytes[8..16].try_into().ok()?));
        let pixels = bytes[16..].to_vec();
        if pixels.len() != width as usize * height as usize {
            return None;
        }
        Some(ImageBlob {
            image_id,
            width,
            height,
            captured_at,
            pixels,
        })
    }
}

/// Result published on the result topic and aggregated into the action
/// result: `image_id(4) ok(1) method_len(1) method duration(8) rlen(2) result`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessedImageInfo {
    pub image_id: u32,
    pub ok: bool,
    pub method_id: String,
    pub processing_duration_us: u64,
    pub result: Vec<u8>,
}

impl ProcessedImageInfo {
    pub fn encode(&self) -> Vec<u8> {
        let method = self.method_id.as_bytes();
        let mut out = Vec::with_capacity(16 + method.len() + self.result.len());
        out.extend_from_slice(&self.image_id.to_be_bytes());
        out.push(u8::from(self.ok));
        out.push(method.len() as u8);
        out.extend_from_slice(method);
        out.extend_from_slice(&self.processing_duration_us.to_be_bytes());
        out.extend_from_slice(&(self.result.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.result);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<ProcessedImageInfo> {
        if bytes.len() < 6 {
            return None;
        }
        let image_id = u32::from_be_bytes(bytes[0..4].try_into().ok()?);
        let ok = bytes[4] != 0;
        let method_len = bytes[5] as usize;
        if bytes.len() < 6 + method_len + 10 {
            return None;
        }
        let method_id = String::from_utf8(bytes[6..6 + method_len].to_vec()).ok()?;
        let mut pos = 6 + method_len;
        let processing_duration_us = u64::from_be_bytes(bytes[pos..pos + 8].try_into().ok()?);
        pos += 8;
        let rlen = u16::from_be_bytes(bytes[pos..pos + 2].try_into().ok()?) as usize;
        pos += 2;
        if bytes.len() != pos + rlen {
            return None;
        }
        Some(ProcessedImageInfo {
            image_id,
            ok,
            method_id,
            processing_duration_us,
            result: bytes[pos..].to_vec(),
        })
    }
}

/// 32-bit wrapping sum of pixel bytes, big-endian.
pub fn checksum32(pixels: &[u8]) -> Vec<u8> {
    let sum = pixels
        .iter()
        .fold(0u32, |acc, &b| acc.wrapping_add(b as u32));
    sum.to_be_bytes().to_vec()
}

/// 16-bin histogram over the byte value range, each bin a big-endian u32.
pub fn histogram16(pixels: &[u8]) -> Vec<u8> {
    let mut bins = [0u32; 16];
    for &b in pixels {
        bins[(b >> 4) as usize] += 1;
    }
    bins.iter().flat_map(|b| b.to_be_bytes()).collect()
}

/// XOR fold of the pixel bytes; the extra method shipped in the extended
/// processing template used by maintenance swaps.
pub fn xorfold8(pixels: &[u8]) -> Vec<u8> {
    vec![pixels.iter().fold(0u8, |acc, &b| acc ^ b)]
}

#[derive(Clone)]
pub struct MethodSpec {
    pub duration_us: u64,
    pub apply: fn(&[u8]) -> Vec<u8>,
}

pub fn standard_methods(duration_us: u64) -> BTreeMap<String, MethodSpec> {
    BTreeMap::from([
        (
            "checksum".to_string(),
            MethodSpec {
                duration_us,
                apply: checksum32,
            },
        ),
        (
            "histogram16".to_string(),
            MethodSpec {
                duration_us,
                apply: histogram16,
            },
        ),
    ])
}

pub fn extended_methods(duration_us: u64) -> BTreeMap<String, MethodSpec> {
    let mut methods = standard_methods(duration_us);
    methods.insert(
        "xorfold8".to_string(),
        MethodSpec {
            duration_us,
            apply: xorfold8,
        },
    );
    methods
}

#[derive(Clone, Debug)]
pub struct ImagingConfig {
    pub width: u16,
    pub height: u16,
    pub image_seed: u64,
    pub method_duration_us: u64,
    /// Server-side wait between capture and processed result before the goal
    /// is aborted with processing-timeout.
    pub server_budget_us: u64,
}

/// Image acquisition node: hosts the imaging action endpoint, captures at the
/// tasked time, publishes the blob, and aggregates the processed result into
/// the goal result.
pub struct AcquisitionBehavior {
    cfg: ImagingConfig,
    pixel_source: SplitMix64,
    next_image_id: u32,
    /// image_id -> goal waiting on that capture.
    open_goals: BTreeMap<u32, GoalId>,
    /// goals accepted but not yet captured, keyed by image_id as well.
    tasks: BTreeMap<u32, ImageTask>,
}

impl AcquisitionBehavior {
    pub fn new(cfg: ImagingConfig) -> Self {
        let pixel_source = SplitMix64::new(cfg.image_seed);
        AcquisitionBehavior {
            cfg,
            pixel_source,
            next_image_id: 1,
            open_goals: BTreeMap::new(),
            tasks: BTreeMap::new(),
        }
    }
}

impl Behavior for AcquisitionBehavior {
    fn kind(&self) -> &'static str {
        "img_acq"
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        cx.subscribe(TOPIC_IMAGE_RESULT, TAG_RESULT);
        cx.register_action_server(ACTION_IMAGING);
        CallbackOutcome::Success
    }

    fn on_goal(&mut self, cx: &mut Cx<'_>, goal: GoalId, payload: &[u8]) -> GoalDisposition {
        if !cx.is_active() {
            return GoalDisposition::Reject("acquisition inactive".into());
        }
        let Some(task) = ImageTask::decode(payload) else {
            return GoalDisposition::Reject("malformed-task".into());
        };
        if task.capture_time < cx.now() {
            return GoalDisposition::Reject("stale-task".into());
        }
        let image_id = self.next_image_id;
        self.next_image_id += 1;
        let delay = task.capture_time.saturating_micros_since(cx.now());
        cx.schedule(delay, T_CAPTURE | image_id as u64);
        self.open_goals.insert(image_id, goal);
        self.tasks.insert(image_id, task);
        cx.log(format!(
            "capture scheduled image_id={image_id} goal_id={goal}"
        ));
        GoalDisposition::Accept
    }

    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: TimerTag) {
        let id = (tag & !T_MASK) as u32;
        match tag & T_MASK {
            T_CAPTURE => {
                let Some(task) = self.tasks.remove(&id) else {
                    return;
                };
                let Some(&goal) = self.open_goals.get(&id) else {
                    return;
                };
                let mut pixels = vec![0u8; self.cfg.width as usize * self.cfg.height as usize];
                self.pixel_source.fill_bytes(&mut pixels);
                let blob = ImageBlob {
                    image_id: id,
                    width: self.cfg.width,
                    height: self.cfg.height,
                    captured_at: cx.now(),
                    pixels,
                };
                cx.store_image(StoredImage {
                    image_id: blob.image_id,
                    width: blob.width,
                    height: blob.height,
                    captured_at: blob.captured_at,
                    pixels: blob.pixels.clone(),
                });
                cx.publish(TOPIC_IMAGE_BLOB, blob.encode()).ok();
                cx.action_feedback(
                    goal,
                    format!("captured image_id={id} method={}", task.method_id).into_bytes(),
                );
                cx.schedule(self.cfg.server_budget_us, T_BUDGET | id as u64);
            }
            T_BUDGET => {
                if let Some(goal) = self.open_goals.remove(&id) {
                    cx.action_abort(goal, "processing-timeout");
                }
            }
            _ => {}
        }
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        if tag != TAG_RESULT {
            return;
        }
        let Some(info) = ProcessedImageInfo::decode(&env.payload) else {
            cx.log("malformed processed-image info dropped");
            return;
        };
        let Some(goal) = self.open_goals.remove(&info.image_id) else {
            cx.log(format!(
                "processed info without open goal image_id={}",
                info.image_id
            ));
            return;
        };
        if info.ok {
            cx.action_succeed(goal, env.payload.clone());
        } else {
            let reason = String::from_utf8_lossy(&info.result).into_owned();
            cx.action_abort(goal, &reason);
        }
    }
}

/// Image processing node: selects the method named by the task info, applies
/// it after the method's simulated duration, publishes the processed result.
///
/// Tasks are paired to blobs by capture time (the blob's `captured_at` is the
/// task's `capture_time`), so concurrent goals keep their own methods even
/// when captures complete out of uplink order.
pub struct ProcessingBehavior {
    methods: BTreeMap<String, MethodSpec>,
    expected_methods: BTreeMap<SimTime, VecDeque<String>>,
    jobs: BTreeMap<u32, (String, Vec<u8>)>,
}

impl ProcessingBehavior {
    pub fn new(methods: BTreeMap<String, MethodSpec>) -> Self {
        ProcessingBehavior {
            methods,
            expected_methods: BTreeMap::new(),
            jobs: BTreeMap::new(),
        }
    }

    fn take_method_for(&mut self, captured_at: SimTime) -> Option<String> {
        let queue = self.expected_methods.get_mut(&captured_at)?;
        let method = queue.pop_front();
        if queue.is_empty() {
            self.expected_methods.remove(&captured_at);
        }
        method
    }
}

impl Behavior for ProcessingBehavior {
    fn kind(&self) -> &'static str {
        "img_proc"
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        cx.subscribe(TOPIC_IMAGE_INFO, TAG_INFO);
        cx.subscribe(TOPIC_IMAGE_BLOB, TAG_BLOB);
        CallbackOutcome::Success
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        if !cx.is_active() {
            return;
        }
        match tag {
            TAG_INFO => {
                if let Some(task) = ImageTask::decode(&env.payload) {
                    self.expected_methods
                        .entry(task.capture_time)
                        .or_default()
                        .push_back(task.method_id);
                }
            }
            TAG_BLOB => {
                let Some(blob) = ImageBlob::decode(&env.payload) else {
                    cx.log("malformed image blob dropped");
                    return;
                };
                let Some(method_id) = self.take_method_for(blob.captured_at) else {
                    cx.log(format!(
                        "blob without task info dropped image_id={}",
                        blob.image_id
                    ));
                    return;
                };
                match self.methods.get(&method_id) {
                    Some(spec) => {
                        self.jobs
                            .insert(blob.image_id, (method_id.clone(), blob.pixels));
                        cx.log(format!(
                            "processing started image_id={} method={method_id}",
                            blob.image_id
                        ));
                        cx.schedule(spec.duration_us, T_JOB | blob.image_id as u64);
                    }
                    None => {
                        let info = ProcessedImageInfo {
                            image_id: blob.image_id,
                            ok: false,
                            method_id,
                            processing_duration_us: 0,
                            result: b"unknown-method".to_vec(),
                        };
                        cx.publish(TOPIC_IMAGE_RESULT, info.encode()).ok();
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, cx: &mut Cx<'_>, tag: TimerTag) {
        if tag & T_MASK != T_JOB {
            return;
        }
        let id = (tag & !T_MASK) as u32;
        let Some((method_id, pixels)) = self.jobs.remove(&id) else {
            return;
        };
        let Some(spec) = self.methods.get(&method_id) else {
            return;
        };
        let result = (spec.apply)(&pixels);
        let info = ProcessedImageInfo {
            image_id: id,
            ok: true,
            method_id,
            processing_duration_us: spec.duration_us,
            result,
        };
        cx.publish(TOPIC_IMAGE_RESULT, info.encode()).ok();
    }
}
