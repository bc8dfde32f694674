//! Imaging action pipeline: capture scheduling, method selection, result
//! aggregation and its failure modes.

use cubesim::codec::decode_frame_prefix;
use cubesim::harness::run_scenario;
use cubesim::imaging::ProcessedImageInfo;
use cubesim::scenario::Scenario;
use cubesim::time::SimTime;

fn imaging_scenario(extra: &str) -> Scenario {
    let text = format!(
        r#"
name = "imaging_ops"
seed = 23
timing_period_us = 1_000_000
run_duration_us = 8_500_000

[imaging]
method_duration_us = 1_000_000

[[payloads]]
id = "payload1"
device_id = 0x101

[[payloads]]
id = "payload2"
device_id = 0x102

[[payloads]]
id = "payload3"
device_id = 0x103

{extra}
"#
    );
    Scenario::from_toml_str(&text).expect("valid scenario")
}

#[test]
fn stale_capture_time_rejected_as_stale_task() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 500_000, method = "checksum" }
"#,
    ))
    .unwrap();
    assert!(output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging failed") && e.detail.contains("stale-task")));
    assert!(output.images.is_empty(), "no capture for a stale task");
}

#[test]
fn unknown_method_aborts_after_capture() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 2_000_000, method = "sharpen" }

[[uplinks]]
at_us = 7_000_000
packet = { kind = "downlink", frame_kind = "image" }
"#,
    ))
    .unwrap();
    assert!(output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging failed") && e.detail.contains("unknown-method")));
    // The capture happened, but no result was stored: the image downlink
    // command produces an empty type-0x02 frame.
    assert_eq!(output.images.len(), 1);
    let frames = output.timeline.frame_outs();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].1, 0x02);
    assert_eq!(frames[0].2, 0, "no records in the image frame");
}

#[test]
fn concurrent_goals_keep_their_methods_when_captures_cross_uplink_order() {
    // Uplinked checksum-late first, histogram-early second: the earlier
    // capture must still be processed with its own method.
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 3_500_000, method = "checksum" }

[[uplinks]]
at_us = 1_300_000
packet = { kind = "imaging", capture_at_us = 2_500_000, method = "histogram16" }

[[uplinks]]
at_us = 7_000_000
packet = { kind = "downlink", frame_kind = "image" }
"#,
    ))
    .unwrap();
    assert!(!output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging failed")));
    let (frame, _) = decode_frame_prefix(&output.downlink).unwrap();
    assert_eq!(frame.records.len(), 2);
    let mut by_id: Vec<(u32, String, SimTime)> = frame
        .records
        .iter()
        .map(|r| {
            let info = ProcessedImageInfo::decode(&r.data).unwrap();
            let image = output
                .images
                .iter()
                .find(|i| i.image_id == info.image_id)
                .unwrap();
            (info.image_id, info.method_id, image.captured_at)
        })
        .collect();
    by_id.sort_by_key(|(_, _, at)| *at);
    assert_eq!(by_id[0].1, "histogram16", "early capture keeps its method");
    assert_eq!(by_id[0].2, SimTime(2_500_000));
    assert_eq!(by_id[1].1, "checksum", "late capture keeps its method");
    assert_eq!(by_id[1].2, SimTime(3_500_000));
}

#[test]
fn two_tasks_capture_in_time_order_with_distinct_ids() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 2_500_000, method = "checksum" }

[[uplinks]]
at_us = 1_300_000
packet = { kind = "imaging", capture_at_us = 3_500_000, method = "histogram16" }
"#,
    ))
    .unwrap();
    assert_eq!(output.images.len(), 2);
    assert_eq!(output.images[0].image_id, 1);
    assert_eq!(output.images[1].image_id, 2);
    assert_eq!(output.images[0].captured_at.micros(), 2_500_000);
    assert_eq!(output.images[1].captured_at.micros(), 3_500_000);
}

#[test]
fn killed_processing_node_aborts_goal_and_emits_no_image_frame() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 2_500_000, method = "checksum" }

[[faults]]
kind = "kill_node"
target = "img_proc"
at_us = 2_000_000
"#,
    ))
    .unwrap();
    assert!(output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging failed")));
    let image_frames: Vec<_> = output
        .timeline
        .frame_outs()
        .into_iter()
        .filter(|(_, ty, _)| *ty == 0x02)
        .collect();
    assert!(image_frames.is_empty(), "no 0x02 frame after a failed goal");
}

#[test]
fn maintenance_swap_of_processing_node_adds_a_method() {
    // Stock processing node lacks xorfold8; replace it with the extended
    // template in flight, then run a goal using the new method.
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_000_000
packet = { kind = "node_replace", text = "replace img_proc img_proc_ext 200000" }

[[uplinks]]
at_us = 2_000_000
packet = { kind = "imaging", capture_at_us = 3_000_000, method = "xorfold8" }

[[uplinks]]
at_us = 7_000_000
packet = { kind = "downlink", frame_kind = "image" }
"#,
    ))
    .unwrap();
    assert!(!output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging failed")));
    let (frame, _) = decode_frame_prefix(&output.downlink).unwrap();
    let info = ProcessedImageInfo::decode(&frame.records[0].data).unwrap();
    assert_eq!(info.method_id, "xorfold8");
    let expected = output.images[0].pixels.iter().fold(0u8, |acc, &b| acc ^ b);
    assert_eq!(info.result, vec![expected]);
}

#[test]
fn stored_result_not_downlinked_until_commanded() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 2_000_000, method = "checksum" }
"#,
    ))
    .unwrap();
    assert!(output
        .timeline
        .events()
        .iter()
        .any(|e| e.detail.contains("imaging result stored")));
    assert!(
        output.timeline.frame_outs().is_empty(),
        "downlink is commanded"
    );
    assert!(output.downlink.is_empty());
}

#[test]
fn histogram_result_downlinks_and_decodes() {
    let output = run_scenario(&imaging_scenario(
        r#"
[[uplinks]]
at_us = 1_200_000
packet = { kind = "imaging", capture_at_us = 2_000_000, method = "histogram16" }

[[uplinks]]
at_us = 7_000_000
packet = { kind = "downlink", frame_kind = "image" }
"#,
    ))
    .unwrap();
    let (frame, _) = decode_frame_prefix(&output.downlink).unwrap();
    assert_eq!(frame.frame_type, 0x02);
    assert_eq!(frame.records.len(), 1);
    let info = ProcessedImageInfo::decode(&frame.records[0].data).unwrap();
    assert_eq!(info.method_id, "histogram16");
    assert!(info.ok);
    assert_eq!(info.result.len(), 64, "16 bins of 4 bytes");
    // Bin counts sum to the pixel count.
    let total: u64 = info
        .result
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as u64)
        .sum();
    let image = &output.images[0];
    assert_eq!(total, image.pixels.len() as u64);
    // Independent recount from the stored image file contents.
    let mut expected = [0u32; 16];
    for &b in &image.pixels {
        expected[(b >> 4) as usize] += 1;
    }
    let got: Vec<u32> = info
        .result
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(got, expected);
}
