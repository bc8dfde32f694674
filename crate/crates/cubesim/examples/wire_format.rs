//! The downlink frame and uplink packet wire format: encoding, decoding, and
//! what corruption does to each.
//!
//! ```bash
//! cargo run -p cubesim --example wire_format
//! ```

use cubesim::codec::{
    crc16, decode_frame, decode_packet, encode_frame, encode_packet, FrameRecord, PacketType,
    TelecommandPacket, TelemetryFrame, FRAME_TYPE_TELEMETRY,
};

fn hexdump(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    println!(
        "CRC-16/CCITT-FALSE(\"123456789\") = 0x{:04X}\n",
        crc16(b"123456789")
    );

    let frame = TelemetryFrame {
        frame_type: FRAME_TYPE_TELEMETRY,
        cycle_start: 1,
        cycle_end: 2,
        records: vec![
            FrameRecord {
                payload_id: 1,
                cycle: 1,
                data: vec![0x00, 0xCA, 0xFE],
            },
            FrameRecord {
                payload_id: 2,
                cycle: 2,
                data: vec![0x00, 0xBE, 0xEF],
            },
        ],
    };
    let frame_bytes = encode_frame(&frame).unwrap();
    println!(
        "telemetry frame ({} bytes):\n  {}",
        frame_bytes.len(),
        hexdump(&frame_bytes)
    );
    println!("  sync=eb90 type=01 cycles=[1,2] records=2 crc=trailing two bytes");
    assert_eq!(decode_frame(&frame_bytes).unwrap(), frame);

    let empty = encode_frame(&TelemetryFrame::empty(FRAME_TYPE_TELEMETRY)).unwrap();
    println!(
        "\nempty frame is exactly {} bytes:\n  {}",
        empty.len(),
        hexdump(&empty)
    );

    let packet = TelecommandPacket {
        packet_type: PacketType::PayloadCommand,
        target: 1,
        args: vec![0xAA, 0x55],
    };
    let packet_bytes = encode_packet(&packet).unwrap();
    println!(
        "\ntelecommand packet ({} bytes):\n  {}",
        packet_bytes.len(),
        hexdump(&packet_bytes)
    );
    assert_eq!(decode_packet(&packet_bytes).unwrap(), packet);

    println!("\nsingle-bit corruption is always caught:");
    for bit in [0usize, 20, 60, frame_bytes.len() * 8 - 1] {
        let mut corrupted = frame_bytes.clone();
        corrupted[bit / 8] ^= 1 << (bit % 8);
        let err = decode_frame(&corrupted).unwrap_err();
        println!("  flip bit {bit:>3} -> {err}");
    }
}
