//! Shared helpers for the integration tests: fixture access, the golden
//! message set, random message and frame generators, and brute-force oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use holorelay::annotation::{AnnotationOp, GestureEvent, GestureKind, OpKind};
use holorelay::color_codec::EncodedColorMessage;
use holorelay::depth_codec::{DepthDelta, DepthKeyframe, DepthTile};
use holorelay::frame::{CameraIntrinsics, DepthFrame};
use holorelay::geometry::{Point3, Ray};
use holorelay::session::PeerRole;
use holorelay::wire::{AckStatus, Bye, Hello, HelloAck, Message, StatsReport, WireMessage, FLAG_KEYFRAME_REQUEST};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// The instances `gen_fixtures.py` writes, built through the public API.
pub fn golden_messages() -> Vec<(&'static str, WireMessage)> {
    let keyframe_k = CameraIntrinsics::new(504.0, 504.0, 2.0, 1.5, 4, 3).unwrap();
    vec![
        (
            "hello.bin",
            WireMessage::new(Message::Hello(Hello {
                role: PeerRole::Operator,
                version: 1,
                width: 640,
                height: 576,
            })),
        ),
        (
            "hello_ack.bin",
            WireMessage::new(Message::HelloAck(HelloAck {
                status: AckStatus::Ok,
                role: PeerRole::Expert,
                version: 1,
            })),
        ),
        (
            "depth_keyframe.bin",
            WireMessage::new(Message::DepthKeyframe(DepthKeyframe {
                frame_id: 30,
                capture_ts_us: 2_000_000,
                intrinsics: keyframe_k,
                tile_size: 2,
                depth: vec![1000, 1001, 0, 65535, 1200, 1200, 1200, 1200, 0, 0, 999, 1],
            })),
        ),
        (
            "depth_delta.bin",
            WireMessage::new(Message::DepthDelta(DepthDelta {
                frame_id: 31,
                ref_frame_id: 30,
                capture_ts_us: 2_066_666,
                tiles: vec![
                    DepthTile {
                        index: 1,
                        width: 2,
                        height: 2,
                        depth: vec![1500, 0, 1502, 1503],
                    },
                    DepthTile {
                        index: 3,
                        width: 2,
                        height: 1,
                        depth: vec![700, 701],
                    },
                ],
            })),
        ),
        (
            "color_frame.bin",
            WireMessage::new(Message::ColorFrame(EncodedColorMessage {
                frame_id: 31,
                capture_ts_us: 2_066_666,
                codec_id: 0,
                width: 2,
                height: 1,
                payload: vec![255, 0, 0, 10, 20, 30],
            })),
        ),
        (
            "annotation_op.bin",
            WireMessage::new(Message::AnnotationOp(AnnotationOp::stroke_begin(
                PeerRole::Expert,
                12,
                7,
                Point3::new(0.25, -0.5, 1.5),
                [255, 128, 0],
            ))),
        ),
        (
            "gesture_event.bin",
            WireMessage::new(Message::GestureEvent(GestureEvent {
                kind: GestureKind::Point,
                author: PeerRole::Operator,
                ray: Ray::from_unit(Point3::ORIGIN, Point3::new(0.6, 0.0, 0.8)).unwrap(),
                ts_us: 123_456_789,
            })),
        ),
        (
            "stats.bin",
            WireMessage::new(Message::Stats(StatsReport {
                t_us: 5_000_000,
                frames_tx: 75,
                frames_rx: 74,
                drops: 1,
                bytes_tx: 1_234_567,
                e2e_p50_us: Some(90_000),
                e2e_p95_us: None,
            }))
            .with_flags(FLAG_KEYFRAME_REQUEST),
        ),
        ("bye.bin", WireMessage::new(Message::Bye(Bye { reason: 1 }))),
    ]
}

/// 64-bit FNV-1a, the checksum the fixture generator records.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn depth_bytes(depth: &[u16]) -> Vec<u8> {
    depth.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn role(rng: &mut impl Rng) -> PeerRole {
    if rng.gen() {
        PeerRole::Expert
    } else {
        PeerRole::Operator
    }
}

fn point(rng: &mut impl Rng) -> Point3 {
    Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..10.0))
}

fn optional_us(rng: &mut impl Rng) -> Option<u64> {
    rng.gen_bool(0.8).then(|| rng.gen_range(0..u64::MAX))
}

/// A random message that is valid in structure (sizes and enum values agree)
/// but not necessarily meaningful.
pub fn random_message(rng: &mut impl Rng) -> WireMessage {
    let body = match rng.gen_range(1..=9) {
        1 => Message::Hello(Hello {
            role: role(rng),
            version: rng.gen(),
            width: rng.gen(),
            height: rng.gen(),
        }),
        2 => Message::HelloAck(HelloAck {
            status: *[AckStatus::Ok, AckStatus::RoleConflict, AckStatus::VersionMismatch]
                .choose(rng)
                .unwrap(),
            role: role(rng),
            version: rng.gen(),
        }),
        3 => {
            let (w, h) = (rng.gen_range(1..=24u16), rng.gen_range(1..=24u16));
            let intrinsics = CameraIntrinsics::new(
                rng.gen_range(1.0..1000.0),
                rng.gen_range(1.0..1000.0),
                rng.gen_range(0.0..f32::from(w)),
                rng.gen_range(0.0..f32::from(h)),
                w,
                h,
            )
            .unwrap();
            Message::DepthKeyframe(DepthKeyframe {
                frame_id: rng.gen(),
                capture_ts_us: rng.gen(),
                intrinsics,
                tile_size: rng.gen_range(1..=64),
                depth: (0..usize::from(w) * usize::from(h)).map(|_| rng.gen()).collect(),
            })
        }
        4 => {
            let mut index = 0u32;
            let tiles = (0..rng.gen_range(0..6))
                .map(|_| {
                    index += rng.gen_range(0..1000);
                    let (w, h) = (rng.gen_range(1..=16u8), rng.gen_range(1..=16u8));
                    let tile = DepthTile {
                        index,
                        width: w,
                        height: h,
                        depth: (0..usize::from(w) * usize::from(h)).map(|_| rng.gen()).collect(),
                    };
                    index += 1;
                    tile
                })
                .collect();
            Message::DepthDelta(DepthDelta {
                frame_id: rng.gen(),
                ref_frame_id: rng.gen(),
                capture_ts_us: rng.gen(),
                tiles,
            })
        }
        5 => Message::ColorFrame(EncodedColorMessage {
            frame_id: rng.gen(),
            capture_ts_us: rng.gen(),
            codec_id: rng.gen(),
            width: rng.gen(),
            height: rng.gen(),
            payload: (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect(),
        }),
        6 => Message::AnnotationOp(AnnotationOp {
            kind: *[
                OpKind::StrokeBegin,
                OpKind::StrokePoint,
                OpKind::StrokeEnd,
                OpKind::EraseStroke,
                OpKind::ClearAll,
            ]
            .choose(rng)
            .unwrap(),
            author: role(rng),
            stroke_id: rng.gen(),
            seq: rng.gen(),
            point: point(rng),
            color: rng.gen(),
        }),
        7 => {
            let direction = loop {
                let d = point(rng);
                if d.norm() > 1e-3 {
                    break d;
                }
            };
            Message::GestureEvent(GestureEvent {
                kind: GestureKind::Point,
                author: role(rng),
                ray: Ray::new(point(rng), direction).unwrap(),
                ts_us: rng.gen(),
            })
        }
        8 => Message::Stats(StatsReport {
            t_us: rng.gen(),
            frames_tx: rng.gen(),
            frames_rx: rng.gen(),
            drops: rng.gen(),
            bytes_tx: rng.gen(),
            e2e_p50_us: optional_us(rng),
            e2e_p95_us: optional_us(rng),
        }),
        _ => Message::Bye(Bye { reason: rng.gen() }),
    };
    WireMessage::new(body).with_flags(rng.gen())
}

/// A random depth image with invalid holes and a few flat regions.
pub fn random_depth(rng: &mut impl Rng, w: u16, h: u16) -> Vec<u16> {
    let base: u16 = rng.gen_range(300..8000);
    (0..usize::from(w) * usize::from(h))
        .map(|_| {
            if rng.gen_bool(0.05) {
                0
            } else {
                base.saturating_add(rng.gen_range(0..400))
            }
        })
        .collect()
}

/// Perturbs `depth` in place: a few rectangles move by up to `amplitude` mm,
/// single pixels flip validity, and some pixels jitter by a millimeter.
pub fn perturb(rng: &mut impl Rng, depth: &mut [u16], w: u16, h: u16, amplitude: u16) {
    let (w, h) = (usize::from(w), usize::from(h));
    for _ in 0..rng.gen_range(0..4) {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..w) + 1, rng.gen_range(y0..h) + 1);
        let shift = rng.gen_range(0..=i32::from(amplitude)) * if rng.gen() { 1 } else { -1 };
        for y in y0..y1 {
            for x in x0..x1 {
                let d = &mut depth[y * w + x];
                if *d != 0 {
                    *d = (i32::from(*d) + shift).clamp(1, 65535) as u16;
                }
            }
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        let i = rng.gen_range(0..depth.len());
        depth[i] = if depth[i] == 0 { rng.gen_range(300..9000) } else { 0 };
    }
    for _ in 0..rng.gen_range(0..8) {
        let i = rng.gen_range(0..depth.len());
        if depth[i] > 1 {
            depth[i] -= 1;
        }
    }
}

pub fn depth_frame(frame_id: u32, w: u16, h: u16, depth: Vec<u16>) -> DepthFrame {
    DepthFrame::new(frame_id, u64::from(frame_id) * 66_666, CameraIntrinsics::nominal(w, h), depth).unwrap()
}

/// Brute-force changed-tile oracle: walks every pixel, maps it to its tile by
/// integer division, and marks the tile when the pixel's validity flips or
/// its value moves by more than `threshold`.
pub fn oracle_changed_tiles(reference: &[u16], frame: &[u16], w: u16, tile: u8, threshold: u16) -> BTreeSet<u32> {
    let (w, t) = (usize::from(w), usize::from(tile));
    let cols = w.div_ceil(t);
    let mut out = BTreeSet::new();
    for (i, (&a, &b)) in reference.iter().zip(frame).enumerate() {
        let (x, y) = (i % w, i / w);
        let changed = (a == 0) != (b == 0) || (i32::from(a) - i32::from(b)).abs() > i32::from(threshold);
        if changed {
            out.insert(((y / t) * cols + x / t) as u32);
        }
    }
    out
}
