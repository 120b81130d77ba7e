//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the test harness so the lines reach the terminal.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;
use holorelay::annotation::{AnnotationState, OpAuthor};
use holorelay::depth_codec::{decode, encode, CodecState, DepthCodecConfig, EncodedDepthMessage};
use holorelay::frame::{CameraIntrinsics, ColorFrame, DepthFrame, SyntheticSceneConfig, SyntheticSource};
use holorelay::geometry::{deproject, project, raycast, to_mesh, Point3, Ray, RaycastParams, DEFAULT_DISCONTINUITY_MM};
use holorelay::session::{PeerRole, ScriptedAction, Simulation, SimulationConfig, StreamKind};
use holorelay::wire::{depth_message_len, deserialize, serialize, NetworkProfile};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_holorelay"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning holorelay: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "holorelay {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn latency_target() -> Outcome {
    let started = Instant::now();
    let out = cli(&[
        "simulate",
        "--scene",
        "synthetic",
        "--profile",
        "80,20,0.005,20M",
        "--duration",
        "30",
        "--seed",
        "7",
        "--queue-capacity",
        "2",
        "--json",
    ])?;
    let wall = started.elapsed().as_secs_f64();
    let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let p95 = report["e2e_p95_ms"].as_f64().ok_or("report has no p95")?;
    let p50 = report["e2e_p50_ms"].as_f64().unwrap_or(f64::NAN);
    let samples = report["latency_samples"].as_u64().unwrap_or(0);
    check(
        p95 < 500.0 && wall < 60.0 && samples > 0,
        format!("p50 {p50:.1} ms, p95 {p95:.1} ms over {samples} frames (< 500 ms), wall {wall:.1} s (< 60 s)"),
    )
}

fn failure_mode() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stats = dir.path().join("stats.jsonl");
    cli(&[
        "simulate",
        "--scene",
        "synthetic",
        "--profile",
        "80,20,0.005,5M",
        "--duration",
        "10",
        "--seed",
        "7",
        "--queue-capacity",
        "unbounded",
        "--no-compression",
        "--render",
        "none",
        "--stats-out",
        stats.to_str().unwrap(),
    ])?;
    let text = std::fs::read_to_string(&stats).map_err(|e| e.to_string())?;
    let first_over = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).expect("stats line is JSON"))
        .filter(|s| s["role"] == "expert" && s["t_us"].as_u64().unwrap() <= 10_000_000)
        .find(|s| s["e2e_p95_ms"].as_f64().is_some_and(|p| p > 3000.0));
    match first_over {
        Some(s) => Ok(format!(
            "expert p95 reaches {:.0} ms at t = {:.0} s (> 3000 ms within 10 s)",
            s["e2e_p95_ms"].as_f64().unwrap(),
            s["t_us"].as_f64().unwrap() / 1e6
        )),
        None => Err("no expert snapshot within 10 s exceeds 3000 ms".into()),
    }
}

fn codec_bounded_error() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let (mut sequences, mut frames, mut exact_runs) = (0, 0, 0);
    for seq in 0..240u32 {
        let tile = [8u8, 16, 32][rng.gen_range(0..3)];
        let threshold = if seq % 8 == 0 { 0 } else { rng.gen_range(0..=50) };
        let config = DepthCodecConfig {
            tile_size: tile,
            change_threshold_mm: threshold,
            keyframe_interval: rng.gen_range(1..=12),
        };
        let (w, h) = (rng.gen_range(1..=70u16), rng.gen_range(1..=50u16));
        let mut depth = random_depth(&mut rng, w, h);
        let (mut enc, mut dec) = (CodecState::new(), CodecState::new());
        for id in 0..rng.gen_range(2..10u32) {
            if id > 0 {
                perturb(&mut rng, &mut depth, w, h, 60);
            }
            let original = depth_frame(id, w, h, depth.clone());
            let msg = encode(&mut enc, &original, &config).map_err(|e| e.to_string())?;
            let decoded = decode(&mut dec, &msg).map_err(|e| e.to_string())?;
            for (i, (&a, &b)) in original.depth.iter().zip(&decoded.depth).enumerate() {
                if (a == 0) != (b == 0) {
                    return Err(format!("sequence {seq} frame {id} pixel {i}: validity flip lost ({a} -> {b})"));
                }
                if a.abs_diff(b) > threshold {
                    return Err(format!(
                        "sequence {seq} frame {id} pixel {i}: error {} exceeds threshold {threshold}",
                        a.abs_diff(b)
                    ));
                }
            }
            if threshold == 0 && original.depth != decoded.depth {
                return Err(format!("sequence {seq} frame {id}: threshold 0 not bit-exact"));
            }
            frames += 1;
        }
        sequences += 1;
        if threshold == 0 {
            exact_runs += 1;
        }
    }
    Ok(format!(
        "{sequences} sequences / {frames} frames within threshold; {exact_runs} threshold-0 sequences bit-exact"
    ))
}

fn codec_vs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut pairs = 0;
    let mut tiles_seen = 0;
    for pair in 0..80 {
        let tile = [8u8, 16, 32][rng.gen_range(0..3)];
        let threshold = rng.gen_range(0..=50);
        let (w, h) = (rng.gen_range(1..=90u16), rng.gen_range(1..=70u16));
        let reference = random_depth(&mut rng, w, h);
        let mut next = reference.clone();
        perturb(&mut rng, &mut next, w, h, 80);
        let config = DepthCodecConfig {
            tile_size: tile,
            change_threshold_mm: threshold,
            keyframe_interval: 30,
        };
        let mut state = CodecState::new();
        encode(&mut state, &depth_frame(0, w, h, reference.clone()), &config).map_err(|e| e.to_string())?;
        let msg = encode(&mut state, &depth_frame(1, w, h, next.clone()), &config).map_err(|e| e.to_string())?;
        let EncodedDepthMessage::Delta(delta) = msg else {
            return Err(format!("pair {pair}: second frame was not a delta"));
        };
        let got: Vec<u32> = delta.tiles.iter().map(|t| t.index).collect();
        let want: Vec<u32> = oracle_changed_tiles(&reference, &next, w, tile, threshold).into_iter().collect();
        if got != want {
            return Err(format!("pair {pair}: codec tiles {got:?} != oracle {want:?}"));
        }
        tiles_seen += got.len();
        pairs += 1;
    }
    Ok(format!("{pairs} pairs match the per-pixel oracle exactly ({tiles_seen} changed tiles)"))
}

fn compression_ratio() -> Outcome {
    let source = SyntheticSource::new(SyntheticSceneConfig {
        noise_amplitude_mm: 0,
        frame_limit: Some(30),
        ..SyntheticSceneConfig::default().static_scene()
    })
    .map_err(|e| e.to_string())?;
    let config = DepthCodecConfig {
        keyframe_interval: 30,
        ..DepthCodecConfig::default()
    };
    let mut state = CodecState::new();
    let (mut raw, mut encoded, mut n) = (0usize, 0usize, 0);
    for pair in source {
        let pair = pair.map_err(|e| e.to_string())?;
        let msg = encode(&mut state, &pair.depth, &config).map_err(|e| e.to_string())?;
        // Independent size: 12-byte header + fixed part + per-tile records.
        let expected = 12
            + match &msg {
                EncodedDepthMessage::Keyframe(k) => 33 + 2 * k.depth.len(),
                EncodedDepthMessage::Delta(d) => 20 + d.tiles.iter().map(|t| 6 + 2 * t.depth.len()).sum::<usize>(),
            };
        if expected != depth_message_len(&msg) || expected != serialize(&msg.clone().into_wire()).len() {
            return Err(format!("frame {n}: size accounting disagrees"));
        }
        raw += 2 * pair.depth.depth.len();
        encoded += expected;
        n += 1;
    }
    let ratio = raw as f64 / encoded as f64;
    check(
        n == 30 && ratio >= 10.0,
        format!("{n} frames: raw {raw} B / encoded {encoded} B = {ratio:.1} (>= 10)"),
    )
}

trait IntoWire {
    fn into_wire(self) -> holorelay::wire::WireMessage;
}

impl IntoWire for EncodedDepthMessage {
    fn into_wire(self) -> holorelay::wire::WireMessage {
        holorelay::wire::WireMessage::new(holorelay::wire::Message::from(self))
    }
}

fn routing_asymmetry() -> Outcome {
    let source = SyntheticSource::new(SyntheticSceneConfig::default()).map_err(|e| e.to_string())?;
    let config = SimulationConfig {
        duration_us: 10_000_000,
        profile: NetworkProfile::default().with_seed(11),
        initial_media_loss: 3,
        ..SimulationConfig::default()
    };
    let mut sim = Simulation::new(config, source).map_err(|e| e.to_string())?;
    let report = sim.run().map_err(|e| e.to_string())?;
    let op = sim.operator().core().stats();
    let ex = sim.expert().core().stats();
    let op_color = op.stream(StreamKind::Color);
    let lost_in_transit = op_color.drops - sim.operator().queue().dropped();
    let expected = op_color.frames_tx - lost_in_transit;
    let got = ex.stream(StreamKind::Color).frames_rx;
    check(
        op_color.frames_rx == 0 && got == expected && lost_in_transit > 0,
        format!(
            "operator received {} color; expert received {got} = {} sent - {lost_in_transit} lost ({} queue evictions not sent)",
            op_color.frames_rx,
            op_color.frames_tx,
            report.queue_drops
        ),
    )
}

fn annotation_convergence() -> Outcome {
    // Pure state: random interleavings of two authors' op streams.
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    let mut interleavings = 0;
    for run in 0..50 {
        let mut streams: Vec<Vec<_>> = Vec::new();
        for role in [PeerRole::Expert, PeerRole::Operator] {
            let mut author = OpAuthor::new(role);
            let mut local = AnnotationState::new();
            let mut open = None;
            let mut ops = Vec::new();
            while ops.len() < 60 {
                let op = match (rng.gen_range(0..10), open) {
                    (0..=1, _) | (_, None) => {
                        let (id, op) = author.begin(Point3::new(rng.gen(), rng.gen(), 1.0), rng.gen());
                        open = Some(id);
                        op
                    }
                    (2..=6, Some(id)) => author.point(id, Point3::new(rng.gen(), rng.gen(), 1.0)),
                    (7, Some(id)) => {
                        open = None;
                        author.end(id)
                    }
                    (8, Some(id)) => {
                        open = None;
                        author.erase(id)
                    }
                    _ => {
                        open = None;
                        author.clear_all(&local)
                    }
                };
                let _ = local.apply(&op);
                ops.push(op);
            }
            streams.push(ops);
        }
        let mut finals = Vec::new();
        for _ in 0..4 {
            let (mut a, mut b) = (0, 0);
            let mut state = AnnotationState::new();
            while a < streams[0].len() || b < streams[1].len() {
                let take_a = b == streams[1].len() || (a < streams[0].len() && rng.gen());
                let op = if take_a {
                    a += 1;
                    &streams[0][a - 1]
                } else {
                    b += 1;
                    &streams[1][b - 1]
                };
                let _ = state.apply(op);
            }
            finals.push(state);
            interleavings += 1;
        }
        if finals.windows(2).any(|w| w[0] != w[1]) {
            return Err(format!("run {run}: interleavings of 120 ops diverged"));
        }
    }
    // Full sessions: both peers annotate while media flows.
    let mut ops_relayed = 0;
    for seed in 0..6u64 {
        let source = SyntheticSource::new(SyntheticSceneConfig {
            width: 160,
            height: 144,
            ..SyntheticSceneConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let config = SimulationConfig {
            duration_us: 5_000_000,
            profile: NetworkProfile::default().with_seed(seed),
            script: ScriptedAction::random_script(seed, 320, 5_000_000, 160, 144),
            ..SimulationConfig::default()
        };
        let mut sim = Simulation::new(config, source).map_err(|e| e.to_string())?;
        let report = sim.run().map_err(|e| e.to_string())?;
        let relayed = report.operator.annotation.frames_tx + report.expert.annotation.frames_tx;
        if !report.annotations_converged {
            return Err(format!("session seed {seed}: peers diverged after {relayed} ops"));
        }
        if relayed < 100 {
            return Err(format!("session seed {seed}: only {relayed} ops relayed"));
        }
        ops_relayed += relayed;
    }
    Ok(format!(
        "{interleavings} interleavings of 120 ops agree; 6 simulated sessions converge ({ops_relayed} ops relayed)"
    ))
}

fn wire_golden() -> Outcome {
    for (name, msg) in golden_messages() {
        let bytes = fixture(name);
        if serialize(&msg) != bytes {
            return Err(format!("{name}: serialized bytes differ from fixture"));
        }
        if deserialize(&bytes).as_ref() != Ok(&msg) {
            return Err(format!("{name}: fixture does not parse back to the instance"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for i in 0..10_000 {
        let msg = random_message(&mut rng);
        let bytes = serialize(&msg);
        match deserialize(&bytes) {
            Ok(back) if back == msg => {}
            other => return Err(format!("fuzz case {i} ({:?}): {other:?}", msg.msg_type())),
        }
    }
    Ok("9 fixtures byte-identical; 10000 fuzzed messages round-trip".into())
}

fn geometry() -> Outcome {
    let k = CameraIntrinsics::nominal(2, 2);
    let depth = DepthFrame::filled(0, 0, k, 1500);
    let color = ColorFrame::new(0, 0, 2, 2, vec![90; 12]).map_err(|e| e.to_string())?;
    let mesh = to_mesh(&depth, &color, DEFAULT_DISCONTINUITY_MM).map_err(|e| e.to_string())?;
    if mesh.triangles.len() != 2 {
        return Err(format!("2x2 constant frame gave {} triangles", mesh.triangles.len()));
    }

    let k = CameraIntrinsics::nominal(640, 576);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E0);
    let mut worst = 0f32;
    for _ in 0..1000 {
        let (u, v, d) = (rng.gen_range(0..640), rng.gen_range(0..576), rng.gen_range(1..=65535u16));
        let p = deproject(u, v, d, &k).map_err(|e| e.to_string())?;
        let (pu, pv) = project(p, &k).ok_or("projection behind camera")?;
        worst = worst.max((pu - u as f32).abs()).max((pv - v as f32).abs());
    }
    if worst > 0.5 {
        return Err(format!("project(deproject) off by {worst} px"));
    }

    let plane_mm = 1500u16;
    let plane = DepthFrame::filled(0, 0, k, plane_mm);
    let params = RaycastParams::default();
    let ray = Ray::new(Point3::ORIGIN, Point3::new(0.0, 0.0, 1.0)).map_err(|e| e.to_string())?;
    let hit = raycast(&plane, &ray, &params).ok_or("principal ray missed the plane")?;
    let bound_m = (params.step_mm + params.hit_tolerance_mm) / 1000.0;
    let err = (hit.point.z - f32::from(plane_mm) / 1000.0).abs();
    check(
        hit.point.x.abs() <= 1e-6 && hit.point.y.abs() <= 1e-6 && err <= bound_m,
        format!(
            "2 triangles; max reprojection error {worst:.2e} px over 1000 pixels; raycast hit ({}, {}, {}) within {bound_m} m",
            hit.point.x, hit.point.y, hit.point.z
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.jsonl"));
        let out = cli(&[
            "simulate",
            "--profile",
            "default",
            "--duration",
            "10",
            "--seed",
            "7",
            "--annotations",
            "60",
            "--stats-out",
            path.to_str().unwrap(),
            "--json",
        ])?;
        let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        outputs.push((std::fs::read(&path).map_err(|e| e.to_string())?, report));
    }
    let lines = outputs[0].0.iter().filter(|&&b| b == b'\n').count();
    check(
        outputs[0] == outputs[1] && lines > 0,
        format!("two seed-7 runs: {lines} stats lines and the summary report identical"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("latency target", latency_target),
        ("failure-mode reproduction", failure_mode),
        ("codec bounded-error round trip", codec_bounded_error),
        ("codec vs oracle", codec_vs_oracle),
        ("compression ratio", compression_ratio),
        ("routing asymmetry", routing_asymmetry),
        ("annotation convergence", annotation_convergence),
        ("wire golden fixtures", wire_golden),
        ("geometry", geometry),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
