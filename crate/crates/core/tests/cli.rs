use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn holorelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holorelay"))
        .args(args)
        .output()
        .expect("spawn holorelay")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&holorelay(&[])), 2);
    assert_eq!(code(&holorelay(&["simulate", "--bogus-flag"])), 2);
    assert_eq!(code(&holorelay(&["teleport"])), 2);
    let bad_profile = holorelay(&["simulate", "--profile", "80,20"]);
    assert_eq!(code(&bad_profile), 2);
    assert!(String::from_utf8_lossy(&bad_profile.stderr).contains("invalid profile"));
    assert_eq!(code(&holorelay(&["simulate", "--profile", "80,20,1.5,20M"])), 2);
    assert_eq!(code(&holorelay(&["bench-codec", "--tile", "0"])), 2);
    assert_eq!(code(&holorelay(&["simulate", "--queue-capacity", "-3"])), 2);
}

#[test]
fn help_exits_0() {
    let out = holorelay(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["bench-codec", "simulate", "record", "replay", "serve-viewer", "export-mesh"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn bench_codec_static_scene_ratio() {
    let report = stdout_json(&holorelay(&[
        "bench-codec",
        "--input",
        "static:noise=0",
        "--frames",
        "30",
        "--keyframe-interval",
        "30",
        "--json",
    ]));
    assert_eq!(report["frames"], 30);
    assert_eq!(report["keyframes"], 1);
    assert_eq!(report["deltas"], 29);
    assert_eq!(report["max_error_mm"], 0);
    assert!(report["ratio"].as_f64().unwrap() >= 10.0);
    let bins = report["tiles_histogram"].as_array().unwrap();
    let frames: u64 = bins.iter().map(|b| b["frames"].as_u64().unwrap()).sum();
    assert_eq!(frames, 30);
}

#[test]
fn bench_codec_threshold_zero_on_noise_sends_every_tile() {
    let report = stdout_json(&holorelay(&[
        "bench-codec",
        "--input",
        "static:w=64,h=48,noise=30",
        "--frames",
        "10",
        "--threshold",
        "0",
        "--json",
    ]));
    let all = report["tiles_per_frame_max"].as_u64().unwrap();
    let ratio = report["ratio"].as_f64().unwrap();
    assert_eq!(report["mean_tiles_per_frame"].as_f64().unwrap(), all as f64);
    // Every delta carries every tile plus per-tile headers: worse than raw.
    assert!(ratio < 1.0, "ratio {ratio}");
}

#[test]
fn bench_codec_zero_frames_is_an_empty_report() {
    let report = stdout_json(&holorelay(&["bench-codec", "--frames", "0", "--json"]));
    assert_eq!(report["frames"], 0);
    assert_eq!(report["ratio"], Value::Null);
    assert_eq!(report["tiles_histogram"], serde_json::json!([]));
    assert_eq!(code(&holorelay(&["bench-codec", "--frames", "0"])), 0);
}

#[test]
fn bench_codec_bad_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.vrs1");
    std::fs::write(&file, b"not a recording").unwrap();
    let out = holorelay(&["bench-codec", "--input", path(&file)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn simulate_null_profile_has_no_latency_or_drops() {
    let report = stdout_json(&holorelay(&[
        "simulate",
        "--scene",
        "synthetic:w=160,h=144",
        "--profile",
        "null",
        "--duration",
        "1",
        "--json",
    ]));
    assert_eq!(report["e2e_p95_ms"], 0.0);
    assert_eq!(report["queue_drops"], 0);
    assert_eq!(report["network_losses"], 0);
    assert_eq!(report["frames_captured"], 15);
}

#[test]
fn simulate_writes_stats_lines() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.jsonl");
    let out = holorelay(&[
        "simulate",
        "--scene",
        "synthetic:w=160,h=144",
        "--duration",
        "3",
        "--stats-out",
        path(&stats),
    ]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("e2e p50"));
    let lines: Vec<Value> = std::fs::read_to_string(&stats)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 6);
    for line in &lines {
        for key in ["t_us", "role", "frames_rx", "frames_tx", "drops", "bytes_tx", "e2e_p50_ms", "e2e_p95_ms"] {
            assert!(line.get(key).is_some(), "{key} missing in {line}");
        }
    }
    assert_eq!(lines[0]["t_us"], 1_000_000);
    assert_eq!(lines[0]["role"], "operator");
    assert_eq!(lines[1]["role"], "expert");
}

#[test]
fn simulate_stats_out_to_unwritable_path_exits_1() {
    let out = holorelay(&[
        "simulate",
        "--scene",
        "synthetic:w=32,h=24",
        "--duration",
        "0.2",
        "--stats-out",
        "/nonexistent-dir/stats.jsonl",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.conf");
    std::fs::write(
        &cfg,
        "# a null link\nprofile = 0,0,0,inf\nduration = 1\nscene = synthetic:w=64,h=48\njson = true\n",
    )
    .unwrap();
    let report = stdout_json(&holorelay(&["--config", path(&cfg), "simulate", "--duration", "2"]));
    assert_eq!(report["duration_us"], 2_000_000);
    assert_eq!(report["e2e_p95_ms"], 0.0);
    // Also accepted after the subcommand.
    let report = stdout_json(&holorelay(&["simulate", "--config", path(&cfg)]));
    assert_eq!(report["duration_us"], 1_000_000);

    std::fs::write(&cfg, "this is not a setting\n").unwrap();
    assert_eq!(code(&holorelay(&["--config", path(&cfg), "simulate"])), 2);
    assert_eq!(code(&holorelay(&["--config", "/nonexistent.conf", "simulate"])), 1);
}

#[test]
fn record_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.vrs1"), dir.path().join("b.vrs1"));
    let out = holorelay(&["record", "--scene", "synthetic:w=32,h=24", "--frames", "10", "--out", path(&a)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("recorded 10 frames"));
    assert_eq!(code(&holorelay(&["replay", "--input", path(&a), "--out", path(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let out = holorelay(&["replay", "--input", path(&a), "--frames", "3", "--json"]);
    assert_eq!(code(&out), 0);
    let ids: Vec<u64> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["frame_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [0, 1, 2]);

    // A recording is also a scene for the other commands.
    let report = stdout_json(&holorelay(&["bench-codec", "--input", path(&a), "--json"]));
    assert_eq!(report["frames"], 10);
}

#[test]
fn io_failures_exit_1() {
    let out = holorelay(&["record", "--frames", "2", "--out", "/nonexistent-dir/x.vrs1"]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&holorelay(&["replay", "--input", "/nonexistent-dir/x.vrs1"])), 1);
}

#[test]
fn export_mesh_writes_obj() {
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("frame.obj");
    let out = holorelay(&["export-mesh", "--scene", "static:w=8,h=6,radius=0", "--out", path(&obj)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&obj).unwrap();
    let vertices = text.lines().filter(|l| l.starts_with("v ")).count();
    let faces = text.lines().filter(|l| l.starts_with("f ")).count();
    assert_eq!(vertices, 48);
    // A bare plane: two triangles per pixel quad.
    assert_eq!(faces, 2 * 7 * 5);

    let stdout = holorelay(&["export-mesh", "--scene", "static:w=8,h=6,noise=0", "--frame", "2"]);
    assert_eq!(code(&stdout), 0);
    assert!(String::from_utf8_lossy(&stdout.stdout).starts_with("v "));
    let short = holorelay(&["export-mesh", "--scene", "synthetic:w=8,h=6", "--frame", "5"]);
    assert_eq!(code(&short), 0);
}

#[test]
fn serve_viewer_bind_failure_exits_1() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = holorelay(&["serve-viewer", "--listen", &addr, "--once"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
