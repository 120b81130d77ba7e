//! `holorelay` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or I/O error, 2 usage error.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use holorelay::color_codec::DEFLATE_CODEC_ID;
use holorelay::config::{config_file_args, parse_profile, parse_queue_capacity, SceneSpec};
use holorelay::depth_codec::{decode, encode, CodecState, DepthCodecConfig, TileGrid};
use holorelay::frame::{record_sink, FrameSource};
use holorelay::gateway::{Gateway, GatewayConfig};
use holorelay::geometry::{to_mesh, DEFAULT_DISCONTINUITY_MM};
use holorelay::session::{RenderMode, ScriptedAction, Simulation, SimulationConfig};
use holorelay::wire::{depth_message_len, NetworkProfile};

type Result<T, E = Box<dyn Error>> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "holorelay", version, about = "Volumetric remote assistance: codec bench, simulation, recording, viewer gateway")]
#[command(args_override_self = true)]
struct Cli {
    /// Read default flags from a `key = value` file; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure depth compression on a recording or synthetic scene.
    BenchCodec(BenchArgs),
    /// Run a full operator/expert session over a simulated network.
    Simulate(SimulateArgs),
    /// Record a scene to a VRS1 file.
    Record(RecordArgs),
    /// Read a VRS1 file back; optionally re-record it.
    Replay(ReplayArgs),
    /// Serve the operator side to a browser expert over WebSocket.
    ServeViewer(ServeArgs),
    /// Write one frame's mesh as OBJ.
    ExportMesh(ExportArgs),
}

fn scene_arg(s: &str) -> Result<SceneSpec, String> {
    SceneSpec::parse(s).map_err(|e| e.to_string())
}

fn profile_arg(s: &str) -> Result<NetworkProfile, String> {
    parse_profile(s).map_err(|e| e.to_string())
}

/// Media queue bound; `None` is unbounded.
#[derive(Debug, Clone, Copy)]
struct Capacity(Option<usize>);

fn capacity_arg(s: &str) -> Result<Capacity, String> {
    parse_queue_capacity(s).map(Capacity).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct CodecArgs {
    /// Tile edge in pixels.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u8).range(1..))]
    tile: u8,
    /// Per-pixel change (mm) that marks a tile dirty.
    #[arg(long, default_value_t = 10)]
    threshold: u16,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    keyframe_interval: u32,
}

impl CodecArgs {
    fn config(&self) -> DepthCodecConfig {
        DepthCodecConfig {
            tile_size: self.tile,
            change_threshold_mm: self.threshold,
            keyframe_interval: self.keyframe_interval,
        }
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scene description or VRS1 file.
    #[arg(long, default_value = "synthetic", value_parser = scene_arg)]
    input: SceneSpec,
    #[arg(long, default_value_t = 30)]
    frames: u64,
    #[command(flatten)]
    codec: CodecArgs,
    /// Print a JSON report instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RenderArg {
    None,
    PointCloud,
    Mesh,
}

impl From<RenderArg> for RenderMode {
    fn from(r: RenderArg) -> Self {
        match r {
            RenderArg::None => RenderMode::None,
            RenderArg::PointCloud => RenderMode::PointCloud,
            RenderArg::Mesh => RenderMode::Mesh,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "synthetic", value_parser = scene_arg)]
    scene: SceneSpec,
    /// `null`, `default`, or `latency_ms,jitter_ms,loss,bandwidth` (e.g. `80,20,0.005,20M`).
    #[arg(long, default_value = "default", value_parser = profile_arg)]
    profile: NetworkProfile,
    /// Capture duration in seconds; the session drains afterwards.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Network randomness seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Operator media queue length; `0` or `unbounded` for no limit.
    #[arg(long, default_value = "2", value_parser = capacity_arg)]
    queue_capacity: Capacity,
    /// Write one JSON stats line per peer per simulated second.
    #[arg(long, value_name = "FILE")]
    stats_out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Keyframe every frame and send raw color.
    #[arg(long)]
    no_compression: bool,
    #[arg(long, value_enum, default_value = "point-cloud")]
    render: RenderArg,
    /// Random annotation actions from both peers spread over the run.
    #[arg(long, default_value_t = 0)]
    annotations: usize,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Debug, Args)]
struct RecordArgs {
    #[arg(long, default_value = "synthetic", value_parser = scene_arg)]
    scene: SceneSpec,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: u64,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    input: PathBuf,
    /// Stop after this many frames.
    #[arg(long)]
    frames: Option<u64>,
    /// Re-record what was read.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    listen: String,
    #[arg(long, default_value = "synthetic", value_parser = scene_arg)]
    scene: SceneSpec,
    #[arg(long, default_value = "null", value_parser = profile_arg)]
    profile: NetworkProfile,
    #[arg(long, default_value = "2", value_parser = capacity_arg)]
    queue_capacity: Capacity,
    /// Stop capturing after this many frames (default: run forever, looping replays).
    #[arg(long)]
    frames: Option<u64>,
    /// Exit after the first client leaves.
    #[arg(long)]
    once: bool,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, default_value = "synthetic", value_parser = scene_arg)]
    scene: SceneSpec,
    /// Zero-based frame index.
    #[arg(long, default_value_t = 0)]
    frame: u64,
    /// Output file; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Depth jump (mm) across which no triangle is built.
    #[arg(long, default_value_t = DEFAULT_DISCONTINUITY_MM)]
    discontinuity: u16,
}

#[derive(Debug, Serialize)]
struct HistogramBin {
    tiles: usize,
    frames: u64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    frames: u64,
    width: u16,
    height: u16,
    tile_size: u8,
    threshold_mm: u16,
    keyframe_interval: u32,
    tiles_per_frame_max: usize,
    keyframes: u64,
    deltas: u64,
    raw_bytes: u64,
    encoded_bytes: u64,
    /// Raw depth bytes over encoded wire bytes; `null` with no frames.
    ratio: Option<f64>,
    /// Tiles carried per frame; keyframes count as every tile.
    tiles_histogram: Vec<HistogramBin>,
    mean_tiles_per_frame: Option<f64>,
    max_error_mm: u16,
    encode_ms: f64,
    decode_ms: f64,
}

fn bench_codec(args: &BenchArgs) -> Result<()> {
    let config = args.codec.config();
    config.validate()?;
    let source = args.input.open(Some(args.frames), false)?;
    let k = source.intrinsics();
    let grid = TileGrid::new(k.width, k.height, config.tile_size);
    let (mut enc, mut dec) = (CodecState::new(), CodecState::new());
    let mut report = BenchReport {
        frames: 0,
        width: k.width,
        height: k.height,
        tile_size: config.tile_size,
        threshold_mm: config.change_threshold_mm,
        keyframe_interval: config.keyframe_interval,
        tiles_per_frame_max: grid.tile_count(),
        keyframes: 0,
        deltas: 0,
        raw_bytes: 0,
        encoded_bytes: 0,
        ratio: None,
        tiles_histogram: Vec::new(),
        mean_tiles_per_frame: None,
        max_error_mm: 0,
        encode_ms: 0.0,
        decode_ms: 0.0,
    };
    let mut histogram = BTreeMap::<usize, u64>::new();
    let mut tiles_total = 0u64;
    for pair in source {
        let depth = pair?.depth;
        let t = Instant::now();
        let msg = encode(&mut enc, &depth, &config)?;
        report.encode_ms += t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let decoded = decode(&mut dec, &msg)?;
        report.decode_ms += t.elapsed().as_secs_f64() * 1e3;

        let tiles = if msg.is_keyframe() { grid.tile_count() } else { msg.tile_count() };
        *histogram.entry(tiles).or_default() += 1;
        tiles_total += tiles as u64;
        if msg.is_keyframe() {
            report.keyframes += 1;
        } else {
            report.deltas += 1;
        }
        report.frames += 1;
        report.raw_bytes += 2 * depth.depth.len() as u64;
        report.encoded_bytes += depth_message_len(&msg) as u64;
        let err = depth.depth.iter().zip(&decoded.depth).map(|(a, b)| a.abs_diff(*b)).max();
        report.max_error_mm = report.max_error_mm.max(err.unwrap_or(0));
    }
    if report.frames > 0 {
        report.ratio = Some(report.raw_bytes as f64 / report.encoded_bytes as f64);
        report.mean_tiles_per_frame = Some(tiles_total as f64 / report.frames as f64);
    }
    report.tiles_histogram = histogram
        .into_iter()
        .map(|(tiles, frames)| HistogramBin { tiles, frames })
        .collect();

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "frames {} ({}x{}, tile {}, threshold {} mm, keyframe every {})",
        report.frames, report.width, report.height, report.tile_size, report.threshold_mm, report.keyframe_interval
    );
    if report.frames == 0 {
        println!("no frames encoded");
        return Ok(());
    }
    println!(
        "bytes raw {} encoded {} ratio {:.2}",
        report.raw_bytes,
        report.encoded_bytes,
        report.ratio.unwrap_or(0.0)
    );
    println!(
        "keyframes {} deltas {} mean tiles/frame {:.1} of {}",
        report.keyframes,
        report.deltas,
        report.mean_tiles_per_frame.unwrap_or(0.0),
        report.tiles_per_frame_max
    );
    println!("tiles/frame histogram:");
    for bin in &report.tiles_histogram {
        println!("  {:>6} tiles: {} frames", bin.tiles, bin.frames);
    }
    println!(
        "max error {} mm, encode {:.1} ms, decode {:.1} ms",
        report.max_error_mm, report.encode_ms, report.decode_ms
    );
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    if !(args.duration.is_finite() && args.duration >= 0.0) {
        return Err(format!("duration must be a non-negative number of seconds, got {}", args.duration).into());
    }
    let source = args.scene.open(None, true)?;
    let k = source.intrinsics();
    let duration_us = (args.duration * 1e6).round() as u64;
    let mut config = SimulationConfig {
        duration_us,
        profile: args.profile.with_seed(args.seed),
        queue_capacity: args.queue_capacity.0,
        depth: args.codec.config(),
        color_codec: DEFLATE_CODEC_ID,
        render: args.render.into(),
        script: ScriptedAction::random_script(args.seed, args.annotations, duration_us, k.width, k.height),
        ..SimulationConfig::default()
    };
    if args.no_compression {
        config = config.without_compression();
    }
    let started = Instant::now();
    let report = Simulation::new(config, source)?.run()?;
    let wall = started.elapsed();

    if let Some(path) = &args.stats_out {
        std::fs::write(path, report.stats_jsonl()).map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    if args.json {
        println!("{}", report.to_json());
        return Ok(());
    }
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1} ms"));
    println!(
        "simulated {:.1} s (drained at {:.1} s) in {:.2} s wall, seed {}",
        report.duration_us as f64 / 1e6,
        report.end_us as f64 / 1e6,
        wall.as_secs_f64(),
        report.seed
    );
    println!(
        "frames captured {}, reconstructed {} (+{} depth-only), latency samples {}",
        report.frames_captured, report.reconstructed_frames, report.depth_only_frames, report.latency_samples
    );
    println!(
        "e2e p50 {} p95 {} max {}",
        ms(report.e2e_p50_ms),
        ms(report.e2e_p95_ms),
        ms(report.e2e_max_ms)
    );
    println!(
        "drops: queue {} network {}; keyframes {} (requested {})",
        report.queue_drops, report.network_losses, report.keyframes_sent, report.keyframe_requests
    );
    println!(
        "bytes: operator {} expert {}; strokes {} (converged: {})",
        report.operator.bytes_tx, report.expert.bytes_tx, report.strokes, report.annotations_converged
    );
    Ok(())
}

fn record(args: &RecordArgs) -> Result<()> {
    let source = args.scene.open(Some(args.frames), false)?;
    let n = record_sink(source, &args.out).map_err(|e| format!("recording to {}: {e}", args.out.display()))?;
    println!("recorded {n} frames to {}", args.out.display());
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let source = SceneSpec::Replay(args.input.clone()).open(args.frames, false)?;
    let (k, fps) = (source.intrinsics(), source.fps());
    if let Some(out) = &args.out {
        let n = record_sink(source, out).map_err(|e| format!("writing {}: {e}", out.display()))?;
        println!("replayed {n} frames into {}", out.display());
        return Ok(());
    }
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut n = 0u64;
    for pair in source {
        let pair = pair?;
        n += 1;
        if args.json {
            writeln!(
                out,
                "{}",
                serde_json::json!({
                    "frame_id": pair.depth.frame_id,
                    "capture_ts_us": pair.depth.capture_ts_us,
                    "valid_pixels": pair.depth.valid_count(),
                })
            )?;
        } else {
            writeln!(
                out,
                "frame {} at {} us: {} valid depth pixels",
                pair.depth.frame_id,
                pair.depth.capture_ts_us,
                pair.depth.valid_count()
            )?;
        }
    }
    if !args.json {
        writeln!(out, "{n} frames, {}x{} at {:.2} fps", k.width, k.height, fps.as_f64())?;
    }
    out.flush()?;
    Ok(())
}

fn serve_viewer(args: &ServeArgs) -> Result<()> {
    let config = GatewayConfig {
        scene: args.scene.clone(),
        profile: args.profile,
        depth: args.codec.config(),
        queue_capacity: args.queue_capacity.0,
        frame_limit: args.frames,
        ..GatewayConfig::default()
    };
    let gateway = Gateway::bind(args.listen.as_str(), config)?;
    println!("listening on {}", gateway.local_addr()?);
    io::stdout().flush()?;
    let outcomes = gateway.serve(args.once.then_some(1))?;
    for o in outcomes {
        println!(
            "session: {} depth frames sent, {} annotation ops, {} strokes, {} clients rejected",
            o.depth_frames_sent,
            o.ops_received,
            o.annotations.strokes().len(),
            o.rejected_clients
        );
    }
    Ok(())
}

fn export_mesh(args: &ExportArgs) -> Result<()> {
    let mut source = args.scene.open(Some(args.frame + 1), false)?;
    let pair = source
        .nth(args.frame as usize)
        .ok_or_else(|| format!("scene has no frame {}", args.frame))??;
    let mesh = to_mesh(&pair.depth, &pair.color, args.discontinuity)?;
    if args.out == Path::new("-") {
        mesh.write_obj(BufWriter::new(io::stdout().lock()))?;
    } else {
        let file = File::create(&args.out).map_err(|e| format!("creating {}: {e}", args.out.display()))?;
        let mut out = BufWriter::new(file);
        mesh.write_obj(&mut out)?;
        out.flush()?;
        eprintln!(
            "wrote {} vertices, {} triangles to {}",
            mesh.vertices.len(),
            mesh.triangles.len(),
            args.out.display()
        );
    }
    Ok(())
}

/// Splices `--config FILE` contents in right after the subcommand name, so
/// flags given on the command line come later and win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, (String, u8)> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            match it.next() {
                Some(path) => config = Some(path),
                None => return Ok([out, vec![arg]].concat()),
            }
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            out.push(arg);
        }
    }
    let Some(path) = config else { return Ok(out) };
    let text = std::fs::read_to_string(&path).map_err(|e| (format!("cannot read config file {path}: {e}"), 1))?;
    let extra = config_file_args(&text).map_err(|e| (format!("{path}: {e}"), 2))?;
    let sub = out
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(out.len(), |i| i + 2);
    out.splice(sub..sub, extra);
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match expand_config(std::env::args().collect()) {
        Ok(argv) => argv,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::BenchCodec(a) => bench_codec(a),
        Command::Simulate(a) => simulate(a),
        Command::Record(a) => record(a),
        Command::Replay(a) => replay(a),
        Command::ServeViewer(a) => serve_viewer(a),
        Command::ExportMesh(a) => export_mesh(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

