//! Live operator session served to a browser expert over WebSocket.
//!
//! One socket carries both directions. Text frames are JSON control
//! messages; binary frames are serialized depth and color [`WireMessage`]s,
//! exactly as they would cross a peer link, so the browser runs the same
//! decoder as the expert peer.
//!
//! Server to client:
//!
//! | `type`          | when                                                    |
//! |-----------------|---------------------------------------------------------|
//! | `hello`         | first frame: role, version, resolution, intrinsics, codec settings |
//! | `annotation_op` | echo of every accepted client op, with the server-assigned stroke id, seq and anchored 3D point |
//! | `stats`         | once per second                                         |
//! | `error`         | `no_surface`, `no_open_stroke`, `bad_request`, `role_conflict`, `version_mismatch` |
//!
//! Client to server:
//!
//! * `{"type":"annotation_op","op":"stroke_begin","u":..,"v":..,"color":[r,g,b]}`,
//!   `stroke_point` (`u`, `v`), `stroke_end`, `erase_stroke` (`stroke_id`),
//!   `clear_all`. Pixels are anchored on the server against the operator's
//!   own depth, which is the authoritative copy.
//! * `{"type":"gesture","u":..,"v":..}` for a pointer along the pixel ray.
//! * `{"type":"keyframe_request"}` after the client's decoder loses sync.
//! * `{"type":"hello","role":"expert","version":1}` (optional) and `{"type":"bye"}`.
//! * Binary `AnnotationOp`, `GestureEvent` and keyframe-request `Stats`
//!   messages are accepted too.
//!
//! Media goes through a [`SimLink`] driven by wall-clock time, so
//! `--profile` shapes what the browser sees. Only one client is served at a
//! time; a second connection gets a `role_conflict` error and is closed.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message as WsMessage, WebSocket};

use crate::annotation::{anchor_screen_input, AnnotationOp, AnnotationState, GestureEvent, GestureKind, OpAuthor, OpKind};
use crate::color_codec::DEFLATE_CODEC_ID;
use crate::config::SceneSpec;
use crate::depth_codec::DepthCodecConfig;
use crate::frame::{FrameError, FramePair, FrameSource};
use crate::geometry::Ray;
use crate::session::{us_to_ms, LatencySummary, OperatorPeer, PeerError, PeerRole, SessionStats};
use crate::wire::{
    deserialize, peek_media, serialize, Hello, HelloAck, AckStatus, LinkError, Message, MsgType, NetworkProfile, Side,
    SimLink, StatsReport, WireMessage, FLAG_KEYFRAME_REQUEST, WIRE_VERSION,
};

const OPERATOR: Side = Side::A;
const BROWSER: Side = Side::B;
/// Read timeout on the client socket; doubles as the loop's idle sleep.
const POLL: Duration = Duration::from_millis(2);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },

    #[error("socket: {0}")]
    Io(#[from] io::Error),

    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),

    #[error("frame source: {0}")]
    Frame(#[from] FrameError),

    #[error("link: {0}")]
    Link(#[from] LinkError),

    #[error("codec: {0}")]
    Peer(#[from] PeerError),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub scene: SceneSpec,
    pub profile: NetworkProfile,
    pub depth: DepthCodecConfig,
    pub color_codec: u8,
    pub queue_capacity: Option<usize>,
    pub stats_interval_us: u64,
    /// Stop capturing after this many frames; replays loop when `None`.
    pub frame_limit: Option<u64>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::parse("synthetic").expect("default scene"),
            profile: NetworkProfile::null(),
            depth: DepthCodecConfig::default(),
            color_codec: DEFLATE_CODEC_ID,
            queue_capacity: Some(2),
            stats_interval_us: 1_000_000,
            frame_limit: None,
        }
    }
}

/// What happened during one served client session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    /// The operator's annotation state when the client left.
    pub annotations: AnnotationState,
    pub frames_captured: u64,
    /// Depth messages written to the socket.
    pub depth_frames_sent: u64,
    pub media_bytes_sent: u64,
    /// Annotation ops accepted from the client.
    pub ops_received: u64,
    pub keyframe_requests: u64,
    /// Concurrent connections turned away.
    pub rejected_clients: u64,
    /// Capture to socket write.
    pub latency: LatencySummary,
}

pub struct Gateway {
    listener: TcpListener,
    config: GatewayConfig,
}

impl Gateway {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, config: GatewayConfig) -> Result<Self, GatewayError> {
        let bind_err = |source| GatewayError::Bind {
            addr: format!("{addr:?}").trim_matches('"').to_string(),
            source,
        };
        config.profile.validate()?;
        config.depth.validate().map_err(PeerError::from)?;
        let listener = TcpListener::bind(&addr).map_err(bind_err)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves clients one after another; returns after `max_sessions`
    /// sessions, or never when `None`.
    pub fn serve(&self, max_sessions: Option<usize>) -> Result<Vec<SessionOutcome>, GatewayError> {
        let mut outcomes = Vec::new();
        while max_sessions.is_none_or(|n| outcomes.len() < n) {
            let stream = match self.listener.accept() {
                Ok((stream, peer)) => {
                    info!("client connected from {peer}");
                    stream
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let ws = match upgrade(stream) {
                Ok(ws) => ws,
                Err(e) => {
                    warn!("websocket handshake failed: {e}");
                    continue;
                }
            };
            let session = match Session::start(ws, &self.config) {
                Ok(session) => session,
                Err(e @ (GatewayError::WebSocket(_) | GatewayError::Io(_))) => {
                    warn!("client dropped during setup: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let outcome = session.run(&self.listener)?;
            info!(
                "client left after {} depth frames, {} annotation ops",
                outcome.depth_frames_sent, outcome.ops_received
            );
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}

fn upgrade(stream: TcpStream) -> Result<WebSocket<TcpStream>, GatewayError> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Interrupted(_) => {
            GatewayError::Io(io::Error::new(io::ErrorKind::TimedOut, "websocket handshake timed out"))
        }
        tungstenite::HandshakeError::Failure(e) => GatewayError::WebSocket(e),
    })?;
    Ok(ws)
}

fn error_json(code: &str, message: impl Into<String>) -> WsMessage {
    WsMessage::text(json!({"type": "error", "code": code, "message": message.into()}).to_string())
}

/// Turns away a connection while a session is active.
fn reject(stream: TcpStream) {
    let result = upgrade(stream).and_then(|mut ws| {
        ws.send(error_json("role_conflict", "the expert role is already taken by another client"))?;
        ws.close(Some(CloseFrame {
            code: CloseCode::Policy,
            reason: "role conflict".into(),
        }))?;
        // Give the close frame a chance to go out before the socket drops.
        let _ = ws.flush();
        Ok(())
    });
    if let Err(e) = result {
        debug!("rejecting second client: {e}");
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn op_json(op: &AnnotationOp) -> Value {
    json!({
        "type": "annotation_op",
        "author": op.author,
        "op": op.kind.name(),
        "stroke_id": op.stroke_id,
        "seq": op.seq,
        "point": op.point.to_array(),
        "color": op.color,
    })
}

fn pixel(v: &Value) -> Option<(u32, u32)> {
    let coord = |k: &str| v.get(k)?.as_f64().filter(|x| *x >= 0.0).map(|x| x.round() as u32);
    Some((coord("u")?, coord("v")?))
}

fn color_of(v: &Value) -> [u8; 3] {
    let mut rgb = [255, 0, 0];
    if let Some(arr) = v.get("color").and_then(Value::as_array) {
        for (slot, c) in rgb.iter_mut().zip(arr) {
            *slot = c.as_u64().map_or(*slot, |c| c.min(255) as u8);
        }
    }
    rgb
}

enum Flow {
    Continue,
    Leave,
}

struct Session<'a> {
    ws: WebSocket<TcpStream>,
    config: &'a GatewayConfig,
    source: Box<dyn FrameSource>,
    next_frame: Option<FramePair>,
    operator: OperatorPeer,
    link: SimLink,
    start: Instant,
    author: OpAuthor,
    /// The browser's view of the annotations, as far as the server knows.
    mirror: AnnotationState,
    open_stroke: Option<u32>,
    latency: SessionStats,
    next_stats_us: u64,
    depth_frames_sent: u64,
    media_bytes_sent: u64,
    ops_received: u64,
    keyframe_requests: u64,
    rejected: u64,
}

impl<'a> Session<'a> {
    fn start(ws: WebSocket<TcpStream>, config: &'a GatewayConfig) -> Result<Self, GatewayError> {
        ws.get_ref().set_read_timeout(Some(POLL))?;
        let looping = config.frame_limit.is_none();
        let source = config.scene.open(config.frame_limit, looping)?;
        let intrinsics = source.intrinsics();
        let mut operator = OperatorPeer::new(
            WIRE_VERSION,
            intrinsics,
            config.depth,
            config.color_codec,
            config.queue_capacity,
        )?;
        // The browser plays the expert; its side of the binary handshake is
        // implied by connecting.
        let _ = operator.core_mut().hello();
        operator.on_message(&WireMessage::new(Message::Hello(Hello {
            role: PeerRole::Expert,
            version: WIRE_VERSION,
            width: intrinsics.width,
            height: intrinsics.height,
        })));
        operator.on_message(&WireMessage::new(Message::HelloAck(HelloAck {
            status: AckStatus::Ok,
            role: PeerRole::Expert,
            version: WIRE_VERSION,
        })));
        debug_assert!(operator.core().handshake().is_established());

        let mut session = Self {
            ws,
            config,
            next_frame: None,
            operator,
            link: SimLink::new(config.profile)?,
            start: Instant::now(),
            author: OpAuthor::new(PeerRole::Expert),
            mirror: AnnotationState::new(),
            open_stroke: None,
            latency: SessionStats::new(PeerRole::Operator),
            next_stats_us: config.stats_interval_us,
            depth_frames_sent: 0,
            media_bytes_sent: 0,
            ops_received: 0,
            keyframe_requests: 0,
            rejected: 0,
            source,
        };
        let hello = json!({
            "type": "hello",
            "role": PeerRole::Operator,
            "peer_role": PeerRole::Expert,
            "version": WIRE_VERSION,
            "width": intrinsics.width,
            "height": intrinsics.height,
            "fps": session.source.fps().as_f64(),
            "intrinsics": {"fx": intrinsics.fx, "fy": intrinsics.fy, "cx": intrinsics.cx, "cy": intrinsics.cy},
            "tile_size": config.depth.tile_size,
            "keyframe_interval": config.depth.keyframe_interval,
            "color_codec": config.color_codec,
        });
        session.ws.send(WsMessage::text(hello.to_string()))?;
        Ok(session)
    }

    fn now_us(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }

    fn run(mut self, listener: &TcpListener) -> Result<SessionOutcome, GatewayError> {
        loop {
            match self.step(listener) {
                Ok(Flow::Continue) => {}
                Ok(Flow::Leave) => break,
                // A client that vanishes mid-write ends its session, not the server.
                Err(e @ (GatewayError::WebSocket(_) | GatewayError::Io(_))) => {
                    debug!("client connection lost: {e}");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(SessionOutcome {
            annotations: self.operator.core().annotations().clone(),
            frames_captured: self.operator.captured(),
            depth_frames_sent: self.depth_frames_sent,
            media_bytes_sent: self.media_bytes_sent,
            ops_received: self.ops_received,
            keyframe_requests: self.keyframe_requests,
            rejected_clients: self.rejected,
            latency: self.latency.latency(),
        })
    }

    fn step(&mut self, listener: &TcpListener) -> Result<Flow, GatewayError> {
        if let Flow::Leave = self.read_client()? {
            return Ok(Flow::Leave);
        }
        let now = self.now_us();
        self.capture(now)?;
        self.pump(now)?;
        self.deliver(now)?;
        if now >= self.next_stats_us {
            self.send_stats(now)?;
            self.next_stats_us += self.config.stats_interval_us;
        }
        while let Ok((stream, peer)) = listener.accept() {
            info!("rejecting concurrent client {peer}");
            self.rejected += 1;
            reject(stream);
        }
        Ok(Flow::Continue)
    }

    /// Handles everything the client has sent. The first read blocks for at
    /// most [`POLL`].
    fn read_client(&mut self) -> Result<Flow, GatewayError> {
        loop {
            let msg = match self.ws.read() {
                Ok(msg) => msg,
                Err(e) if is_timeout(&e) => return Ok(Flow::Continue),
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(Flow::Leave),
                Err(tungstenite::Error::Protocol(e)) => {
                    debug!("client went away: {e}");
                    return Ok(Flow::Leave);
                }
                Err(tungstenite::Error::Io(e)) if e.kind() != io::ErrorKind::Interrupted => {
                    debug!("client socket error: {e}");
                    return Ok(Flow::Leave);
                }
                Err(e) => return Err(e.into()),
            };
            let flow = match msg {
                WsMessage::Text(text) => self.on_json(text.as_str())?,
                WsMessage::Binary(bytes) => self.on_binary(&bytes)?,
                WsMessage::Close(_) => Flow::Leave,
                _ => Flow::Continue,
            };
            if let Flow::Leave = flow {
                let _ = self.ws.close(None);
                let _ = self.ws.flush();
                return Ok(Flow::Leave);
            }
        }
    }

    fn on_json(&mut self, text: &str) -> Result<Flow, GatewayError> {
        let v: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                self.ws.send(error_json("bad_request", format!("invalid JSON: {e}")))?;
                return Ok(Flow::Continue);
            }
        };
        let now = self.now_us();
        match v.get("type").and_then(Value::as_str) {
            Some("annotation_op") => self.on_client_op(&v, now)?,
            Some("gesture") => match (pixel(&v), self.operator.loopback_depth()) {
                (Some((u, w)), Some(depth)) => {
                    let event = GestureEvent {
                        kind: GestureKind::Point,
                        author: PeerRole::Expert,
                        ray: Ray::through_pixel(&depth.intrinsics, u as f32, w as f32),
                        ts_us: now,
                    };
                    self.forward_to_operator(WireMessage::new(Message::GestureEvent(event)), now)?;
                }
                (None, _) => self.ws.send(error_json("bad_request", "gesture needs u and v"))?,
                (_, None) => self.ws.send(error_json("no_surface", "no depth frame captured yet"))?,
            },
            Some("keyframe_request") => self.request_keyframe(now)?,
            Some("hello") => {
                let role = v.get("role").and_then(Value::as_str).unwrap_or("expert");
                let version = v.get("version").and_then(Value::as_u64).unwrap_or(u64::from(WIRE_VERSION));
                if role != "expert" {
                    self.ws.send(error_json("role_conflict", format!("the server is the operator; client claimed {role:?}")))?;
                    return Ok(Flow::Leave);
                }
                if version != u64::from(WIRE_VERSION) {
                    self.ws.send(error_json(
                        "version_mismatch",
                        format!("server speaks version {WIRE_VERSION}, client {version}"),
                    ))?;
                    return Ok(Flow::Leave);
                }
            }
            Some("bye") => return Ok(Flow::Leave),
            other => self.ws.send(error_json("bad_request", format!("unknown message type {other:?}")))?,
        }
        Ok(Flow::Continue)
    }

    fn on_client_op(&mut self, v: &Value, now: u64) -> Result<(), GatewayError> {
        let Some(kind) = v.get("op").and_then(Value::as_str).and_then(OpKind::parse) else {
            self.ws.send(error_json("bad_request", "annotation_op needs a known \"op\""))?;
            return Ok(());
        };
        let anchored = match pixel(v) {
            Some((u, w)) => self.operator.loopback_depth().and_then(|d| anchor_screen_input(d, u, w)),
            None => None,
        };
        let op = match kind {
            OpKind::StrokeBegin => {
                let Some(point) = anchored else {
                    self.ws.send(error_json("no_surface", "no valid depth under the pixel"))?;
                    return Ok(());
                };
                if let Some(id) = self.open_stroke.take() {
                    let end = self.author.end(id);
                    self.emit(end, now)?;
                }
                let (id, op) = self.author.begin(point, color_of(v));
                self.open_stroke = Some(id);
                op
            }
            OpKind::StrokePoint => match (self.open_stroke, anchored) {
                (None, _) => {
                    self.ws.send(error_json("no_open_stroke", "stroke_point without stroke_begin"))?;
                    return Ok(());
                }
                (Some(_), None) => {
                    self.ws.send(error_json("no_surface", "no valid depth under the pixel"))?;
                    return Ok(());
                }
                (Some(id), Some(point)) => self.author.point(id, point),
            },
            OpKind::StrokeEnd => match self.open_stroke.take() {
                Some(id) => self.author.end(id),
                None => {
                    self.ws.send(error_json("no_open_stroke", "stroke_end without stroke_begin"))?;
                    return Ok(());
                }
            },
            OpKind::EraseStroke => {
                let id = v.get("stroke_id").and_then(Value::as_u64).and_then(|id| u32::try_from(id).ok());
                let Some(id) = id.filter(|id| self.mirror.stroke(PeerRole::Expert, *id).is_some()) else {
                    self.ws.send(error_json("bad_request", "erase_stroke needs the stroke_id of a live expert stroke"))?;
                    return Ok(());
                };
                if self.open_stroke == Some(id) {
                    self.open_stroke = None;
                }
                self.author.erase(id)
            }
            OpKind::ClearAll => {
                self.open_stroke = None;
                self.author.clear_all(self.operator.core().annotations())
            }
        };
        self.emit(op, now)
    }

    /// Applies an expert op to the mirror, echoes it, and relays it.
    fn emit(&mut self, op: AnnotationOp, now: u64) -> Result<(), GatewayError> {
        if let Err(e) = self.mirror.apply(&op) {
            warn!("gateway could not apply its own op: {e}");
        }
        self.ops_received += 1;
        self.ws.send(WsMessage::text(op_json(&op).to_string()))?;
        self.forward_to_operator(WireMessage::new(Message::AnnotationOp(op)), now)
    }

    fn on_binary(&mut self, bytes: &[u8]) -> Result<Flow, GatewayError> {
        let now = self.now_us();
        match deserialize(bytes) {
            Ok(msg) if msg.is_keyframe_request() => self.request_keyframe(now)?,
            Ok(msg) => match msg.body {
                Message::AnnotationOp(op) if op.author == PeerRole::Expert => {
                    let _ = self.mirror.apply(&op);
                    self.ops_received += 1;
                    self.forward_to_operator(msg, now)?;
                }
                Message::GestureEvent(g) if g.author == PeerRole::Expert => self.forward_to_operator(msg, now)?,
                Message::Bye(_) => return Ok(Flow::Leave),
                other => self.ws.send(error_json(
                    "bad_request",
                    format!("unexpected binary {:?} from the expert", other.msg_type()),
                ))?,
            },
            Err(e) => self.ws.send(error_json("bad_request", format!("undecodable binary message: {e}")))?,
        }
        Ok(Flow::Continue)
    }

    fn request_keyframe(&mut self, now: u64) -> Result<(), GatewayError> {
        self.keyframe_requests += 1;
        let report = StatsReport {
            t_us: now,
            ..StatsReport::default()
        };
        self.forward_to_operator(WireMessage::new(Message::Stats(report)).with_flags(FLAG_KEYFRAME_REQUEST), now)
    }

    /// Sends a client message to the operator over the link's return path.
    fn forward_to_operator(&mut self, msg: WireMessage, now: u64) -> Result<(), GatewayError> {
        self.link.send(BROWSER, msg.body.channel(), serialize(&msg), now)?;
        Ok(())
    }

    fn capture(&mut self, now: u64) -> Result<(), GatewayError> {
        loop {
            if self.next_frame.is_none() {
                match self.source.next() {
                    Some(pair) => self.next_frame = Some(pair?),
                    None => return Ok(()),
                }
            }
            match self.next_frame.take() {
                Some(pair) if pair.depth.capture_ts_us <= now => self.operator.capture(pair),
                later => {
                    self.next_frame = later;
                    return Ok(());
                }
            }
        }
    }

    fn pump(&mut self, now: u64) -> Result<(), GatewayError> {
        while self.operator.has_pending_media() && self.link.idle_at(OPERATOR) <= now {
            let Some(msgs) = self.operator.next_media()? else { break };
            for msg in msgs {
                let receipt = self.link.send(OPERATOR, msg.body.channel(), serialize(&msg), now)?;
                if receipt.deliver_at_us.is_none() {
                    self.operator.media_lost(&msg);
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, now: u64) -> Result<(), GatewayError> {
        while let Some(delivery) = self.link.pop_due(now) {
            if delivery.to == BROWSER {
                if let Some((kind, _, capture_ts)) = peek_media(&delivery.bytes) {
                    if matches!(kind, MsgType::DepthKeyframe | MsgType::DepthDelta) {
                        self.depth_frames_sent += 1;
                        self.latency.record_latency(capture_ts, now);
                    }
                }
                self.media_bytes_sent += delivery.bytes.len() as u64;
                self.ws.send(WsMessage::binary(delivery.bytes))?;
            } else {
                match deserialize(&delivery.bytes) {
                    Ok(msg) => {
                        // The operator's replies (acks, nothing else today)
                        // have nowhere to go: the browser speaks JSON.
                        let _ = self.operator.on_message(&msg);
                    }
                    Err(e) => warn!("undecodable client message on link: {e}"),
                }
            }
        }
        Ok(())
    }

    fn send_stats(&mut self, now: u64) -> Result<(), GatewayError> {
        let snap = self.operator.core().stats().snapshot(now);
        let lat = self.latency.latency();
        let ms = |v: Option<u64>| v.map(us_to_ms);
        let stats = json!({
            "type": "stats",
            "t_us": now,
            "frames_tx": snap.frames_tx,
            "drops": snap.drops,
            "bytes_tx": snap.bytes_tx,
            "bandwidth_bps": self.config.profile.bandwidth_bps,
            "e2e_p50_ms": ms(lat.p50_us),
            "e2e_p95_ms": ms(lat.p95_us),
            "strokes": self.operator.core().annotations().strokes().len(),
        });
        self.ws.send(WsMessage::text(stats.to_string()))?;
        Ok(())
    }
}
