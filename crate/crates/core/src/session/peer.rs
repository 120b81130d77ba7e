//! The operator and expert pipelines, independent of the transport.
//!
//! Peers consume decoded [`WireMessage`]s and return the messages they want
//! sent; the driver owns the clock and the link.

use std::collections::BTreeMap;

use log::{debug, warn};
use thiserror::Error;

use super::handshake::Handshake;
use super::script::AnnotationAction;
use super::stats::{SessionStats, StreamKind};
use super::PeerRole;
use crate::annotation::{anchor_screen_input, AnnotationOp, AnnotationState, GestureEvent, GestureKind, OpAuthor, PointerSet};
use crate::color_codec::{color_decode, color_encode, ColorCodecError, EncodedColorMessage};
use crate::depth_codec::{decode, encode, CodecError, CodecState, DepthCodecConfig, EncodedDepthMessage};
use crate::frame::{CameraIntrinsics, ColorFrame, DepthFrame, FramePair};
use crate::geometry::{to_mesh, to_point_cloud, Ray};
use crate::wire::{payload_len, MediaQueue, Message, StatsReport, WireMessage, FLAG_KEYFRAME_REQUEST, HEADER_LEN};

pub const DEFAULT_PAIRING_TIMEOUT_US: u64 = 100_000;
/// Minimum spacing between keyframe requests from the expert.
pub const KEYFRAME_REQUEST_INTERVAL_US: u64 = 250_000;

#[derive(Debug, Error)]
pub enum PeerError {
    #[error(transparent)]
    Depth(#[from] CodecError),

    #[error(transparent)]
    Color(#[from] ColorCodecError),
}

/// State shared by both roles: handshake, annotations, pointers, counters.
#[derive(Debug, Clone)]
pub struct PeerCore {
    role: PeerRole,
    handshake: Handshake,
    annotations: AnnotationState,
    author: OpAuthor,
    open_stroke: Option<u32>,
    pointers: PointerSet,
    stats: SessionStats,
    peer_report: Option<StatsReport>,
    rejected_ops: u64,
    skipped_actions: u64,
    bye_received: bool,
}

impl PeerCore {
    pub fn new(role: PeerRole, version: u8, width: u16, height: u16) -> Self {
        Self {
            role,
            handshake: Handshake::new(role, version, width, height),
            annotations: AnnotationState::new(),
            author: OpAuthor::new(role),
            open_stroke: None,
            pointers: PointerSet::default(),
            stats: SessionStats::new(role),
            peer_report: None,
            rejected_ops: 0,
            skipped_actions: 0,
            bye_received: false,
        }
    }

    pub fn role(&self) -> PeerRole {
        self.role
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn annotations(&self) -> &AnnotationState {
        &self.annotations
    }

    pub fn pointers(&self) -> &PointerSet {
        &self.pointers
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut SessionStats {
        &mut self.stats
    }

    /// Last statistics report received from the other peer.
    pub fn peer_report(&self) -> Option<&StatsReport> {
        self.peer_report.as_ref()
    }

    /// Remote annotation ops that failed to apply.
    pub fn rejected_ops(&self) -> u64 {
        self.rejected_ops
    }

    /// Local actions that could not be turned into ops (no depth under the
    /// pixel, no open stroke, nothing to erase).
    pub fn skipped_actions(&self) -> u64 {
        self.skipped_actions
    }

    pub fn bye_received(&self) -> bool {
        self.bye_received
    }

    /// The opening `Hello`.
    pub fn hello(&mut self) -> WireMessage {
        self.outgoing(self.handshake.hello())
    }

    /// Counts `msg` as sent and returns it.
    pub fn outgoing(&mut self, msg: WireMessage) -> WireMessage {
        self.stats.record_tx(&msg.body, HEADER_LEN + payload_len(&msg.body));
        msg
    }

    /// Handles the role-independent messages. Returns a reply to send, and
    /// whether the message was consumed.
    fn on_common(&mut self, msg: &WireMessage) -> (Option<WireMessage>, bool) {
        match &msg.body {
            Message::Hello(_) | Message::HelloAck(_) => {
                self.stats.record_rx(StreamKind::Control);
                let reply = self.handshake.on_message(&msg.body).map(|m| self.outgoing(m));
                if let Some(e) = self.handshake.error() {
                    warn!("{} handshake failed: {e}", self.role);
                }
                (reply, true)
            }
            Message::AnnotationOp(op) => {
                self.stats.record_rx(StreamKind::Annotation);
                if let Err(e) = self.annotations.apply(op) {
                    debug!("{} rejected remote op: {e}", self.role);
                    self.rejected_ops += 1;
                }
                (None, true)
            }
            Message::GestureEvent(g) => {
                self.stats.record_rx(StreamKind::Gesture);
                self.pointers.insert(*g);
                (None, true)
            }
            Message::Bye(_) => {
                self.stats.record_rx(StreamKind::Control);
                self.bye_received = true;
                (None, true)
            }
            Message::Stats(report) => {
                self.stats.record_rx(StreamKind::Control);
                self.peer_report = Some(*report);
                (None, false)
            }
            _ => (None, false),
        }
    }

    fn emit_op(&mut self, op: AnnotationOp) -> WireMessage {
        if let Err(e) = self.annotations.apply(&op) {
            // Own ops are always fresh; a failure is a local bookkeeping bug.
            warn!("{} could not apply its own op: {e}", self.role);
        }
        self.outgoing(WireMessage::new(Message::AnnotationOp(op)))
    }

    /// Turns one input event into ops against `depth`, applying them locally.
    /// Returns the messages to relay.
    pub fn act(&mut self, action: &AnnotationAction, depth: Option<&DepthFrame>, now_us: u64) -> Vec<WireMessage> {
        let anchor = |u, v| depth.and_then(|d| anchor_screen_input(d, u, v));
        let mut out = Vec::new();
        match *action {
            AnnotationAction::Begin { u, v, color } => {
                if let Some(id) = self.open_stroke.take() {
                    let op = self.author.end(id);
                    out.push(self.emit_op(op));
                }
                match anchor(u, v) {
                    Some(point) => {
                        let (id, op) = self.author.begin(point, color);
                        self.open_stroke = Some(id);
                        out.push(self.emit_op(op));
                    }
                    None => self.skipped_actions += 1,
                }
            }
            AnnotationAction::Point { u, v } => match (self.open_stroke, anchor(u, v)) {
                (Some(id), Some(point)) => {
                    let op = self.author.point(id, point);
                    out.push(self.emit_op(op));
                }
                _ => self.skipped_actions += 1,
            },
            AnnotationAction::End => match self.open_stroke.take() {
                Some(id) => {
                    let op = self.author.end(id);
                    out.push(self.emit_op(op));
                }
                None => self.skipped_actions += 1,
            },
            AnnotationAction::Erase { nth } => {
                let own: Vec<u32> = self
                    .annotations
                    .strokes()
                    .keys()
                    .filter(|(a, _)| *a == self.role)
                    .map(|&(_, id)| id)
                    .collect();
                if own.is_empty() {
                    self.skipped_actions += 1;
                } else {
                    let id = own[nth % own.len()];
                    if self.open_stroke == Some(id) {
                        self.open_stroke = None;
                    }
                    let op = self.author.erase(id);
                    out.push(self.emit_op(op));
                }
            }
            AnnotationAction::ClearAll => {
                self.open_stroke = None;
                let op = self.author.clear_all(&self.annotations);
                out.push(self.emit_op(op));
            }
            AnnotationAction::Pointer { u, v } => match depth {
                Some(d) => {
                    let event = GestureEvent {
                        kind: GestureKind::Point,
                        author: self.role,
                        ray: Ray::through_pixel(&d.intrinsics, u as f32, v as f32),
                        ts_us: now_us,
                    };
                    self.pointers.insert(event);
                    out.push(self.outgoing(WireMessage::new(Message::GestureEvent(event))));
                }
                None => self.skipped_actions += 1,
            },
        }
        out
    }
}

/// Camera side: encodes and sends media, keeps a local depth loopback.
#[derive(Debug)]
pub struct OperatorPeer {
    core: PeerCore,
    depth_config: DepthCodecConfig,
    depth_state: CodecState,
    color_codec: u8,
    queue: MediaQueue<FramePair>,
    loopback: Option<DepthFrame>,
    loopback_frames: u64,
    captured: u64,
    keyframe_requests_rx: u64,
}

impl OperatorPeer {
    pub fn new(
        version: u8,
        intrinsics: CameraIntrinsics,
        depth_config: DepthCodecConfig,
        color_codec: u8,
        queue_capacity: Option<usize>,
    ) -> Result<Self, PeerError> {
        depth_config.validate()?;
        Ok(Self {
            core: PeerCore::new(PeerRole::Operator, version, intrinsics.width, intrinsics.height),
            depth_config,
            depth_state: CodecState::new(),
            color_codec,
            queue: MediaQueue::new(queue_capacity),
            loopback: None,
            loopback_frames: 0,
            captured: 0,
            keyframe_requests_rx: 0,
        })
    }

    pub fn core(&self) -> &PeerCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut PeerCore {
        &mut self.core
    }

    /// Latest depth frame delivered through the local loopback.
    pub fn loopback_depth(&self) -> Option<&DepthFrame> {
        self.loopback.as_ref()
    }

    pub fn loopback_frames(&self) -> u64 {
        self.loopback_frames
    }

    pub fn captured(&self) -> u64 {
        self.captured
    }

    pub fn queue(&self) -> &MediaQueue<FramePair> {
        &self.queue
    }

    pub fn keyframe_requests_rx(&self) -> u64 {
        self.keyframe_requests_rx
    }

    /// Takes one capture: loops depth back locally and queues the pair for
    /// sending, evicting the oldest queued pair if the queue is full.
    pub fn capture(&mut self, pair: FramePair) {
        self.captured += 1;
        self.loopback = Some(pair.depth.clone());
        self.loopback_frames += 1;
        if self.queue.push(pair).is_some() {
            self.core.stats.record_drop(StreamKind::Depth);
            self.core.stats.record_drop(StreamKind::Color);
        }
    }

    pub fn has_pending_media(&self) -> bool {
        self.core.handshake.is_established() && !self.queue.is_empty()
    }

    /// Encodes the oldest queued capture into a depth and a color message.
    /// Encoding happens here, at send time, so queue evictions never break
    /// the delta chain.
    pub fn next_media(&mut self) -> Result<Option<[WireMessage; 2]>, PeerError> {
        if !self.core.handshake.is_established() {
            return Ok(None);
        }
        let Some(pair) = self.queue.pop() else {
            return Ok(None);
        };
        let depth = encode(&mut self.depth_state, &pair.depth, &self.depth_config)?;
        let color = color_encode(&pair.color, self.color_codec)?;
        Ok(Some([
            self.core.outgoing(WireMessage::new(Message::from(depth))),
            self.core.outgoing(WireMessage::new(Message::ColorFrame(color))),
        ]))
    }

    /// Counts a media message the transport failed to deliver.
    pub fn media_lost(&mut self, msg: &WireMessage) {
        self.core.stats.record_drop(StreamKind::of(msg.msg_type()));
    }

    /// Drops everything still queued, counting it.
    pub fn abandon_queue(&mut self) {
        let n = self.queue.drain_as_dropped();
        for _ in 0..n {
            self.core.stats.record_drop(StreamKind::Depth);
            self.core.stats.record_drop(StreamKind::Color);
        }
    }

    pub fn on_message(&mut self, msg: &WireMessage) -> Vec<WireMessage> {
        let (reply, consumed) = self.core.on_common(msg);
        if !consumed {
            match &msg.body {
                Message::Stats(_) if msg.is_keyframe_request() => {
                    self.keyframe_requests_rx += 1;
                    self.depth_state.request_keyframe();
                }
                Message::Stats(_) => {}
                other => {
                    // Media never flows towards the operator.
                    warn!("operator ignoring unexpected {:?}", other.msg_type());
                    self.core.stats.record_rx(StreamKind::of(other.msg_type()));
                }
            }
        }
        reply.into_iter().collect()
    }

    pub fn act(&mut self, action: &AnnotationAction, now_us: u64) -> Vec<WireMessage> {
        self.core.act(action, self.loopback.as_ref(), now_us)
    }
}

/// How the expert turns decoded frames into geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderMode {
    /// Count frames only.
    None,
    #[default]
    PointCloud,
    Mesh,
}

/// Summary of one rendered frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reconstruction {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub colored: bool,
    pub points: usize,
    pub triangles: usize,
}

#[derive(Debug)]
struct Pending {
    depth: Option<DepthFrame>,
    color: Option<ColorFrame>,
    deadline_us: u64,
}

/// Viewer side: decodes, pairs, reconstructs, measures latency.
#[derive(Debug)]
pub struct ExpertPeer {
    core: PeerCore,
    depth_state: CodecState,
    render: RenderMode,
    pairing_timeout_us: u64,
    last_keyframe_request_us: Option<u64>,
    pending: BTreeMap<u32, Pending>,
    latest_depth: Option<DepthFrame>,
    latest: Option<Reconstruction>,
    reconstructed: u64,
    depth_only: u64,
    color_orphans: u64,
}

impl ExpertPeer {
    pub fn new(version: u8, render: RenderMode, pairing_timeout_us: u64) -> Self {
        Self {
            core: PeerCore::new(PeerRole::Expert, version, 0, 0),
            depth_state: CodecState::new(),
            render,
            pairing_timeout_us,
            last_keyframe_request_us: None,
            pending: BTreeMap::new(),
            latest_depth: None,
            latest: None,
            reconstructed: 0,
            depth_only: 0,
            color_orphans: 0,
        }
    }

    pub fn core(&self) -> &PeerCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut PeerCore {
        &mut self.core
    }

    pub fn latest_depth(&self) -> Option<&DepthFrame> {
        self.latest_depth.as_ref()
    }

    pub fn latest_reconstruction(&self) -> Option<&Reconstruction> {
        self.latest.as_ref()
    }

    pub fn reconstructed_frames(&self) -> u64 {
        self.reconstructed
    }

    /// Frames rendered without color after the pairing timeout.
    pub fn depth_only_frames(&self) -> u64 {
        self.depth_only
    }

    /// Color frames whose depth never arrived.
    pub fn color_orphans(&self) -> u64 {
        self.color_orphans
    }

    pub fn awaiting_keyframe(&self) -> bool {
        self.depth_state.reference().is_none()
    }

    /// Earliest pairing deadline.
    pub fn next_deadline(&self) -> Option<u64> {
        self.pending.values().map(|p| p.deadline_us).min()
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn stats_message(&mut self, now_us: u64) -> WireMessage {
        let report = self.core.stats.report(now_us);
        self.core.outgoing(WireMessage::new(Message::Stats(report)))
    }

    fn keyframe_request(&mut self, now_us: u64) -> Option<WireMessage> {
        if self
            .last_keyframe_request_us
            .is_some_and(|t| now_us < t + KEYFRAME_REQUEST_INTERVAL_US)
        {
            return None;
        }
        self.last_keyframe_request_us = Some(now_us);
        self.core.stats.record_keyframe_request();
        let report = self.core.stats.report(now_us);
        Some(
            self.core
                .outgoing(WireMessage::new(Message::Stats(report)).with_flags(FLAG_KEYFRAME_REQUEST)),
        )
    }

    fn render(&mut self, depth: DepthFrame, color: Option<ColorFrame>) {
        let (points, triangles) = match (self.render, &color) {
            (RenderMode::None, _) => (depth.valid_count(), 0),
            (RenderMode::Mesh, Some(color)) => match to_mesh(&depth, color, crate::geometry::DEFAULT_DISCONTINUITY_MM) {
                Ok(mesh) => (mesh.vertices.len(), mesh.triangles.len()),
                Err(e) => {
                    warn!("mesh for frame {} failed: {e}", depth.frame_id);
                    (0, 0)
                }
            },
            (_, color) => match to_point_cloud(&depth, color.as_ref()) {
                Ok(cloud) => (cloud.len(), 0),
                Err(e) => {
                    warn!("point cloud for frame {} failed: {e}", depth.frame_id);
                    (depth.valid_count(), 0)
                }
            },
        };
        self.reconstructed += 1;
        if color.is_none() {
            self.depth_only += 1;
        }
        self.latest = Some(Reconstruction {
            frame_id: depth.frame_id,
            capture_ts_us: depth.capture_ts_us,
            colored: color.is_some(),
            points,
            triangles,
        });
    }

    fn pending_entry(&mut self, frame_id: u32, now_us: u64) -> &mut Pending {
        let deadline_us = now_us + self.pairing_timeout_us;
        self.pending.entry(frame_id).or_insert(Pending {
            depth: None,
            color: None,
            deadline_us,
        })
    }

    fn try_pair(&mut self, frame_id: u32) {
        if let Some(p) = self.pending.get(&frame_id) {
            if p.depth.is_some() && p.color.is_some() {
                let p = self.pending.remove(&frame_id).unwrap();
                self.render(p.depth.unwrap(), p.color);
            }
        }
    }

    fn on_depth(&mut self, msg: &EncodedDepthMessage, now_us: u64) -> Option<WireMessage> {
        match decode(&mut self.depth_state, msg) {
            Ok(frame) => {
                self.core.stats.record_rx(StreamKind::Depth);
                self.core.stats.record_latency(frame.capture_ts_us, now_us);
                let id = frame.frame_id;
                self.latest_depth = Some(frame.clone());
                self.pending_entry(id, now_us).depth = Some(frame);
                self.try_pair(id);
                None
            }
            Err(CodecError::Stale { frame_id, reference }) => {
                debug!("discarding stale depth {frame_id} (reference {reference})");
                self.core.stats.record_drop(StreamKind::Depth);
                None
            }
            Err(e) => {
                debug!("expert depth decode failed: {e}");
                self.core.stats.record_drop(StreamKind::Depth);
                self.keyframe_request(now_us)
            }
        }
    }

    fn on_color(&mut self, msg: &EncodedColorMessage, now_us: u64) {
        match color_decode(msg) {
            Ok(frame) => {
                self.core.stats.record_rx(StreamKind::Color);
                let id = frame.frame_id;
                self.pending_entry(id, now_us).color = Some(frame);
                self.try_pair(id);
            }
            Err(e) => {
                warn!("expert color decode failed: {e}");
                self.core.stats.record_drop(StreamKind::Color);
            }
        }
    }

    pub fn on_message(&mut self, msg: &WireMessage, now_us: u64) -> Vec<WireMessage> {
        let (reply, consumed) = self.core.on_common(msg);
        let mut out: Vec<WireMessage> = reply.into_iter().collect();
        if consumed {
            return out;
        }
        match &msg.body {
            Message::DepthKeyframe(_) | Message::DepthDelta(_) => {
                let depth = msg.clone().into_depth().expect("depth message");
                out.extend(self.on_depth(&depth, now_us));
            }
            Message::ColorFrame(c) => self.on_color(c, now_us),
            _ => {}
        }
        out
    }

    /// Renders pairs whose timeout has passed: depth-only if color is
    /// missing, discarded if depth is.
    pub fn poll(&mut self, now_us: u64) {
        let expired: Vec<u32> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline_us <= now_us)
            .map(|(&id, _)| id)
            .collect();
        for id in expired {
            self.expire(id);
        }
    }

    fn expire(&mut self, id: u32) {
        let p = self.pending.remove(&id).expect("pending frame");
        match p.depth {
            Some(depth) => self.render(depth, p.color),
            None => self.color_orphans += 1,
        }
    }

    /// Resolves every pending pair as if its timeout had passed.
    pub fn flush(&mut self) {
        let ids: Vec<u32> = self.pending.keys().copied().collect();
        for id in ids {
            self.expire(id);
        }
    }

    pub fn act(&mut self, action: &AnnotationAction, now_us: u64) -> Vec<WireMessage> {
        self.core.act(action, self.latest_depth.as_ref(), now_us)
    }
}
