//! Runs an operator and an expert against each other over a [`SimLink`].
//!
//! Everything happens on the simulated clock, in one thread, in a fixed
//! event order, so a run is a pure function of its inputs. Codec work costs
//! zero simulated time; latency is transport and queueing only.

use serde::Serialize;
use thiserror::Error;

use super::peer::{ExpertPeer, OperatorPeer, PeerCore, PeerError, RenderMode, DEFAULT_PAIRING_TIMEOUT_US};
use super::script::ScriptedAction;
use super::stats::{us_to_ms, StatsSnapshot, StreamCounters, StreamKind};
use super::{HandshakeError, PeerRole};
use crate::color_codec::DEFLATE_CODEC_ID;
use crate::depth_codec::DepthCodecConfig;
use crate::frame::{FrameError, FramePair, FrameSource};
use crate::wire::{deserialize, serialize, LinkError, NetworkProfile, Side, SimClock, SimLink, WireMessage, WIRE_VERSION};

const OPERATOR: Side = Side::A;
const EXPERT: Side = Side::B;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("frame source: {0}")]
    Frame(#[from] FrameError),

    #[error("link: {0}")]
    Link(#[from] LinkError),

    #[error("codec: {0}")]
    Peer(#[from] PeerError),

    #[error("handshake failed (operator: {operator:?}, expert: {expert:?})")]
    Handshake {
        operator: Option<HandshakeError>,
        expert: Option<HandshakeError>,
    },

    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Capture stops at this time; the session then drains.
    pub duration_us: u64,
    pub profile: NetworkProfile,
    /// `None` for an unbounded media queue.
    pub queue_capacity: Option<usize>,
    pub depth: DepthCodecConfig,
    pub color_codec: u8,
    pub render: RenderMode,
    pub pairing_timeout_us: u64,
    pub stats_interval_us: u64,
    pub operator_version: u8,
    pub expert_version: u8,
    pub script: Vec<ScriptedAction>,
    /// The operator's first `n` media messages are lost in transit.
    pub initial_media_loss: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            duration_us: 10_000_000,
            profile: NetworkProfile::default(),
            queue_capacity: Some(2),
            depth: DepthCodecConfig::default(),
            color_codec: DEFLATE_CODEC_ID,
            render: RenderMode::PointCloud,
            pairing_timeout_us: DEFAULT_PAIRING_TIMEOUT_US,
            stats_interval_us: 1_000_000,
            operator_version: WIRE_VERSION,
            expert_version: WIRE_VERSION,
            script: Vec::new(),
            initial_media_loss: 0,
        }
    }
}

impl SimulationConfig {
    /// Keyframe every frame and raw color: what a session looks like with
    /// compression turned off.
    pub fn without_compression(mut self) -> Self {
        self.depth.keyframe_interval = 1;
        self.color_codec = crate::color_codec::RAW_CODEC_ID;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        self.profile.validate()?;
        self.depth.validate().map_err(PeerError::from)?;
        if self.stats_interval_us == 0 {
            return Err(SimulationError::Config("stats interval must be positive".into()));
        }
        if self.queue_capacity == Some(0) {
            return Err(SimulationError::Config("queue capacity must be at least 1".into()));
        }
        crate::color_codec::ColorCodecRegistry::default()
            .get(self.color_codec)
            .map_err(PeerError::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeerSummary {
    pub role: PeerRole,
    pub depth: StreamCounters,
    pub color: StreamCounters,
    pub annotation: StreamCounters,
    pub gesture: StreamCounters,
    pub control: StreamCounters,
    pub bytes_tx: u64,
}

impl PeerSummary {
    fn of(core: &PeerCore) -> Self {
        let s = core.stats();
        Self {
            role: core.role(),
            depth: *s.stream(StreamKind::Depth),
            color: *s.stream(StreamKind::Color),
            annotation: *s.stream(StreamKind::Annotation),
            gesture: *s.stream(StreamKind::Gesture),
            control: *s.stream(StreamKind::Control),
            bytes_tx: s.bytes_tx(),
        }
    }
}

/// Final numbers of one run. Latencies are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub duration_us: u64,
    pub end_us: u64,
    pub seed: u64,
    pub frames_captured: u64,
    pub operator_loopback_frames: u64,
    /// Captures evicted from the operator's media queue.
    pub queue_drops: u64,
    /// Media messages lost on the link.
    pub network_losses: u64,
    pub keyframes_sent: u64,
    pub keyframe_requests: u64,
    pub reconstructed_frames: u64,
    pub depth_only_frames: u64,
    pub latency_samples: usize,
    pub e2e_p50_ms: Option<f64>,
    pub e2e_p95_ms: Option<f64>,
    pub e2e_max_ms: Option<f64>,
    pub annotations_converged: bool,
    pub strokes: usize,
    pub operator: PeerSummary,
    pub expert: PeerSummary,
    #[serde(skip)]
    pub snapshots: Vec<StatsSnapshot>,
}

impl SimulationReport {
    /// One JSON object per line, operator then expert for each tick.
    pub fn stats_jsonl(&self) -> String {
        let mut out = String::new();
        for snap in &self.snapshots {
            out.push_str(&snap.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A configured two-peer session over a simulated link.
pub struct Simulation<S> {
    config: SimulationConfig,
    source: S,
    clock: SimClock,
    link: SimLink,
    operator: OperatorPeer,
    expert: ExpertPeer,
    /// Next frame, pulled ahead so its capture time can be scheduled.
    next_frame: Option<FramePair>,
    source_done: bool,
    script_pos: usize,
    next_stats_us: u64,
    snapshots: Vec<StatsSnapshot>,
}

impl<S: FrameSource> Simulation<S> {
    pub fn new(config: SimulationConfig, source: S) -> Result<Self, SimulationError> {
        config.validate()?;
        let mut script = config.script.clone();
        script.sort_by_key(|a| a.at_us);
        let config = SimulationConfig { script, ..config };
        let mut link = SimLink::new(config.profile)?;
        link.inject_media_loss(OPERATOR, config.initial_media_loss);
        let operator = OperatorPeer::new(
            config.operator_version,
            source.intrinsics(),
            config.depth,
            config.color_codec,
            config.queue_capacity,
        )?;
        let expert = ExpertPeer::new(config.expert_version, config.render, config.pairing_timeout_us);
        Ok(Self {
            next_stats_us: config.stats_interval_us,
            config,
            source,
            clock: SimClock::new(),
            link,
            operator,
            expert,
            next_frame: None,
            source_done: false,
            script_pos: 0,
            snapshots: Vec::new(),
        })
    }

    pub fn operator(&self) -> &OperatorPeer {
        &self.operator
    }

    pub fn expert(&self) -> &ExpertPeer {
        &self.expert
    }

    pub fn link(&self) -> &SimLink {
        &self.link
    }

    fn send(&mut self, from: Side, msg: WireMessage) -> Result<(), SimulationError> {
        let channel = msg.body.channel();
        let receipt = self.link.send(from, channel, serialize(&msg), self.clock.now_us())?;
        if receipt.deliver_at_us.is_none() && from == OPERATOR {
            self.operator.media_lost(&msg);
        }
        Ok(())
    }

    fn send_all(&mut self, from: Side, msgs: impl IntoIterator<Item = WireMessage>) -> Result<(), SimulationError> {
        for msg in msgs {
            self.send(from, msg)?;
        }
        Ok(())
    }

    fn handshake_failed(&self) -> bool {
        self.operator.core().handshake().error().is_some() || self.expert.core().handshake().error().is_some()
    }

    fn capturing(&self) -> bool {
        !self.source_done && !self.handshake_failed()
    }

    /// Makes sure `next_frame` holds the next capture inside the run window.
    fn prefetch(&mut self) -> Result<(), SimulationError> {
        if self.next_frame.is_some() || !self.capturing() {
            return Ok(());
        }
        match self.source.next() {
            Some(Ok(pair)) if pair.depth.capture_ts_us < self.config.duration_us => self.next_frame = Some(pair),
            Some(Err(e)) => return Err(e.into()),
            _ => self.source_done = true,
        }
        Ok(())
    }

    fn capture_time(&self) -> Option<u64> {
        self.next_frame
            .as_ref()
            .map(|p| p.depth.capture_ts_us.max(self.clock.now_us()))
    }

    fn pump_time(&self) -> Option<u64> {
        self.operator
            .has_pending_media()
            .then(|| self.link.idle_at(OPERATOR).max(self.clock.now_us()))
    }

    fn script_time(&self) -> Option<u64> {
        if self.handshake_failed() {
            return None;
        }
        self.config
            .script
            .get(self.script_pos)
            .map(|a| a.at_us.max(self.clock.now_us()))
    }

    fn busy(&self) -> bool {
        self.next_frame.is_some()
            || self.pump_time().is_some()
            || self.script_time().is_some()
            || self.link.in_flight() > 0
            || self.expert.has_pending()
    }

    fn dispatch(&mut self) -> Result<(), SimulationError> {
        let now = self.clock.now_us();
        while let Some(delivery) = self.link.pop_due(now) {
            let msg = match deserialize(&delivery.bytes) {
                Ok(msg) => msg,
                Err(e) => {
                    log::warn!("undecodable message on simulated link: {e}");
                    continue;
                }
            };
            if delivery.to == EXPERT {
                let replies = self.expert.on_message(&msg, now);
                self.send_all(EXPERT, replies)?;
            } else {
                let replies = self.operator.on_message(&msg);
                self.send_all(OPERATOR, replies)?;
            }
        }
        Ok(())
    }

    fn snapshot(&mut self, t_us: u64) {
        self.snapshots.push(self.operator.core().stats().snapshot(t_us));
        self.snapshots.push(self.expert.core().stats().snapshot(t_us));
    }

    /// Runs capture until `duration_us`, then drains queue and link.
    pub fn run(&mut self) -> Result<SimulationReport, SimulationError> {
        let hello = self.operator.core_mut().hello();
        self.send(OPERATOR, hello)?;
        let hello = self.expert.core_mut().hello();
        self.send(EXPERT, hello)?;

        loop {
            self.prefetch()?;
            if !self.busy() {
                break;
            }
            let next = [
                self.capture_time(),
                self.link.next_delivery_time(),
                self.pump_time(),
                self.script_time(),
                self.expert.next_deadline(),
                Some(self.next_stats_us),
            ]
            .into_iter()
            .flatten()
            .min()
            .expect("stats tick is always scheduled");
            self.clock.advance_to(next);
            let now = next;

            self.dispatch()?;

            while self.script_time() == Some(now) {
                let scripted = self.config.script[self.script_pos];
                self.script_pos += 1;
                let msgs = match scripted.role {
                    PeerRole::Operator => self.operator.act(&scripted.action, now),
                    PeerRole::Expert => self.expert.act(&scripted.action, now),
                };
                let from = if scripted.role == PeerRole::Operator { OPERATOR } else { EXPERT };
                self.send_all(from, msgs)?;
            }

            if self.capture_time() == Some(now) {
                let pair = self.next_frame.take().expect("scheduled frame");
                self.operator.capture(pair);
            }

            if self.pump_time() == Some(now) {
                if let Some(msgs) = self.operator.next_media()? {
                    self.send_all(OPERATOR, msgs)?;
                }
            }

            self.expert.poll(now);

            if now == self.next_stats_us {
                self.snapshot(now);
                if now <= self.config.duration_us && self.expert.core().handshake().is_established() {
                    let msg = self.expert.stats_message(now);
                    self.send(EXPERT, msg)?;
                }
                self.next_stats_us += self.config.stats_interval_us;
            }
        }

        if self.handshake_failed() {
            self.operator.abandon_queue();
            return Err(SimulationError::Handshake {
                operator: self.operator.core().handshake().error().cloned(),
                expert: self.expert.core().handshake().error().cloned(),
            });
        }
        self.expert.flush();
        let end = self.clock.now_us();
        if self.snapshots.last().is_none_or(|s| s.t_us != end) {
            self.snapshot(end);
        }
        Ok(self.report(end))
    }

    fn report(&self, end_us: u64) -> SimulationReport {
        let op = self.operator.core().stats();
        let ex = self.expert.core().stats();
        let latency = ex.latency();
        let link = self.link.stats(OPERATOR);
        let ms = |v: Option<u64>| v.map(us_to_ms);
        SimulationReport {
            duration_us: self.config.duration_us,
            end_us,
            seed: self.config.profile.seed,
            frames_captured: self.operator.captured(),
            operator_loopback_frames: self.operator.loopback_frames(),
            queue_drops: self.operator.queue().dropped(),
            network_losses: link.messages_lost.iter().sum(),
            keyframes_sent: op.keyframes_tx(),
            keyframe_requests: ex.keyframe_requests_tx(),
            reconstructed_frames: self.expert.reconstructed_frames(),
            depth_only_frames: self.expert.depth_only_frames(),
            latency_samples: latency.samples,
            e2e_p50_ms: ms(latency.p50_us),
            e2e_p95_ms: ms(latency.p95_us),
            e2e_max_ms: ms(latency.max_us),
            annotations_converged: self.operator.core().annotations() == self.expert.core().annotations(),
            strokes: self.expert.core().annotations().strokes().len(),
            operator: PeerSummary::of(self.operator.core()),
            expert: PeerSummary::of(self.expert.core()),
            snapshots: self.snapshots.clone(),
        }
    }
}
