//! Per-peer counters, latency samples and JSON-lines snapshots.

use serde::Serialize;

use super::PeerRole;
use crate::wire::{Message, MsgType, StatsReport};

/// Traffic classes counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Depth,
    Color,
    Annotation,
    Gesture,
    Control,
}

impl StreamKind {
    pub const ALL: [StreamKind; 5] = [Self::Depth, Self::Color, Self::Annotation, Self::Gesture, Self::Control];

    pub fn of(msg_type: MsgType) -> Self {
        match msg_type {
            MsgType::DepthKeyframe | MsgType::DepthDelta => Self::Depth,
            MsgType::ColorFrame => Self::Color,
            MsgType::AnnotationOp => Self::Annotation,
            MsgType::GestureEvent => Self::Gesture,
            MsgType::Hello | MsgType::HelloAck | MsgType::Stats | MsgType::Bye => Self::Control,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StreamCounters {
    pub frames_tx: u64,
    pub frames_rx: u64,
    pub drops: u64,
    pub bytes_tx: u64,
}

/// Nearest-rank percentile: the smallest sample such that at least `p`
/// percent of samples are less than or equal to it. `None` when empty.
pub fn percentile_nearest_rank(samples: &[u64], p: f64) -> Option<u64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Some(nearest_rank_sorted(&sorted, p))
}

fn nearest_rank_sorted(sorted: &[u64], p: f64) -> u64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Counters and latency samples of one peer.
#[derive(Debug, Clone)]
pub struct SessionStats {
    role: PeerRole,
    streams: [StreamCounters; 5],
    latency_us: Vec<u64>,
    keyframes_tx: u64,
    keyframe_requests_tx: u64,
}

impl SessionStats {
    pub fn new(role: PeerRole) -> Self {
        Self {
            role,
            streams: [StreamCounters::default(); 5],
            latency_us: Vec::new(),
            keyframes_tx: 0,
            keyframe_requests_tx: 0,
        }
    }

    pub fn role(&self) -> PeerRole {
        self.role
    }

    pub fn stream(&self, kind: StreamKind) -> &StreamCounters {
        &self.streams[kind.index()]
    }

    /// Records a message handed to the transport with its serialized size.
    pub fn record_tx(&mut self, body: &Message, wire_len: usize) {
        let s = &mut self.streams[StreamKind::of(body.msg_type()).index()];
        s.frames_tx += 1;
        s.bytes_tx += wire_len as u64;
        if matches!(body, Message::DepthKeyframe(_)) {
            self.keyframes_tx += 1;
        }
    }

    pub fn record_keyframe_request(&mut self) {
        self.keyframe_requests_tx += 1;
    }

    pub fn record_rx(&mut self, kind: StreamKind) {
        self.streams[kind.index()].frames_rx += 1;
    }

    pub fn record_drop(&mut self, kind: StreamKind) {
        self.streams[kind.index()].drops += 1;
    }

    /// # Panics
    /// If the sample would be negative (decode before capture).
    pub fn record_latency(&mut self, capture_ts_us: u64, decoded_at_us: u64) {
        assert!(decoded_at_us >= capture_ts_us, "frame decoded before it was captured");
        self.latency_us.push(decoded_at_us - capture_ts_us);
    }

    pub fn latency_samples_us(&self) -> &[u64] {
        &self.latency_us
    }

    pub fn keyframes_tx(&self) -> u64 {
        self.keyframes_tx
    }

    pub fn keyframe_requests_tx(&self) -> u64 {
        self.keyframe_requests_tx
    }

    pub fn bytes_tx(&self) -> u64 {
        self.streams.iter().map(|s| s.bytes_tx).sum()
    }

    /// Dropped media messages (depth and color).
    pub fn media_drops(&self) -> u64 {
        self.stream(StreamKind::Depth).drops + self.stream(StreamKind::Color).drops
    }

    pub fn latency(&self) -> LatencySummary {
        let mut sorted = self.latency_us.clone();
        sorted.sort_unstable();
        if sorted.is_empty() {
            return LatencySummary::default();
        }
        LatencySummary {
            samples: sorted.len(),
            p50_us: Some(nearest_rank_sorted(&sorted, 50.0)),
            p95_us: Some(nearest_rank_sorted(&sorted, 95.0)),
            max_us: sorted.last().copied(),
        }
    }

    pub fn snapshot(&self, t_us: u64) -> StatsSnapshot {
        let latency = self.latency();
        StatsSnapshot {
            t_us,
            role: self.role,
            frames_rx: self.stream(StreamKind::Depth).frames_rx,
            frames_tx: self.stream(StreamKind::Depth).frames_tx,
            drops: self.media_drops(),
            bytes_tx: self.bytes_tx(),
            e2e_p50_ms: latency.p50_us.map(us_to_ms),
            e2e_p95_ms: latency.p95_us.map(us_to_ms),
        }
    }

    pub fn report(&self, t_us: u64) -> StatsReport {
        let latency = self.latency();
        let clamp = |v: u64| u32::try_from(v).unwrap_or(u32::MAX);
        StatsReport {
            t_us,
            frames_tx: clamp(self.stream(StreamKind::Depth).frames_tx),
            frames_rx: clamp(self.stream(StreamKind::Depth).frames_rx),
            drops: clamp(self.media_drops()),
            bytes_tx: self.bytes_tx(),
            e2e_p50_us: latency.p50_us,
            e2e_p95_us: latency.p95_us,
        }
    }
}

pub fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub p50_us: Option<u64>,
    pub p95_us: Option<u64>,
    pub max_us: Option<u64>,
}

/// One JSON-lines stats record.
///
/// `frames_*` count depth frames; `drops` counts media messages lost before
/// reaching the peer (sender side) or discarded as undecodable (receiver
/// side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatsSnapshot {
    pub t_us: u64,
    pub role: PeerRole,
    pub frames_rx: u64,
    pub frames_tx: u64,
    pub drops: u64,
    pub bytes_tx: u64,
    pub e2e_p50_ms: Option<f64>,
    pub e2e_p95_ms: Option<f64>,
}

impl StatsSnapshot {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let ms = [100_000, 200_000, 300_000, 400_000];
        assert_eq!(percentile_nearest_rank(&ms, 50.0), Some(200_000));
        assert_eq!(percentile_nearest_rank(&ms, 95.0), Some(400_000));
        assert_eq!(percentile_nearest_rank(&ms, 0.0), Some(100_000));
        assert_eq!(percentile_nearest_rank(&[], 50.0), None);
        assert_eq!(percentile_nearest_rank(&[7], 95.0), Some(7));
    }

    #[test]
    fn empty_stats_snapshot() {
        let stats = SessionStats::new(PeerRole::Expert);
        let snap = stats.snapshot(0);
        assert_eq!((snap.frames_rx, snap.frames_tx, snap.drops, snap.bytes_tx), (0, 0, 0, 0));
        assert_eq!(snap.e2e_p95_ms, None);
        assert_eq!(
            snap.to_json_line(),
            r#"{"t_us":0,"role":"expert","frames_rx":0,"frames_tx":0,"drops":0,"bytes_tx":0,"e2e_p50_ms":null,"e2e_p95_ms":null}"#
        );
    }

    #[test]
    fn latency_summary_uses_recorded_samples() {
        let mut stats = SessionStats::new(PeerRole::Expert);
        for (capture, done) in [(0, 100_000), (66_666, 366_666), (133_333, 333_333), (200_000, 600_000)] {
            stats.record_latency(capture, done);
        }
        let l = stats.latency();
        assert_eq!((l.p50_us, l.p95_us, l.max_us), (Some(200_000), Some(400_000), Some(400_000)));
        assert_eq!(stats.snapshot(1).e2e_p50_ms, Some(200.0));
    }
}
