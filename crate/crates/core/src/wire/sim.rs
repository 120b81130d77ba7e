//! Deterministic discrete-event network between two endpoints.
//!
//! Each direction has one transmitter shared by both channel kinds. A
//! message's egress time comes from a token bucket (GCRA form) holding 250 ms
//! of budget that starts empty, so a message of `n` bytes sent on an idle
//! link leaves it `8n / bandwidth` seconds later at the earliest and bursts
//! never exceed the bucket. Delivery adds base latency plus seeded uniform
//! jitter; the reliable channel is clamped to non-decreasing delivery times,
//! the media channel may reorder and lose messages.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::ChannelKind;

/// Burst allowance of the token bucket, in microseconds of link budget.
pub const BUCKET_US: u64 = 250_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("send on closed link")]
    Closed,

    #[error("invalid network profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkProfile {
    /// One-way base latency.
    pub base_latency_us: u64,
    /// Upper bound of the uniform jitter added per message.
    pub jitter_us: u64,
    /// Independent drop probability for media-channel messages.
    pub loss_probability: f64,
    /// Token-bucket rate; `None` is unlimited.
    pub bandwidth_bps: Option<u64>,
    pub seed: u64,
}

impl NetworkProfile {
    /// Zero latency, zero jitter, no loss, unlimited bandwidth.
    pub fn null() -> Self {
        Self {
            base_latency_us: 0,
            jitter_us: 0,
            loss_probability: 0.0,
            bandwidth_bps: None,
            seed: 0,
        }
    }

    pub fn from_ms(latency_ms: f64, jitter_ms: f64, loss_probability: f64, bandwidth_bps: Option<u64>) -> Result<Self, LinkError> {
        let us = |ms: f64, what: &str| {
            if ms.is_finite() && ms >= 0.0 {
                Ok((ms * 1000.0).round() as u64)
            } else {
                Err(LinkError::Profile(format!("{what} must be a non-negative number of ms, got {ms}")))
            }
        };
        let profile = Self {
            base_latency_us: us(latency_ms, "latency")?,
            jitter_us: us(jitter_ms, "jitter")?,
            loss_probability,
            bandwidth_bps,
            seed: 0,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(LinkError::Profile(format!(
                "loss probability must lie in [0, 1], got {}",
                self.loss_probability
            )));
        }
        if self.bandwidth_bps == Some(0) {
            return Err(LinkError::Profile("bandwidth must be positive (use unlimited instead of 0)".into()));
        }
        Ok(())
    }

    /// Microseconds of link budget `bytes` consumes.
    fn cost_us(&self, bytes: usize) -> u64 {
        match self.bandwidth_bps {
            None => 0,
            Some(bps) => (bytes as u128 * 8 * 1_000_000).div_ceil(u128::from(bps)) as u64,
        }
    }
}

impl Default for NetworkProfile {
    /// 80 ms one-way, 20 ms jitter, 0.5% media loss, 20 Mbps.
    fn default() -> Self {
        Self {
            base_latency_us: 80_000,
            jitter_us: 20_000,
            loss_probability: 0.005,
            bandwidth_bps: Some(20_000_000),
            seed: 0,
        }
    }
}

/// Logical clock advanced by the event loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now_us: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// # Panics
    /// If `t_us` lies in the past.
    pub fn advance_to(&mut self, t_us: u64) {
        assert!(t_us >= self.now_us, "clock moved backwards: {} -> {t_us}", self.now_us);
        self.now_us = t_us;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn peer(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: Side,
    pub channel: ChannelKind,
    pub sent_at_us: u64,
    pub deliver_at_us: u64,
    pub bytes: Vec<u8>,
}

/// Outcome of one send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendReceipt {
    /// When the last byte leaves the transmitter.
    pub egress_us: u64,
    /// `None` if the message was lost.
    pub deliver_at_us: Option<u64>,
}

/// Per-direction counters, indexed by [`ChannelKind::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub messages_sent: [u64; 2],
    pub bytes_sent: [u64; 2],
    pub messages_lost: [u64; 2],
    pub messages_delivered: [u64; 2],
}

#[derive(Debug)]
struct Direction {
    rng: ChaCha8Rng,
    /// GCRA theoretical arrival time.
    tat_us: u64,
    busy_until_us: u64,
    last_reliable_us: u64,
    forced_losses: u32,
    stats: LinkStats,
}

/// Two connected endpoints, [`Side::A`] and [`Side::B`].
#[derive(Debug)]
pub struct SimLink {
    profile: NetworkProfile,
    dirs: [Direction; 2],
    in_flight: BinaryHeap<Reverse<(u64, u64, usize)>>,
    payloads: Vec<Option<Delivery>>,
    free: Vec<usize>,
    next_seq: u64,
    closed: bool,
}

impl SimLink {
    pub fn new(profile: NetworkProfile) -> Result<Self, LinkError> {
        profile.validate()?;
        let dir = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
            rng.set_stream(stream);
            Direction {
                rng,
                tat_us: BUCKET_US,
                busy_until_us: 0,
                last_reliable_us: 0,
                forced_losses: 0,
                stats: LinkStats::default(),
            }
        };
        Ok(Self {
            profile,
            dirs: [dir(0), dir(1)],
            in_flight: BinaryHeap::new(),
            payloads: Vec::new(),
            free: Vec::new(),
            next_seq: 0,
            closed: false,
        })
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    /// Queues `bytes` from `from` at time `now_us`.
    pub fn send(&mut self, from: Side, channel: ChannelKind, bytes: Vec<u8>, now_us: u64) -> Result<SendReceipt, LinkError> {
        if self.closed {
            return Err(LinkError::Closed);
        }
        let profile = self.profile;
        let dir = &mut self.dirs[from.index()];
        let cost = profile.cost_us(bytes.len());
        dir.tat_us = dir.tat_us.max(now_us) + cost;
        let egress_us = now_us.max(dir.tat_us - BUCKET_US);
        dir.busy_until_us = egress_us;

        let ch = channel.index();
        dir.stats.messages_sent[ch] += 1;
        dir.stats.bytes_sent[ch] += bytes.len() as u64;

        if channel == ChannelKind::Media {
            let forced = dir.forced_losses > 0;
            // Always draw, so forced losses do not shift the random stream.
            let draw: f64 = dir.rng.gen();
            if forced {
                dir.forced_losses -= 1;
            }
            if forced || draw < profile.loss_probability {
                dir.stats.messages_lost[ch] += 1;
                return Ok(SendReceipt {
                    egress_us,
                    deliver_at_us: None,
                });
            }
        }
        let jitter = if profile.jitter_us > 0 {
            dir.rng.gen_range(0..=profile.jitter_us)
        } else {
            0
        };
        let mut at = egress_us + profile.base_latency_us + jitter;
        if channel == ChannelKind::ReliableOrdered {
            at = at.max(dir.last_reliable_us);
            dir.last_reliable_us = at;
        }
        dir.stats.messages_delivered[ch] += 1;

        let delivery = Delivery {
            to: from.peer(),
            channel,
            sent_at_us: now_us,
            deliver_at_us: at,
            bytes,
        };
        let slot = match self.free.pop() {
            Some(slot) => {
                self.payloads[slot] = Some(delivery);
                slot
            }
            None => {
                self.payloads.push(Some(delivery));
                self.payloads.len() - 1
            }
        };
        self.in_flight.push(Reverse((at, self.next_seq, slot)));
        self.next_seq += 1;
        Ok(SendReceipt {
            egress_us,
            deliver_at_us: Some(at),
        })
    }

    /// Time at which `from`'s transmitter has sent everything queued so far.
    pub fn idle_at(&self, from: Side) -> u64 {
        self.dirs[from.index()].busy_until_us
    }

    /// Earliest pending delivery time.
    pub fn next_delivery_time(&self) -> Option<u64> {
        self.in_flight.peek().map(|Reverse((at, _, _))| *at)
    }

    /// Removes the earliest delivery due at or before `now_us`. Equal times
    /// come out in send order.
    pub fn pop_due(&mut self, now_us: u64) -> Option<Delivery> {
        let &Reverse((at, _, slot)) = self.in_flight.peek()?;
        if at > now_us {
            return None;
        }
        self.in_flight.pop();
        self.free.push(slot);
        self.payloads[slot].take()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Rejects further sends. Messages already in flight still arrive.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Counters for traffic sent by `from`.
    pub fn stats(&self, from: Side) -> &LinkStats {
        &self.dirs[from.index()].stats
    }

    /// Drops the next `n` media messages sent by `from`, regardless of the
    /// loss probability. Used for fault-injection tests.
    pub fn inject_media_loss(&mut self, from: Side, n: u32) {
        self.dirs[from.index()].forced_losses += n;
    }
}
