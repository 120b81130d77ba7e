//! Binary wire protocol, channel semantics and the simulated transport.
//!
//! Every exchange between peers is a [`WireMessage`]:
//!
//! ```text
//! +-----------------+-------------+-------------+------------+------------------+---------+
//! | magic u32       | version u8  | msg_type u8 | flags u16  | payload_len u32  | payload |
//! | 0x31534356 VCS1 | 1           | 1..=9       |            |                  |         |
//! +-----------------+-------------+-------------+------------+------------------+---------+
//! ```
//!
//! All integers and floats are little-endian. Flag bit 0 marks the media
//! channel when messages share one stream; bit 1 on a `Stats` message asks
//! the sender for a keyframe.

mod codec;
pub mod queue;
pub mod sim;
pub mod stream;

pub use codec::{deserialize, depth_message_len, payload_len, peek_media, serialize, split_frame, Frame};
pub use queue::MediaQueue;
pub use sim::{Delivery, LinkError, LinkStats, NetworkProfile, Side, SimClock, SimLink};

use thiserror::Error;

use crate::annotation::{AnnotationOp, GestureEvent};
use crate::color_codec::EncodedColorMessage;
use crate::depth_codec::{DepthDelta, DepthKeyframe, EncodedDepthMessage};
use crate::session::PeerRole;

pub const MAGIC: u32 = 0x3153_4356;
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;

pub const FLAG_MEDIA_CHANNEL: u16 = 1 << 0;
pub const FLAG_KEYFRAME_REQUEST: u16 = 1 << 1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WireError {
    /// Handshake-level: the peer does not speak this protocol.
    #[error("bad magic 0x{found:08x}, expected 0x{MAGIC:08x}")]
    BadMagic { found: u32 },

    /// Handshake-level: framing version mismatch.
    #[error("unsupported wire version {found}, expected {expected}")]
    UnsupportedVersion { expected: u8, found: u8 },

    #[error("short message: expected {expected} bytes, got {actual}")]
    Short { expected: usize, actual: usize },

    #[error("unknown message type {msg_type} ({payload_len} byte payload)")]
    UnknownType { msg_type: u8, payload_len: u32 },

    #[error("malformed {msg_type:?} payload: {reason}")]
    Format { msg_type: MsgType, reason: String },
}

impl WireError {
    pub fn is_handshake_error(&self) -> bool {
        matches!(self, Self::BadMagic { .. } | Self::UnsupportedVersion { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    HelloAck = 2,
    DepthKeyframe = 3,
    DepthDelta = 4,
    ColorFrame = 5,
    AnnotationOp = 6,
    GestureEvent = 7,
    Stats = 8,
    Bye = 9,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        Self::Hello,
        Self::HelloAck,
        Self::DepthKeyframe,
        Self::DepthDelta,
        Self::ColorFrame,
        Self::AnnotationOp,
        Self::GestureEvent,
        Self::Stats,
        Self::Bye,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(usize::from(v).wrapping_sub(1)).copied()
    }

    pub fn channel(self) -> ChannelKind {
        match self {
            Self::DepthKeyframe | Self::DepthDelta | Self::ColorFrame => ChannelKind::Media,
            Self::Hello | Self::HelloAck | Self::AnnotationOp | Self::GestureEvent | Self::Stats | Self::Bye => {
                ChannelKind::ReliableOrdered
            }
        }
    }
}

/// Delivery semantics of a message class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    /// No loss, delivered exactly once in send order.
    ReliableOrdered,
    /// May be dropped or reordered.
    Media,
}

impl ChannelKind {
    pub fn index(self) -> usize {
        match self {
            Self::ReliableOrdered => 0,
            Self::Media => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub role: PeerRole,
    pub version: u8,
    pub width: u16,
    pub height: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AckStatus {
    Ok = 0,
    RoleConflict = 1,
    VersionMismatch = 2,
}

impl AckStatus {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Ok,
            1 => Self::RoleConflict,
            2 => Self::VersionMismatch,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelloAck {
    pub status: AckStatus,
    pub role: PeerRole,
    pub version: u8,
}

/// Periodic statistics report. Percentiles are `None` when no samples exist
/// (encoded as `u64::MAX`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsReport {
    pub t_us: u64,
    pub frames_tx: u32,
    pub frames_rx: u32,
    pub drops: u32,
    pub bytes_tx: u64,
    pub e2e_p50_us: Option<u64>,
    pub e2e_p95_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bye {
    pub reason: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    HelloAck(HelloAck),
    DepthKeyframe(DepthKeyframe),
    DepthDelta(DepthDelta),
    ColorFrame(EncodedColorMessage),
    AnnotationOp(AnnotationOp),
    GestureEvent(GestureEvent),
    Stats(StatsReport),
    Bye(Bye),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Self::Hello(_) => MsgType::Hello,
            Self::HelloAck(_) => MsgType::HelloAck,
            Self::DepthKeyframe(_) => MsgType::DepthKeyframe,
            Self::DepthDelta(_) => MsgType::DepthDelta,
            Self::ColorFrame(_) => MsgType::ColorFrame,
            Self::AnnotationOp(_) => MsgType::AnnotationOp,
            Self::GestureEvent(_) => MsgType::GestureEvent,
            Self::Stats(_) => MsgType::Stats,
            Self::Bye(_) => MsgType::Bye,
        }
    }

    pub fn channel(&self) -> ChannelKind {
        self.msg_type().channel()
    }
}

impl From<EncodedDepthMessage> for Message {
    fn from(msg: EncodedDepthMessage) -> Self {
        match msg {
            EncodedDepthMessage::Keyframe(k) => Self::DepthKeyframe(k),
            EncodedDepthMessage::Delta(d) => Self::DepthDelta(d),
        }
    }
}

/// A typed message with its header flags.
#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub flags: u16,
    pub body: Message,
}

impl WireMessage {
    pub fn new(body: impl Into<Message>) -> Self {
        Self {
            flags: 0,
            body: body.into(),
        }
    }

    pub fn with_flags(mut self, flags: u16) -> Self {
        self.flags = flags;
        self
    }

    pub fn msg_type(&self) -> MsgType {
        self.body.msg_type()
    }

    pub fn is_keyframe_request(&self) -> bool {
        matches!(self.body, Message::Stats(_)) && self.flags & FLAG_KEYFRAME_REQUEST != 0
    }

    pub fn into_depth(self) -> Option<EncodedDepthMessage> {
        match self.body {
            Message::DepthKeyframe(k) => Some(EncodedDepthMessage::Keyframe(k)),
            Message::DepthDelta(d) => Some(EncodedDepthMessage::Delta(d)),
            _ => None,
        }
    }
}

impl From<Message> for WireMessage {
    fn from(body: Message) -> Self {
        Self::new(body)
    }
}
