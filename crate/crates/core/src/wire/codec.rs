use crate::annotation::{AnnotationOp, GestureEvent, GestureKind, OpKind};
use crate::color_codec::EncodedColorMessage;
use crate::depth_codec::{DepthDelta, DepthKeyframe, DepthTile, EncodedDepthMessage};
use crate::frame::CameraIntrinsics;
use crate::geometry::{Point3, Ray};
use crate::session::PeerRole;

use super::{
    AckStatus, Bye, Hello, HelloAck, Message, MsgType, StatsReport, WireError, WireMessage, HEADER_LEN, MAGIC,
    WIRE_VERSION,
};

const KEYFRAME_FIXED: usize = 4 + 8 + 2 + 2 + 1 + 4 * 4;
const DELTA_FIXED: usize = 4 + 4 + 8 + 4;
const TILE_FIXED: usize = 4 + 1 + 1;
const COLOR_FIXED: usize = 4 + 8 + 1 + 2 + 2;
const ANNOTATION_LEN: usize = 1 + 1 + 4 + 4 + 3 * 4 + 3;
const GESTURE_LEN: usize = 1 + 1 + 8 + 3 * 4 + 3 * 4;
const HELLO_LEN: usize = 1 + 1 + 2 + 2;
const HELLO_ACK_LEN: usize = 3;
const STATS_LEN: usize = 8 + 4 + 4 + 4 + 8 + 8 + 8;
const BYE_LEN: usize = 1;

/// Payload length of `body` in bytes.
pub fn payload_len(body: &Message) -> usize {
    match body {
        Message::Hello(_) => HELLO_LEN,
        Message::HelloAck(_) => HELLO_ACK_LEN,
        Message::DepthKeyframe(k) => KEYFRAME_FIXED + 2 * k.depth.len(),
        Message::DepthDelta(d) => DELTA_FIXED + d.tiles.iter().map(|t| TILE_FIXED + 2 * t.depth.len()).sum::<usize>(),
        Message::ColorFrame(c) => COLOR_FIXED + c.payload.len(),
        Message::AnnotationOp(_) => ANNOTATION_LEN,
        Message::GestureEvent(_) => GESTURE_LEN,
        Message::Stats(_) => STATS_LEN,
        Message::Bye(_) => BYE_LEN,
    }
}

/// Serialized length of a depth message, header included.
pub fn depth_message_len(msg: &EncodedDepthMessage) -> usize {
    HEADER_LEN
        + match msg {
            EncodedDepthMessage::Keyframe(k) => KEYFRAME_FIXED + 2 * k.depth.len(),
            EncodedDepthMessage::Delta(d) => {
                DELTA_FIXED + d.tiles.iter().map(|t| TILE_FIXED + 2 * t.depth.len()).sum::<usize>()
            }
        }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn point(&mut self, p: Point3) {
        self.f32(p.x);
        self.f32(p.y);
        self.f32(p.z);
    }
    fn depth(&mut self, values: &[u16]) {
        self.0.reserve(2 * values.len());
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Encodes a message with its 12-byte header.
pub fn serialize(msg: &WireMessage) -> Vec<u8> {
    let len = payload_len(&msg.body);
    let mut w = Writer(Vec::with_capacity(HEADER_LEN + len));
    w.u32(MAGIC);
    w.u8(WIRE_VERSION);
    w.u8(msg.msg_type() as u8);
    w.u16(msg.flags);
    w.u32(len as u32);
    match &msg.body {
        Message::Hello(h) => {
            w.u8(h.role as u8);
            w.u8(h.version);
            w.u16(h.width);
            w.u16(h.height);
        }
        Message::HelloAck(a) => {
            w.u8(a.status as u8);
            w.u8(a.role as u8);
            w.u8(a.version);
        }
        Message::DepthKeyframe(k) => {
            w.u32(k.frame_id);
            w.u64(k.capture_ts_us);
            w.u16(k.intrinsics.width);
            w.u16(k.intrinsics.height);
            w.u8(k.tile_size);
            w.f32(k.intrinsics.fx);
            w.f32(k.intrinsics.fy);
            w.f32(k.intrinsics.cx);
            w.f32(k.intrinsics.cy);
            w.depth(&k.depth);
        }
        Message::DepthDelta(d) => {
            w.u32(d.frame_id);
            w.u32(d.ref_frame_id);
            w.u64(d.capture_ts_us);
            w.u32(d.tiles.len() as u32);
            for tile in &d.tiles {
                w.u32(tile.index);
                w.u8(tile.width);
                w.u8(tile.height);
                w.depth(&tile.depth);
            }
        }
        Message::ColorFrame(c) => {
            w.u32(c.frame_id);
            w.u64(c.capture_ts_us);
            w.u8(c.codec_id);
            w.u16(c.width);
            w.u16(c.height);
            w.0.extend_from_slice(&c.payload);
        }
        Message::AnnotationOp(op) => {
            w.u8(op.kind as u8);
            w.u8(op.author as u8);
            w.u32(op.stroke_id);
            w.u32(op.seq);
            w.point(op.point);
            w.0.extend_from_slice(&op.color);
        }
        Message::GestureEvent(g) => {
            w.u8(g.kind as u8);
            w.u8(g.author as u8);
            w.u64(g.ts_us);
            w.point(g.ray.origin);
            w.point(g.ray.direction());
        }
        Message::Stats(s) => {
            w.u64(s.t_us);
            w.u32(s.frames_tx);
            w.u32(s.frames_rx);
            w.u32(s.drops);
            w.u64(s.bytes_tx);
            w.u64(s.e2e_p50_us.unwrap_or(u64::MAX));
            w.u64(s.e2e_p95_us.unwrap_or(u64::MAX));
        }
        Message::Bye(b) => w.u8(b.reason),
    }
    debug_assert_eq!(w.0.len(), HEADER_LEN + len);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf` within the whole message, for error reporting.
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Short {
                expected: self.base + self.pos + n,
                actual: self.base + self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn point(&mut self) -> Result<Point3, WireError> {
        Ok(Point3::new(self.f32()?, self.f32()?, self.f32()?))
    }
    fn depth(&mut self, n: usize) -> Result<Vec<u16>, WireError> {
        let raw = self.take(2 * n)?;
        Ok(raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
    }
    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }
}

fn format_err(msg_type: MsgType, reason: impl Into<String>) -> WireError {
    WireError::Format {
        msg_type,
        reason: reason.into(),
    }
}

fn role(msg_type: MsgType, v: u8) -> Result<PeerRole, WireError> {
    PeerRole::from_u8(v).ok_or_else(|| format_err(msg_type, format!("unknown role {v}")))
}

fn parse_body(msg_type: MsgType, payload: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
        base: HEADER_LEN,
    };
    let body = match msg_type {
        MsgType::Hello => Message::Hello(Hello {
            role: role(msg_type, r.u8()?)?,
            version: r.u8()?,
            width: r.u16()?,
            height: r.u16()?,
        }),
        MsgType::HelloAck => {
            let status = r.u8()?;
            Message::HelloAck(HelloAck {
                status: AckStatus::from_u8(status)
                    .ok_or_else(|| format_err(msg_type, format!("unknown ack status {status}")))?,
                role: role(msg_type, r.u8()?)?,
                version: r.u8()?,
            })
        }
        MsgType::DepthKeyframe => {
            let frame_id = r.u32()?;
            let capture_ts_us = r.u64()?;
            let width = r.u16()?;
            let height = r.u16()?;
            let tile_size = r.u8()?;
            let intrinsics = CameraIntrinsics {
                fx: r.f32()?,
                fy: r.f32()?,
                cx: r.f32()?,
                cy: r.f32()?,
                width,
                height,
            };
            let depth = r.depth(usize::from(width) * usize::from(height))?;
            Message::DepthKeyframe(DepthKeyframe {
                frame_id,
                capture_ts_us,
                intrinsics,
                tile_size,
                depth,
            })
        }
        MsgType::DepthDelta => {
            let frame_id = r.u32()?;
            let ref_frame_id = r.u32()?;
            let capture_ts_us = r.u64()?;
            let count = r.u32()?;
            let mut tiles = Vec::with_capacity((count as usize).min(payload.len() / TILE_FIXED));
            for _ in 0..count {
                let index = r.u32()?;
                let width = r.u8()?;
                let height = r.u8()?;
                let depth = r.depth(usize::from(width) * usize::from(height))?;
                tiles.push(DepthTile {
                    index,
                    width,
                    height,
                    depth,
                });
            }
            Message::DepthDelta(DepthDelta {
                frame_id,
                ref_frame_id,
                capture_ts_us,
                tiles,
            })
        }
        MsgType::ColorFrame => Message::ColorFrame(EncodedColorMessage {
            frame_id: r.u32()?,
            capture_ts_us: r.u64()?,
            codec_id: r.u8()?,
            width: r.u16()?,
            height: r.u16()?,
            payload: r.rest().to_vec(),
        }),
        MsgType::AnnotationOp => {
            let kind = r.u8()?;
            let kind = OpKind::from_u8(kind).map_err(|e| format_err(msg_type, e.to_string()))?;
            let author = role(msg_type, r.u8()?)?;
            let stroke_id = r.u32()?;
            let seq = r.u32()?;
            let point = r.point()?;
            let color = r.take(3)?.try_into().unwrap();
            Message::AnnotationOp(AnnotationOp {
                kind,
                author,
                stroke_id,
                seq,
                point,
                color,
            })
        }
        MsgType::GestureEvent => {
            let kind = r.u8()?;
            let kind = GestureKind::from_u8(kind).ok_or_else(|| format_err(msg_type, format!("unknown gesture {kind}")))?;
            let author = role(msg_type, r.u8()?)?;
            let ts_us = r.u64()?;
            let origin = r.point()?;
            let direction = r.point()?;
            let ray = Ray::from_unit(origin, direction).map_err(|e| format_err(msg_type, e.to_string()))?;
            Message::GestureEvent(GestureEvent {
                kind,
                author,
                ray,
                ts_us,
            })
        }
        MsgType::Stats => {
            let opt = |v: u64| (v != u64::MAX).then_some(v);
            Message::Stats(StatsReport {
                t_us: r.u64()?,
                frames_tx: r.u32()?,
                frames_rx: r.u32()?,
                drops: r.u32()?,
                bytes_tx: r.u64()?,
                e2e_p50_us: opt(r.u64()?),
                e2e_p95_us: opt(r.u64()?),
            })
        }
        MsgType::Bye => Message::Bye(Bye { reason: r.u8()? }),
    };
    if r.pos != payload.len() {
        return Err(format_err(
            msg_type,
            format!("{} trailing bytes after {} byte payload", payload.len() - r.pos, r.pos),
        ));
    }
    Ok(body)
}

struct Header {
    msg_type: u8,
    flags: u16,
    payload_len: u32,
}

fn parse_header(bytes: &[u8]) -> Result<Header, WireError> {
    if bytes.len() < HEADER_LEN {
        // Reject foreign magic as early as it is visible.
        if bytes.len() >= 4 {
            let found = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
            if found != MAGIC {
                return Err(WireError::BadMagic { found });
            }
        }
        return Err(WireError::Short {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let found = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if found != MAGIC {
        return Err(WireError::BadMagic { found });
    }
    if bytes[4] != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion {
            expected: WIRE_VERSION,
            found: bytes[4],
        });
    }
    Ok(Header {
        msg_type: bytes[5],
        flags: u16::from_le_bytes([bytes[6], bytes[7]]),
        payload_len: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
    })
}

/// Decodes exactly one message occupying all of `bytes`.
pub fn deserialize(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let header = parse_header(bytes)?;
    let total = HEADER_LEN + header.payload_len as usize;
    if bytes.len() < total {
        return Err(WireError::Short {
            expected: total,
            actual: bytes.len(),
        });
    }
    let Some(msg_type) = MsgType::from_u8(header.msg_type) else {
        return Err(WireError::UnknownType {
            msg_type: header.msg_type,
            payload_len: header.payload_len,
        });
    };
    if bytes.len() > total {
        return Err(format_err(
            msg_type,
            format!("{} bytes after the {total} byte message", bytes.len() - total),
        ));
    }
    Ok(WireMessage {
        flags: header.flags,
        body: parse_body(msg_type, &bytes[HEADER_LEN..total])?,
    })
}

/// Frame id and capture timestamp of a serialized media message, read from
/// fixed offsets without decoding the payload.
pub fn peek_media(bytes: &[u8]) -> Option<(MsgType, u32, u64)> {
    let header = parse_header(bytes).ok()?;
    let msg_type = MsgType::from_u8(header.msg_type)?;
    let ts_at = match msg_type {
        MsgType::DepthKeyframe | MsgType::ColorFrame => 4,
        MsgType::DepthDelta => 8,
        _ => return None,
    };
    let p = bytes.get(HEADER_LEN..HEADER_LEN + ts_at + 8)?;
    Some((
        msg_type,
        u32::from_le_bytes(p[0..4].try_into().unwrap()),
        u64::from_le_bytes(p[ts_at..ts_at + 8].try_into().unwrap()),
    ))
}

/// One length-delimited unit of a byte stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Message(WireMessage),
    /// A message that could not be decoded; its bytes were skipped.
    Skipped(WireError),
}

/// Splits the first frame off a byte stream.
///
/// Returns `Ok(None)` until a whole frame is buffered, then the frame and the
/// number of bytes it occupied. Unknown or malformed payloads are skipped via
/// the length prefix; only a corrupt header is fatal to the stream.
pub fn split_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>, WireError> {
    let header = match parse_header(buf) {
        Ok(h) => h,
        Err(WireError::Short { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let total = HEADER_LEN + header.payload_len as usize;
    if buf.len() < total {
        return Ok(None);
    }
    let frame = match deserialize(&buf[..total]) {
        Ok(msg) => Frame::Message(msg),
        Err(e) => Frame::Skipped(e),
    };
    Ok(Some((frame, total)))
}
