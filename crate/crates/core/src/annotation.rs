//! Shared annotation and pointer-gesture state.
//!
//! Each peer authors ops with a strictly increasing per-author `seq` and
//! applies both its own and the remote peer's ops to an [`AnnotationState`].
//! Strokes are keyed by `(author, stroke_id)`, so ops from different authors
//! commute. `clear_all` is the one op that touches the other author's strokes;
//! it carries a watermark (the highest remote seq its author had applied) and
//! clears exactly the remote strokes begun at or below it, which keeps the
//! result independent of how the two op streams interleave.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::frame::DepthFrame;
use crate::geometry::{deproject, Point3, Ray};
use crate::session::PeerRole;

/// Pointer gestures stay visible this long after their timestamp.
pub const POINTER_TTL_US: u64 = 2_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("duplicate op: {author:?} seq {seq} already applied (last {last})")]
    Duplicate { author: PeerRole, seq: u32, last: u32 },

    #[error("protocol error from {author:?} seq {seq}: {reason}")]
    Protocol { author: PeerRole, seq: u32, reason: String },

    #[error("unknown annotation op kind {0}")]
    UnknownKind(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum OpKind {
    StrokeBegin = 1,
    StrokePoint = 2,
    StrokeEnd = 3,
    EraseStroke = 4,
    ClearAll = 5,
}

impl OpKind {
    pub fn from_u8(v: u8) -> Result<Self, AnnotationError> {
        Ok(match v {
            1 => Self::StrokeBegin,
            2 => Self::StrokePoint,
            3 => Self::StrokeEnd,
            4 => Self::EraseStroke,
            5 => Self::ClearAll,
            other => return Err(AnnotationError::UnknownKind(other)),
        })
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "stroke_begin" => Self::StrokeBegin,
            "stroke_point" => Self::StrokePoint,
            "stroke_end" => Self::StrokeEnd,
            "erase_stroke" => Self::EraseStroke,
            "clear_all" => Self::ClearAll,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StrokeBegin => "stroke_begin",
            Self::StrokePoint => "stroke_point",
            Self::StrokeEnd => "stroke_end",
            Self::EraseStroke => "erase_stroke",
            Self::ClearAll => "clear_all",
        }
    }
}

/// One authored edit. `point` is meaningful for begin/point ops and `color`
/// for begin; both are zero otherwise. For `clear_all`, `stroke_id` carries
/// the clear watermark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationOp {
    pub kind: OpKind,
    pub author: PeerRole,
    pub stroke_id: u32,
    pub seq: u32,
    pub point: Point3,
    pub color: [u8; 3],
}

impl AnnotationOp {
    pub fn stroke_begin(author: PeerRole, seq: u32, stroke_id: u32, point: Point3, color: [u8; 3]) -> Self {
        Self {
            kind: OpKind::StrokeBegin,
            author,
            stroke_id,
            seq,
            point,
            color,
        }
    }

    pub fn stroke_point(author: PeerRole, seq: u32, stroke_id: u32, point: Point3) -> Self {
        Self {
            kind: OpKind::StrokePoint,
            point,
            ..Self::bare(OpKind::StrokePoint, author, seq, stroke_id)
        }
    }

    pub fn stroke_end(author: PeerRole, seq: u32, stroke_id: u32) -> Self {
        Self::bare(OpKind::StrokeEnd, author, seq, stroke_id)
    }

    pub fn erase_stroke(author: PeerRole, seq: u32, stroke_id: u32) -> Self {
        Self::bare(OpKind::EraseStroke, author, seq, stroke_id)
    }

    /// `peer_watermark` is the highest seq from the other author applied by
    /// `author` when issuing the clear (0 if none).
    pub fn clear_all(author: PeerRole, seq: u32, peer_watermark: u32) -> Self {
        Self::bare(OpKind::ClearAll, author, seq, peer_watermark)
    }

    fn bare(kind: OpKind, author: PeerRole, seq: u32, stroke_id: u32) -> Self {
        Self {
            kind,
            author,
            stroke_id,
            seq,
            point: Point3::ORIGIN,
            color: [0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub color: [u8; 3],
    pub points: Vec<Point3>,
    pub open: bool,
    pub begin_seq: u32,
}

/// What happened to an op that was not rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    /// The op targets a stroke removed by an erase or clear.
    Superseded,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationState {
    strokes: BTreeMap<(PeerRole, u32), Stroke>,
    last_seq: [Option<u32>; 2],
    /// Per author: strokes begun at or below this seq have been cleared.
    cleared_through: [Option<u32>; 2],
    removed: BTreeSet<(PeerRole, u32)>,
}

#[derive(Serialize)]
struct StrokeJson {
    author: PeerRole,
    id: u32,
    color: [u8; 3],
    points: Vec<[f32; 3]>,
}

#[derive(Serialize)]
struct StateJson {
    strokes: Vec<StrokeJson>,
}

impl AnnotationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds `ops` into a fresh state, skipping rejected ops.
    pub fn from_ops<'a>(ops: impl IntoIterator<Item = &'a AnnotationOp>) -> Self {
        let mut state = Self::new();
        for op in ops {
            let _ = state.apply(op);
        }
        state
    }

    pub fn strokes(&self) -> &BTreeMap<(PeerRole, u32), Stroke> {
        &self.strokes
    }

    pub fn stroke(&self, author: PeerRole, id: u32) -> Option<&Stroke> {
        self.strokes.get(&(author, id))
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn last_seq(&self, author: PeerRole) -> Option<u32> {
        self.last_seq[author.index()]
    }

    /// Applies one op. Rejected ops leave the strokes untouched; protocol
    /// errors still consume the op's seq.
    pub fn apply(&mut self, op: &AnnotationOp) -> Result<ApplyOutcome, AnnotationError> {
        let a = op.author.index();
        if let Some(last) = self.last_seq[a] {
            if op.seq <= last {
                return Err(AnnotationError::Duplicate {
                    author: op.author,
                    seq: op.seq,
                    last,
                });
            }
        }
        self.last_seq[a] = Some(op.seq);
        let result = self.apply_fresh(op);
        if let Err(e) = &result {
            warn!("dropping annotation op: {e}");
        }
        result
    }

    fn protocol(op: &AnnotationOp, reason: impl Into<String>) -> AnnotationError {
        AnnotationError::Protocol {
            author: op.author,
            seq: op.seq,
            reason: reason.into(),
        }
    }

    fn apply_fresh(&mut self, op: &AnnotationOp) -> Result<ApplyOutcome, AnnotationError> {
        let key = (op.author, op.stroke_id);
        match op.kind {
            OpKind::StrokeBegin => {
                if self.strokes.contains_key(&key) || self.removed.contains(&key) {
                    return Err(Self::protocol(op, format!("stroke {} already exists", op.stroke_id)));
                }
                if self.cleared_through[op.author.index()].is_some_and(|w| op.seq <= w) {
                    self.removed.insert(key);
                    return Ok(ApplyOutcome::Superseded);
                }
                self.strokes.insert(
                    key,
                    Stroke {
                        color: op.color,
                        points: vec![op.point],
                        open: true,
                        begin_seq: op.seq,
                    },
                );
                Ok(ApplyOutcome::Applied)
            }
            OpKind::StrokePoint | OpKind::StrokeEnd => match self.strokes.get_mut(&key) {
                Some(stroke) if stroke.open => {
                    if op.kind == OpKind::StrokePoint {
                        stroke.points.push(op.point);
                    } else {
                        stroke.open = false;
                    }
                    Ok(ApplyOutcome::Applied)
                }
                Some(_) => Err(Self::protocol(op, format!("stroke {} is closed", op.stroke_id))),
                None if self.removed.contains(&key) => Ok(ApplyOutcome::Superseded),
                None => Err(Self::protocol(op, format!("unknown stroke {}", op.stroke_id))),
            },
            OpKind::EraseStroke => {
                if self.strokes.remove(&key).is_some() {
                    self.removed.insert(key);
                    Ok(ApplyOutcome::Applied)
                } else if self.removed.contains(&key) {
                    Ok(ApplyOutcome::Superseded)
                } else {
                    Err(Self::protocol(op, format!("unknown stroke {}", op.stroke_id)))
                }
            }
            OpKind::ClearAll => {
                let own = op.author;
                let peer = own.peer();
                self.raise_watermark(own, op.seq.saturating_sub(1));
                if op.stroke_id > 0 {
                    self.raise_watermark(peer, op.stroke_id);
                }
                Ok(ApplyOutcome::Applied)
            }
        }
    }

    fn raise_watermark(&mut self, author: PeerRole, through: u32) {
        let slot = &mut self.cleared_through[author.index()];
        let through = slot.map_or(through, |w| w.max(through));
        *slot = Some(through);
        let doomed: Vec<_> = self
            .strokes
            .iter()
            .filter(|((a, _), s)| *a == author && s.begin_seq <= through)
            .map(|(k, _)| *k)
            .collect();
        for key in doomed {
            self.strokes.remove(&key);
            self.removed.insert(key);
        }
    }

    /// `{"strokes": [{"author", "id", "color", "points": [[x, y, z], ...]}]}`
    pub fn to_json(&self) -> serde_json::Value {
        let strokes = self
            .strokes
            .iter()
            .map(|(&(author, id), s)| StrokeJson {
                author,
                id,
                color: s.color,
                points: s.points.iter().map(|p| p.to_array()).collect(),
            })
            .collect();
        serde_json::to_value(StateJson { strokes }).expect("annotation state is always serializable")
    }
}

/// Issues ops for one local author with increasing seq and stroke ids.
#[derive(Debug, Clone)]
pub struct OpAuthor {
    role: PeerRole,
    next_seq: u32,
    next_stroke: u32,
}

impl OpAuthor {
    pub fn new(role: PeerRole) -> Self {
        Self {
            role,
            next_seq: 1,
            next_stroke: 1,
        }
    }

    pub fn role(&self) -> PeerRole {
        self.role
    }

    fn seq(&mut self) -> u32 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Starts a stroke and returns its id with the op.
    pub fn begin(&mut self, point: Point3, color: [u8; 3]) -> (u32, AnnotationOp) {
        let id = self.next_stroke;
        self.next_stroke += 1;
        (id, AnnotationOp::stroke_begin(self.role, self.seq(), id, point, color))
    }

    pub fn point(&mut self, stroke_id: u32, point: Point3) -> AnnotationOp {
        AnnotationOp::stroke_point(self.role, self.seq(), stroke_id, point)
    }

    pub fn end(&mut self, stroke_id: u32) -> AnnotationOp {
        AnnotationOp::stroke_end(self.role, self.seq(), stroke_id)
    }

    pub fn erase(&mut self, stroke_id: u32) -> AnnotationOp {
        AnnotationOp::erase_stroke(self.role, self.seq(), stroke_id)
    }

    /// Clear everything this author can currently see in `state`.
    pub fn clear_all(&mut self, state: &AnnotationState) -> AnnotationOp {
        let watermark = state.last_seq(self.role.peer()).unwrap_or(0);
        AnnotationOp::clear_all(self.role, self.seq(), watermark)
    }
}

/// Anchors a screen-space input to the captured surface.
///
/// A valid pixel is deprojected directly. Otherwise the 3x3 neighborhood is
/// scanned row-major and the valid neighbor with the smallest depth wins,
/// first in scan order on ties.
pub fn anchor_screen_input(depth: &DepthFrame, u: u32, v: u32) -> Option<Point3> {
    let k = &depth.intrinsics;
    if u >= u32::from(k.width) || v >= u32::from(k.height) {
        return None;
    }
    let d = depth.at(u, v);
    if d != 0 {
        return deproject(u, v, d, k).ok();
    }
    let mut best: Option<(u16, u32, u32)> = None;
    for dv in -1i64..=1 {
        for du in -1i64..=1 {
            let (nu, nv) = (i64::from(u) + du, i64::from(v) + dv);
            if nu < 0 || nv < 0 || nu >= i64::from(k.width) || nv >= i64::from(k.height) {
                continue;
            }
            let nd = depth.at(nu as u32, nv as u32);
            if nd != 0 && best.is_none_or(|(bd, _, _)| nd < bd) {
                best = Some((nd, nu as u32, nv as u32));
            }
        }
    }
    best.and_then(|(nd, nu, nv)| deproject(nu, nv, nd, k).ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum GestureKind {
    Point = 1,
}

impl GestureKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        (v == 1).then_some(Self::Point)
    }
}

/// An already-classified hand gesture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GestureEvent {
    pub kind: GestureKind,
    pub author: PeerRole,
    pub ray: Ray,
    pub ts_us: u64,
}

/// Transient pointers, one per author, expiring [`POINTER_TTL_US`] after
/// their timestamp.
#[derive(Debug, Clone, Default)]
pub struct PointerSet {
    latest: [Option<GestureEvent>; 2],
}

impl PointerSet {
    pub fn insert(&mut self, event: GestureEvent) {
        let slot = &mut self.latest[event.author.index()];
        if slot.is_none_or(|e| e.ts_us <= event.ts_us) {
            *slot = Some(event);
        }
    }

    pub fn active(&self, now_us: u64) -> impl Iterator<Item = &GestureEvent> {
        self.latest
            .iter()
            .flatten()
            .filter(move |e| now_us < e.ts_us.saturating_add(POINTER_TTL_US))
    }
}
