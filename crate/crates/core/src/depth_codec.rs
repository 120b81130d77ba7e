//! Change-based depth compression.
//!
//! A stream is a keyframe followed by tile deltas. The image is cut into
//! square tiles; a delta carries only the tiles in which some pixel moved by
//! more than the change threshold or changed validity. Both ends keep a
//! reference frame that is updated from what was actually transmitted, so
//! encoder and decoder references stay bit-identical.
//!
//! `DepthDelta::ref_frame_id` names the reference frame the delta was
//! computed against (the previously encoded frame of the same keyframe
//! epoch). A decoder whose reference does not match reports a desync, which
//! is how lost or reordered media messages are detected.

use thiserror::Error;

use crate::frame::{CameraIntrinsics, DepthFrame};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid codec configuration: {0}")]
    Config(String),

    #[error("frame is {got_w}x{got_h} but codec reference is {expected_w}x{expected_h}; reset with a keyframe")]
    DimensionMismatch {
        expected_w: u16,
        expected_h: u16,
        got_w: u16,
        got_h: u16,
    },

    /// The delta does not apply to the decoder's reference. `have` is `None`
    /// when the decoder has never seen a keyframe.
    #[error("delta for frame {frame_id} expects reference {wanted}, decoder holds {have:?}")]
    Desync { frame_id: u32, wanted: u32, have: Option<u32> },

    /// Message is older than the current reference (late delivery).
    #[error("stale message for frame {frame_id}, reference is already at {reference}")]
    Stale { frame_id: u32, reference: u32 },

    #[error("malformed depth message: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthCodecConfig {
    pub tile_size: u8,
    pub change_threshold_mm: u16,
    pub keyframe_interval: u32,
}

impl Default for DepthCodecConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            change_threshold_mm: 10,
            keyframe_interval: 30,
        }
    }
}

impl DepthCodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.tile_size == 0 {
            return Err(CodecError::Config("tile_size must be at least 1".into()));
        }
        if self.keyframe_interval == 0 {
            return Err(CodecError::Config("keyframe_interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tiling of a `width` x `height` image into `tile_size` squares, row-major,
/// with the right and bottom edge tiles clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub width: u16,
    pub height: u16,
    pub tile_size: u8,
}

/// Pixel rectangle covered by one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl TileGrid {
    pub fn new(width: u16, height: u16, tile_size: u8) -> Self {
        Self {
            width,
            height,
            tile_size,
        }
    }

    pub fn cols(&self) -> usize {
        usize::from(self.width).div_ceil(usize::from(self.tile_size))
    }

    pub fn rows(&self) -> usize {
        usize::from(self.height).div_ceil(usize::from(self.tile_size))
    }

    pub fn tile_count(&self) -> usize {
        self.cols() * self.rows()
    }

    pub fn rect(&self, index: usize) -> TileRect {
        let ts = usize::from(self.tile_size);
        let x = (index % self.cols()) * ts;
        let y = (index / self.cols()) * ts;
        TileRect {
            x,
            y,
            w: ts.min(usize::from(self.width) - x),
            h: ts.min(usize::from(self.height) - y),
        }
    }

    fn extract(&self, index: usize, depth: &[u16]) -> DepthTile {
        let r = self.rect(index);
        let stride = usize::from(self.width);
        let mut values = Vec::with_capacity(r.w * r.h);
        for row in r.y..r.y + r.h {
            values.extend_from_slice(&depth[row * stride + r.x..row * stride + r.x + r.w]);
        }
        DepthTile {
            index: index as u32,
            width: r.w as u8,
            height: r.h as u8,
            depth: values,
        }
    }

    fn blit(&self, tile: &DepthTile, depth: &mut [u16]) {
        let r = self.rect(tile.index as usize);
        let stride = usize::from(self.width);
        for (i, row) in (r.y..r.y + r.h).enumerate() {
            depth[row * stride + r.x..row * stride + r.x + r.w].copy_from_slice(&tile.depth[i * r.w..(i + 1) * r.w]);
        }
    }
}

/// Full depth frame; resets the decoder and starts a new epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthKeyframe {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub intrinsics: CameraIntrinsics,
    pub tile_size: u8,
    pub depth: Vec<u16>,
}

/// One transmitted tile; `width`/`height` are the clipped tile dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthTile {
    pub index: u32,
    pub width: u8,
    pub height: u8,
    pub depth: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthDelta {
    pub frame_id: u32,
    pub ref_frame_id: u32,
    pub capture_ts_us: u64,
    /// Strictly increasing tile indices.
    pub tiles: Vec<DepthTile>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedDepthMessage {
    Keyframe(DepthKeyframe),
    Delta(DepthDelta),
}

impl EncodedDepthMessage {
    pub fn frame_id(&self) -> u32 {
        match self {
            Self::Keyframe(k) => k.frame_id,
            Self::Delta(d) => d.frame_id,
        }
    }

    pub fn capture_ts_us(&self) -> u64 {
        match self {
            Self::Keyframe(k) => k.capture_ts_us,
            Self::Delta(d) => d.capture_ts_us,
        }
    }

    pub fn is_keyframe(&self) -> bool {
        matches!(self, Self::Keyframe(_))
    }

    /// Tiles carried: every tile for a keyframe.
    pub fn tile_count(&self) -> usize {
        match self {
            Self::Keyframe(k) => TileGrid::new(k.intrinsics.width, k.intrinsics.height, k.tile_size).tile_count(),
            Self::Delta(d) => d.tiles.len(),
        }
    }
}

/// Reference state held by one end of one depth stream.
#[derive(Debug, Clone, Default)]
pub struct CodecState {
    reference: Option<DepthFrame>,
    tile_size: u8,
    frames_since_keyframe: u32,
    force_keyframe: bool,
}

impl CodecState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reference(&self) -> Option<&DepthFrame> {
        self.reference.as_ref()
    }

    pub fn frames_since_keyframe(&self) -> u32 {
        self.frames_since_keyframe
    }

    /// Makes the next encode emit a keyframe.
    pub fn request_keyframe(&mut self) {
        self.force_keyframe = true;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

fn tile_changed(grid: &TileGrid, index: usize, reference: &[u16], frame: &[u16], threshold: u16) -> bool {
    let r = grid.rect(index);
    let stride = usize::from(grid.width);
    (r.y..r.y + r.h).any(|row| {
        let span = row * stride + r.x..row * stride + r.x + r.w;
        reference[span.clone()]
            .iter()
            .zip(&frame[span])
            .any(|(&old, &new)| (old == 0) != (new == 0) || old.abs_diff(new) > threshold)
    })
}

/// Encodes `frame` against `state` and advances the state to what the decoder
/// will reconstruct.
pub fn encode(state: &mut CodecState, frame: &DepthFrame, config: &DepthCodecConfig) -> Result<EncodedDepthMessage, CodecError> {
    config.validate()?;
    if frame.depth.len() != frame.intrinsics.pixel_count() {
        return Err(CodecError::Format(format!(
            "frame {} holds {} values for a {}x{} grid",
            frame.frame_id,
            frame.depth.len(),
            frame.width(),
            frame.height()
        )));
    }
    if let Some(reference) = &state.reference {
        if reference.width() != frame.width() || reference.height() != frame.height() {
            return Err(CodecError::DimensionMismatch {
                expected_w: reference.width(),
                expected_h: reference.height(),
                got_w: frame.width(),
                got_h: frame.height(),
            });
        }
    }

    let needs_keyframe = state.force_keyframe
        || state.tile_size != config.tile_size
        || state.frames_since_keyframe >= config.keyframe_interval;
    let reference = match state.reference.as_mut() {
        Some(reference) if !needs_keyframe => reference,
        _ => {
            state.reference = Some(frame.clone());
            state.tile_size = config.tile_size;
            state.frames_since_keyframe = 1;
            state.force_keyframe = false;
            return Ok(EncodedDepthMessage::Keyframe(DepthKeyframe {
                frame_id: frame.frame_id,
                capture_ts_us: frame.capture_ts_us,
                intrinsics: frame.intrinsics,
                tile_size: config.tile_size,
                depth: frame.depth.clone(),
            }));
        }
    };

    let grid = TileGrid::new(frame.width(), frame.height(), config.tile_size);
    let mut tiles = Vec::new();
    for index in 0..grid.tile_count() {
        if tile_changed(&grid, index, &reference.depth, &frame.depth, config.change_threshold_mm) {
            let tile = grid.extract(index, &frame.depth);
            grid.blit(&tile, &mut reference.depth);
            tiles.push(tile);
        }
    }
    let ref_frame_id = reference.frame_id;
    reference.frame_id = frame.frame_id;
    reference.capture_ts_us = frame.capture_ts_us;
    state.frames_since_keyframe += 1;
    Ok(EncodedDepthMessage::Delta(DepthDelta {
        frame_id: frame.frame_id,
        ref_frame_id,
        capture_ts_us: frame.capture_ts_us,
        tiles,
    }))
}

fn check_delta(grid: &TileGrid, delta: &DepthDelta) -> Result<(), CodecError> {
    let count = grid.tile_count();
    let mut previous: Option<u32> = None;
    for tile in &delta.tiles {
        if previous.is_some_and(|p| tile.index <= p) {
            return Err(CodecError::Format(format!(
                "tile indices not strictly increasing at {}",
                tile.index
            )));
        }
        previous = Some(tile.index);
        if tile.index as usize >= count {
            return Err(CodecError::Format(format!(
                "tile index {} out of range for {} tiles",
                tile.index, count
            )));
        }
        let r = grid.rect(tile.index as usize);
        if usize::from(tile.width) != r.w || usize::from(tile.height) != r.h || tile.depth.len() != r.w * r.h {
            return Err(CodecError::Format(format!(
                "tile {} is {}x{} with {} values, grid expects {}x{}",
                tile.index,
                tile.width,
                tile.height,
                tile.depth.len(),
                r.w,
                r.h
            )));
        }
    }
    Ok(())
}

/// Applies `msg` to `state` and returns the reconstructed frame.
///
/// On error the state is left untouched.
pub fn decode(state: &mut CodecState, msg: &EncodedDepthMessage) -> Result<DepthFrame, CodecError> {
    match msg {
        EncodedDepthMessage::Keyframe(key) => {
            key.intrinsics.validate().map_err(|e| CodecError::Format(e.to_string()))?;
            if key.tile_size == 0 {
                return Err(CodecError::Format("keyframe tile_size is 0".into()));
            }
            if key.depth.len() != key.intrinsics.pixel_count() {
                return Err(CodecError::Format(format!(
                    "keyframe holds {} values for a {}x{} grid",
                    key.depth.len(),
                    key.intrinsics.width,
                    key.intrinsics.height
                )));
            }
            if let Some(reference) = &state.reference {
                if key.frame_id < reference.frame_id {
                    return Err(CodecError::Stale {
                        frame_id: key.frame_id,
                        reference: reference.frame_id,
                    });
                }
            }
            let frame = DepthFrame {
                frame_id: key.frame_id,
                capture_ts_us: key.capture_ts_us,
                intrinsics: key.intrinsics,
                depth: key.depth.clone(),
            };
            state.reference = Some(frame.clone());
            state.tile_size = key.tile_size;
            state.frames_since_keyframe = 1;
            Ok(frame)
        }
        EncodedDepthMessage::Delta(delta) => {
            let tile_size = state.tile_size;
            let Some(reference) = state.reference.as_mut() else {
                return Err(CodecError::Desync {
                    frame_id: delta.frame_id,
                    wanted: delta.ref_frame_id,
                    have: None,
                });
            };
            if delta.frame_id <= reference.frame_id {
                return Err(CodecError::Stale {
                    frame_id: delta.frame_id,
                    reference: reference.frame_id,
                });
            }
            if delta.ref_frame_id != reference.frame_id {
                return Err(CodecError::Desync {
                    frame_id: delta.frame_id,
                    wanted: delta.ref_frame_id,
                    have: Some(reference.frame_id),
                });
            }
            let grid = TileGrid::new(reference.width(), reference.height(), tile_size);
            check_delta(&grid, delta)?;
            for tile in &delta.tiles {
                grid.blit(tile, &mut reference.depth);
            }
            reference.frame_id = delta.frame_id;
            reference.capture_ts_us = delta.capture_ts_us;
            state.frames_since_keyframe += 1;
            Ok(reference.clone())
        }
    }
}

/// Exact serialized length of `msg` as a wire message, header included.
pub fn encoded_size(msg: &EncodedDepthMessage) -> usize {
    crate::wire::depth_message_len(msg)
}
