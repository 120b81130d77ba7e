//! Pluggable color-stream codecs.
//!
//! Codec 0 (`raw`) copies pixels verbatim. Codec 1 (`deflate`) is a lossless
//! general-purpose stage over the same bytes; it exists so that sessions under
//! realistic bandwidth caps can carry color at all. Further codecs register
//! under new ids without changing the wire format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::{Arc, LazyLock};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::frame::ColorFrame;

pub const RAW_CODEC_ID: u8 = 0;
pub const DEFLATE_CODEC_ID: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ColorCodecError {
    #[error("unknown color codec id {0}")]
    UnknownCodec(u8),

    #[error("color codec id {0} is already registered")]
    DuplicateCodec(u8),

    #[error("malformed color payload: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedColorMessage {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub codec_id: u8,
    pub width: u16,
    pub height: u16,
    pub payload: Vec<u8>,
}

/// A color frame compressor. `decode(encode(p))` must reproduce `p` within
/// the codec's documented loss bound; both built-in codecs are lossless.
pub trait ColorCodec: Send + Sync {
    fn id(&self) -> u8;
    fn name(&self) -> &'static str;
    fn encode(&self, pixels: &[u8], width: u16, height: u16) -> Vec<u8>;
    fn decode(&self, payload: &[u8], width: u16, height: u16) -> Result<Vec<u8>, ColorCodecError>;
}

fn rgb_len(width: u16, height: u16) -> usize {
    3 * usize::from(width) * usize::from(height)
}

pub struct RawCodec;

impl ColorCodec for RawCodec {
    fn id(&self) -> u8 {
        RAW_CODEC_ID
    }

    fn name(&self) -> &'static str {
        "raw"
    }

    fn encode(&self, pixels: &[u8], _width: u16, _height: u16) -> Vec<u8> {
        pixels.to_vec()
    }

    fn decode(&self, payload: &[u8], width: u16, height: u16) -> Result<Vec<u8>, ColorCodecError> {
        let expected = rgb_len(width, height);
        if payload.len() != expected {
            return Err(ColorCodecError::Format(format!(
                "raw payload is {} bytes, {width}x{height} RGB needs {expected}",
                payload.len()
            )));
        }
        Ok(payload.to_vec())
    }
}

pub struct DeflateCodec {
    level: Compression,
}

impl Default for DeflateCodec {
    fn default() -> Self {
        Self {
            level: Compression::fast(),
        }
    }
}

impl ColorCodec for DeflateCodec {
    fn id(&self) -> u8 {
        DEFLATE_CODEC_ID
    }

    fn name(&self) -> &'static str {
        "deflate"
    }

    fn encode(&self, pixels: &[u8], _width: u16, _height: u16) -> Vec<u8> {
        let mut encoder = DeflateEncoder::new(Vec::with_capacity(pixels.len() / 8), self.level);
        encoder.write_all(pixels).expect("writing to a Vec cannot fail");
        encoder.finish().expect("writing to a Vec cannot fail")
    }

    fn decode(&self, payload: &[u8], width: u16, height: u16) -> Result<Vec<u8>, ColorCodecError> {
        let expected = rgb_len(width, height);
        let mut out = Vec::with_capacity(expected);
        DeflateDecoder::new(payload)
            .take(expected as u64 + 1)
            .read_to_end(&mut out)
            .map_err(|e| ColorCodecError::Format(format!("deflate: {e}")))?;
        if out.len() != expected {
            return Err(ColorCodecError::Format(format!(
                "deflate payload inflates to {}{} bytes, {width}x{height} RGB needs {expected}",
                if out.len() > expected { "more than " } else { "" },
                out.len().min(expected)
            )));
        }
        Ok(out)
    }
}

/// Maps codec ids to implementations.
#[derive(Clone)]
pub struct ColorCodecRegistry {
    codecs: BTreeMap<u8, Arc<dyn ColorCodec>>,
}

impl Default for ColorCodecRegistry {
    /// Registry holding the raw and deflate codecs.
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register(Arc::new(RawCodec)).unwrap();
        registry.register(Arc::new(DeflateCodec::default())).unwrap();
        registry
    }
}

impl ColorCodecRegistry {
    pub fn empty() -> Self {
        Self { codecs: BTreeMap::new() }
    }

    pub fn register(&mut self, codec: Arc<dyn ColorCodec>) -> Result<(), ColorCodecError> {
        let id = codec.id();
        if self.codecs.contains_key(&id) {
            return Err(ColorCodecError::DuplicateCodec(id));
        }
        self.codecs.insert(id, codec);
        Ok(())
    }

    pub fn get(&self, codec_id: u8) -> Result<&dyn ColorCodec, ColorCodecError> {
        self.codecs
            .get(&codec_id)
            .map(|c| c.as_ref())
            .ok_or(ColorCodecError::UnknownCodec(codec_id))
    }

    pub fn by_name(&self, name: &str) -> Option<u8> {
        self.codecs.values().find(|c| c.name() == name).map(|c| c.id())
    }

    pub fn encode(&self, frame: &ColorFrame, codec_id: u8) -> Result<EncodedColorMessage, ColorCodecError> {
        let codec = self.get(codec_id)?;
        if frame.pixels.len() != rgb_len(frame.width, frame.height) {
            return Err(ColorCodecError::Format(format!(
                "frame {} holds {} bytes for {}x{} RGB",
                frame.frame_id,
                frame.pixels.len(),
                frame.width,
                frame.height
            )));
        }
        Ok(EncodedColorMessage {
            frame_id: frame.frame_id,
            capture_ts_us: frame.capture_ts_us,
            codec_id,
            width: frame.width,
            height: frame.height,
            payload: codec.encode(&frame.pixels, frame.width, frame.height),
        })
    }

    pub fn decode(&self, msg: &EncodedColorMessage) -> Result<ColorFrame, ColorCodecError> {
        let pixels = self.get(msg.codec_id)?.decode(&msg.payload, msg.width, msg.height)?;
        Ok(ColorFrame {
            frame_id: msg.frame_id,
            capture_ts_us: msg.capture_ts_us,
            width: msg.width,
            height: msg.height,
            pixels,
        })
    }
}

static BUILTIN: LazyLock<ColorCodecRegistry> = LazyLock::new(ColorCodecRegistry::default);

/// Encodes with the built-in registry.
pub fn color_encode(frame: &ColorFrame, codec_id: u8) -> Result<EncodedColorMessage, ColorCodecError> {
    BUILTIN.encode(frame, codec_id)
}

/// Decodes with the built-in registry.
pub fn color_decode(msg: &EncodedColorMessage) -> Result<ColorFrame, ColorCodecError> {
    BUILTIN.decode(msg)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::frame::{SyntheticSceneConfig, SyntheticSource};

    fn tiny() -> ColorFrame {
        ColorFrame::new(7, 1234, 2, 2, (1..=12).collect()).unwrap()
    }

    #[test]
    fn raw_is_identity() {
        let msg = color_encode(&tiny(), RAW_CODEC_ID).unwrap();
        assert_eq!(msg.payload, (1..=12).collect::<Vec<u8>>());
        assert_eq!(color_decode(&msg).unwrap(), tiny());
    }

    #[test]
    fn unknown_codec_rejected() {
        assert_eq!(color_encode(&tiny(), 250), Err(ColorCodecError::UnknownCodec(250)));
        let mut msg = color_encode(&tiny(), RAW_CODEC_ID).unwrap();
        msg.codec_id = 250;
        assert_eq!(color_decode(&msg), Err(ColorCodecError::UnknownCodec(250)));
    }

    #[test]
    fn truncated_payload_rejected() {
        for codec in [RAW_CODEC_ID, DEFLATE_CODEC_ID] {
            let mut msg = color_encode(&tiny(), codec).unwrap();
            msg.payload.pop();
            assert!(matches!(color_decode(&msg), Err(ColorCodecError::Format(_))), "codec {codec}");
        }
    }

    #[test]
    fn oversized_deflate_payload_rejected() {
        let big = ColorFrame::new(0, 0, 4, 4, vec![9; 48]).unwrap();
        let mut msg = color_encode(&big, DEFLATE_CODEC_ID).unwrap();
        msg.width = 2;
        msg.height = 2;
        assert!(matches!(color_decode(&msg), Err(ColorCodecError::Format(_))));
    }

    #[test]
    fn synthetic_frames_round_trip_and_deflate_shrinks() {
        let source = SyntheticSource::new(SyntheticSceneConfig {
            frame_limit: Some(2),
            ..SyntheticSceneConfig::default()
        })
        .unwrap();
        for pair in source {
            let color = pair.unwrap().color;
            let raw = color_encode(&color, RAW_CODEC_ID).unwrap();
            assert_eq!(color_decode(&raw).unwrap(), color);
            let packed = color_encode(&color, DEFLATE_CODEC_ID).unwrap();
            assert!(packed.payload.len() * 20 < raw.payload.len());
            assert_eq!(color_decode(&packed).unwrap(), color);
        }
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut registry = ColorCodecRegistry::default();
        assert_eq!(registry.register(Arc::new(RawCodec)), Err(ColorCodecError::DuplicateCodec(0)));
        assert_eq!(registry.by_name("deflate"), Some(DEFLATE_CODEC_ID));
        assert!(ColorCodecRegistry::empty().get(0).is_err());
    }

    proptest! {
        #[test]
        fn lossless_for_any_frame(w in 1u16..12, h in 1u16..12, seed in any::<u64>(), id in 0u32..1000, ts in any::<u64>()) {
            let n = 3 * usize::from(w) * usize::from(h);
            let pixels: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let frame = ColorFrame::new(id, ts, w, h, pixels).unwrap();
            for codec in [RAW_CODEC_ID, DEFLATE_CODEC_ID] {
                let back = color_decode(&color_encode(&frame, codec).unwrap()).unwrap();
                prop_assert_eq!(&back, &frame);
            }
        }
    }
}
