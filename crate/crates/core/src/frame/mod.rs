//! RGB-D frames, camera intrinsics and the frame sources that stand in for a
//! volumetric camera.
//!
//! Depth is stored as row-major `u16` millimeters with `0` meaning "no
//! return". Color shares the depth grid (pre-registered) and is stored as
//! packed 8-bit RGB triples.

mod synthetic;
mod vrs;

pub use synthetic::{CirclePath, SyntheticSceneConfig, SyntheticSource, PLANE_COLOR, SPHERE_COLOR};
pub use vrs::{record_sink, ReplaySource, Vrs1Writer, VRS1_FRAME_HEADER_LEN, VRS1_HEADER_LEN, VRS1_MAGIC};

use thiserror::Error;

/// Errors raised by frame construction and frame sources.
#[derive(Debug, Error)]
pub enum FrameError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed recording at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: u16,
        expected_h: u16,
        got_w: u16,
        got_h: u16,
    },
}

/// Pinhole camera model for the depth grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u16,
    pub height: u16,
}

impl CameraIntrinsics {
    pub fn new(fx: f32, fy: f32, cx: f32, cy: f32, width: u16, height: u16) -> Result<Self, FrameError> {
        let intrinsics = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    /// Intrinsics of a Kinect-class NFOV depth camera scaled to `width` x `height`,
    /// with the principal point at the image center.
    pub fn nominal(width: u16, height: u16) -> Self {
        let focal = 504.0 * f32::from(width) / 640.0;
        Self {
            fx: focal,
            fy: focal,
            cx: f32::from(width / 2),
            cy: f32::from(height / 2),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.width == 0 || self.height == 0 {
            return Err(FrameError::Config(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(FrameError::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < f32::from(self.width)) || !(self.cy >= 0.0 && self.cy < f32::from(self.height)) {
            return Err(FrameError::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }
}

/// Frame rate as a rational number, matching the recording header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fps {
    pub num: u16,
    pub den: u16,
}

impl Fps {
    pub fn new(num: u16, den: u16) -> Result<Self, FrameError> {
        if num == 0 || den == 0 {
            return Err(FrameError::Config(format!("frame rate must be positive, got {num}/{den}")));
        }
        Ok(Self { num, den })
    }

    pub const fn whole(num: u16) -> Self {
        Self { num, den: 1 }
    }

    /// Capture timestamp of tick `t`, floored to whole microseconds.
    pub fn tick_ts_us(&self, tick: u64) -> u64 {
        tick * 1_000_000 * u64::from(self.den) / u64::from(self.num)
    }

    /// Frame period rounded to the nearest microsecond.
    pub fn period_us(&self) -> u64 {
        let num = u64::from(self.num);
        (1_000_000 * u64::from(self.den) + num / 2) / num
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub intrinsics: CameraIntrinsics,
    /// Row-major millimeters, 0 = invalid.
    pub depth: Vec<u16>,
}

impl DepthFrame {
    pub fn new(frame_id: u32, capture_ts_us: u64, intrinsics: CameraIntrinsics, depth: Vec<u16>) -> Result<Self, FrameError> {
        if depth.len() != intrinsics.pixel_count() {
            return Err(FrameError::Config(format!(
                "depth buffer holds {} values, {}x{} grid needs {}",
                depth.len(),
                intrinsics.width,
                intrinsics.height,
                intrinsics.pixel_count()
            )));
        }
        Ok(Self {
            frame_id,
            capture_ts_us,
            intrinsics,
            depth,
        })
    }

    pub fn filled(frame_id: u32, capture_ts_us: u64, intrinsics: CameraIntrinsics, value: u16) -> Self {
        Self {
            frame_id,
            capture_ts_us,
            intrinsics,
            depth: vec![value; intrinsics.pixel_count()],
        }
    }

    pub fn width(&self) -> u16 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u16 {
        self.intrinsics.height
    }

    pub fn at(&self, u: u32, v: u32) -> u16 {
        self.depth[v as usize * usize::from(self.intrinsics.width) + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub width: u16,
    pub height: u16,
    /// Row-major packed RGB.
    pub pixels: Vec<u8>,
}

impl ColorFrame {
    pub fn new(frame_id: u32, capture_ts_us: u64, width: u16, height: u16, pixels: Vec<u8>) -> Result<Self, FrameError> {
        let expected = 3 * usize::from(width) * usize::from(height);
        if pixels.len() != expected {
            return Err(FrameError::Config(format!(
                "color buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            frame_id,
            capture_ts_us,
            width,
            height,
            pixels,
        })
    }

    pub fn rgb_at(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v as usize * usize::from(self.width) + u as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// One source tick: a depth frame and the color frame captured with it.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub depth: DepthFrame,
    pub color: ColorFrame,
}

/// A pull-based, single-consumer stream of captures.
pub trait FrameSource: Iterator<Item = Result<FramePair, FrameError>> {
    fn intrinsics(&self) -> CameraIntrinsics;
    fn fps(&self) -> Fps;
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn intrinsics(&self) -> CameraIntrinsics {
        (**self).intrinsics()
    }

    fn fps(&self) -> Fps {
        (**self).fps()
    }
}
