//! VRS1 recording format.
//!
//! ```text
//! header: "VRS1" | version u16 = 1 | width u16 | height u16 | fps_num u16 | fps_den u16
//!         | fx f32 | fy f32 | cx f32 | cy f32
//! frame:  frame_id u32 | capture_ts_us u64 | depth u16 x W*H | color u8 x 3*W*H
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{CameraIntrinsics, ColorFrame, DepthFrame, Fps, FrameError, FramePair, FrameSource};

pub const VRS1_MAGIC: [u8; 4] = *b"VRS1";
pub const VRS1_VERSION: u16 = 1;
pub const VRS1_HEADER_LEN: u64 = 30;
pub const VRS1_FRAME_HEADER_LEN: u64 = 12;

fn frame_len(k: &CameraIntrinsics) -> u64 {
    VRS1_FRAME_HEADER_LEN + 5 * k.pixel_count() as u64
}

/// Streams frames into a VRS1 file.
///
/// Data goes to `<path>.partial` and is renamed into place by
/// [`Vrs1Writer::finish`], so an interrupted recording never masquerades as a
/// complete one.
pub struct Vrs1Writer {
    out: BufWriter<File>,
    intrinsics: CameraIntrinsics,
    partial: PathBuf,
    path: PathBuf,
    frames: u64,
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

impl Vrs1Writer {
    pub fn create(path: impl AsRef<Path>, intrinsics: CameraIntrinsics, fps: Fps) -> Result<Self, FrameError> {
        intrinsics.validate()?;
        let path = path.as_ref().to_path_buf();
        let partial = partial_path(&path);
        let mut out = BufWriter::new(File::create(&partial)?);
        out.write_all(&VRS1_MAGIC)?;
        for value in [VRS1_VERSION, intrinsics.width, intrinsics.height, fps.num, fps.den] {
            out.write_all(&value.to_le_bytes())?;
        }
        for value in [intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy] {
            out.write_all(&value.to_le_bytes())?;
        }
        Ok(Self {
            out,
            intrinsics,
            partial,
            path,
            frames: 0,
        })
    }

    pub fn write(&mut self, pair: &FramePair) -> Result<(), FrameError> {
        let k = &self.intrinsics;
        let d = &pair.depth;
        if d.intrinsics.width != k.width || d.intrinsics.height != k.height {
            return Err(FrameError::DimensionMismatch {
                expected_w: k.width,
                expected_h: k.height,
                got_w: d.intrinsics.width,
                got_h: d.intrinsics.height,
            });
        }
        if pair.color.width != k.width || pair.color.height != k.height || pair.color.pixels.len() != 3 * k.pixel_count() {
            return Err(FrameError::DimensionMismatch {
                expected_w: k.width,
                expected_h: k.height,
                got_w: pair.color.width,
                got_h: pair.color.height,
            });
        }
        self.out.write_all(&d.frame_id.to_le_bytes())?;
        self.out.write_all(&d.capture_ts_us.to_le_bytes())?;
        let mut depth_bytes = Vec::with_capacity(2 * d.depth.len());
        for value in &d.depth {
            depth_bytes.extend_from_slice(&value.to_le_bytes());
        }
        self.out.write_all(&depth_bytes)?;
        self.out.write_all(&pair.color.pixels)?;
        self.frames += 1;
        Ok(())
    }

    /// Flushes and moves the file to its final name; returns the frame count.
    pub fn finish(mut self) -> Result<u64, FrameError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        std::fs::rename(&self.partial, &self.path)?;
        Ok(self.frames)
    }
}

/// Records every frame of `source` to `path` and returns the number written.
///
/// On failure the data written so far is left at `<path>.partial`.
pub fn record_sink<S: FrameSource>(source: S, path: impl AsRef<Path>) -> Result<u64, FrameError> {
    let mut writer = Vrs1Writer::create(path, source.intrinsics(), source.fps())?;
    for pair in source {
        writer.write(&pair?)?;
    }
    writer.finish()
}

/// Reads a VRS1 file back as a frame source.
pub struct ReplaySource {
    reader: BufReader<File>,
    intrinsics: CameraIntrinsics,
    fps: Fps,
    looping: bool,
    offset: u64,
    file_len: u64,
    // Per-loop bookkeeping.
    first: Option<(u32, u64)>,
    last: Option<(u32, u64)>,
    id_offset: u32,
    ts_offset: u64,
    done: bool,
}

fn read_exact_at(reader: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<(), FrameError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => FrameError::Format {
            offset,
            reason: format!("truncated {what}"),
        },
        _ => FrameError::Io(e),
    })
}

impl ReplaySource {
    pub fn open(path: impl AsRef<Path>, looping: bool) -> Result<Self, FrameError> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut header = [0u8; VRS1_HEADER_LEN as usize];
        read_exact_at(&mut reader, &mut header, 0, "header")?;
        if header[0..4] != VRS1_MAGIC {
            return Err(FrameError::Format {
                offset: 0,
                reason: format!("bad magic {:02x?}", &header[0..4]),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let f32_at = |i: usize| f32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]);
        let version = u16_at(4);
        if version != VRS1_VERSION {
            return Err(FrameError::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let fps = Fps::new(u16_at(10), u16_at(12)).map_err(|e| FrameError::Format {
            offset: 10,
            reason: e.to_string(),
        })?;
        let intrinsics = CameraIntrinsics::new(f32_at(14), f32_at(18), f32_at(22), f32_at(26), u16_at(6), u16_at(8))
            .map_err(|e| FrameError::Format {
                offset: 6,
                reason: e.to_string(),
            })?;
        Ok(Self {
            reader,
            intrinsics,
            fps,
            looping,
            offset: VRS1_HEADER_LEN,
            file_len,
            first: None,
            last: None,
            id_offset: 0,
            ts_offset: 0,
            done: false,
        })
    }

    fn rewind(&mut self) -> Result<(), FrameError> {
        let (Some((first_id, first_ts)), Some((last_id, last_ts))) = (self.first, self.last) else {
            return Ok(());
        };
        self.id_offset += last_id.wrapping_sub(first_id).wrapping_add(1);
        self.ts_offset += last_ts - first_ts + self.fps.period_us();
        self.reader.seek(SeekFrom::Start(VRS1_HEADER_LEN))?;
        self.offset = VRS1_HEADER_LEN;
        Ok(())
    }

    fn read_frame(&mut self) -> Result<Option<FramePair>, FrameError> {
        if self.offset == self.file_len {
            if !self.looping || self.first.is_none() {
                return Ok(None);
            }
            self.rewind()?;
        }
        let k = self.intrinsics;
        let start = self.offset;
        if self.file_len - start < frame_len(&k) {
            return Err(FrameError::Format {
                offset: start,
                reason: format!(
                    "truncated frame: {} bytes left, frame needs {}",
                    self.file_len - start,
                    frame_len(&k)
                ),
            });
        }
        let mut head = [0u8; VRS1_FRAME_HEADER_LEN as usize];
        read_exact_at(&mut self.reader, &mut head, start, "frame header")?;
        let frame_id = u32::from_le_bytes(head[0..4].try_into().unwrap());
        let capture_ts_us = u64::from_le_bytes(head[4..12].try_into().unwrap());

        let n = k.pixel_count();
        let mut raw = vec![0u8; 2 * n];
        read_exact_at(&mut self.reader, &mut raw, start + VRS1_FRAME_HEADER_LEN, "depth payload")?;
        let depth = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        let mut pixels = vec![0u8; 3 * n];
        read_exact_at(
            &mut self.reader,
            &mut pixels,
            start + VRS1_FRAME_HEADER_LEN + 2 * n as u64,
            "color payload",
        )?;
        self.offset = start + frame_len(&k);

        if self.id_offset == 0 && self.ts_offset == 0 {
            if self.first.is_none() {
                self.first = Some((frame_id, capture_ts_us));
            }
            self.last = Some((frame_id, capture_ts_us));
        }
        let frame_id = frame_id.wrapping_add(self.id_offset);
        let capture_ts_us = capture_ts_us + self.ts_offset;
        Ok(Some(FramePair {
            depth: DepthFrame {
                frame_id,
                capture_ts_us,
                intrinsics: k,
                depth,
            },
            color: ColorFrame {
                frame_id,
                capture_ts_us,
                width: k.width,
                height: k.height,
                pixels,
            },
        }))
    }
}

impl Iterator for ReplaySource {
    type Item = Result<FramePair, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_frame() {
            Ok(Some(pair)) => Some(Ok(pair)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

impl FrameSource for ReplaySource {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn fps(&self) -> Fps {
        self.fps
    }
}
