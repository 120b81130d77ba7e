//! Text forms of scenes, network profiles and config files used by the CLI.
//!
//! * Scene: `synthetic`, `static`, `synthetic:width=320,height=288,noise=0`
//!   or a path to a `.vrs1` recording.
//! * Profile: `null`, `default`, or `latency_ms,jitter_ms,loss,bandwidth`
//!   where bandwidth takes `k`/`M`/`G` suffixes and `0`, `inf` or
//!   `unlimited` mean no cap.
//! * Config file: `key = value` lines naming long flags, `#` comments;
//!   `true` enables a switch, `false` leaves it off.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::frame::{CameraIntrinsics, Fps, FrameError, FramePair, FrameSource, ReplaySource, SyntheticSceneConfig, SyntheticSource};
use crate::wire::NetworkProfile;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid profile {input:?}: {reason}")]
    Profile { input: String, reason: String },

    #[error("invalid scene {input:?}: {reason}")]
    Scene { input: String, reason: String },

    #[error("invalid queue capacity {0:?}: expected a positive integer, 0 or \"unbounded\"")]
    QueueCapacity(String),

    #[error("config file line {line}: {reason}")]
    File { line: usize, reason: String },
}

/// Parses a bandwidth such as `20M`, `512k`, `1.5G` or `8000000`.
/// Returns `None` for an unlimited link.
pub fn parse_bandwidth(s: &str) -> Result<Option<u64>, String> {
    let t = s.trim();
    if matches!(t, "0" | "inf" | "unlimited") {
        return Ok(None);
    }
    let (num, scale) = match t.char_indices().last() {
        Some((i, 'k' | 'K')) => (&t[..i], 1e3),
        Some((i, 'M')) => (&t[..i], 1e6),
        Some((i, 'G' | 'g')) => (&t[..i], 1e9),
        _ => (t, 1.0),
    };
    let value: f64 = num.parse().map_err(|_| format!("bad bandwidth {s:?}"))?;
    if !(value.is_finite() && value > 0.0) {
        return Err(format!("bandwidth must be positive, got {s:?}"));
    }
    Ok(Some((value * scale).round().max(1.0) as u64))
}

/// Parses a profile string (see the module docs).
pub fn parse_profile(s: &str) -> Result<NetworkProfile, ConfigError> {
    let err = |reason: String| ConfigError::Profile {
        input: s.to_string(),
        reason,
    };
    match s.trim() {
        "null" => return Ok(NetworkProfile::null()),
        "default" => return Ok(NetworkProfile::default()),
        _ => {}
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [latency, jitter, loss, bw] = parts[..] else {
        return Err(err(format!("expected 4 comma-separated fields, got {}", parts.len())));
    };
    let number = |field: &str, what: &str| field.parse::<f64>().map_err(|_| err(format!("{what} {field:?} is not a number")));
    let bandwidth = parse_bandwidth(bw).map_err(err)?;
    NetworkProfile::from_ms(number(latency, "latency")?, number(jitter, "jitter")?, number(loss, "loss")?, bandwidth)
        .map_err(|e| err(e.to_string()))
}

/// `0` and `unbounded` mean no limit.
pub fn parse_queue_capacity(s: &str) -> Result<Option<usize>, ConfigError> {
    match s.trim() {
        "0" | "unbounded" => Ok(None),
        t => t
            .parse::<usize>()
            .map(Some)
            .map_err(|_| ConfigError::QueueCapacity(s.to_string())),
    }
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSpec {
    Synthetic(SyntheticSceneConfig),
    Replay(PathBuf),
}

impl SceneSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError::Scene {
            input: s.to_string(),
            reason,
        };
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut config = match kind {
            "synthetic" => SyntheticSceneConfig::default(),
            "static" => SyntheticSceneConfig::default().static_scene(),
            _ if params.is_empty() && (s.ends_with(".vrs1") || Path::new(s).is_file()) => {
                return Ok(Self::Replay(PathBuf::from(s)));
            }
            _ => return Err(err("expected synthetic[:k=v,...], static[:k=v,...] or a .vrs1 file".into())),
        };
        for pair in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| err(format!("parameter {pair:?} is not key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}={v} is not a number")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("{key}={v} is not an integer")));
            let u16_of = |v: &str| u16::try_from(int(v)?).map_err(|_| err(format!("{key}={v} is out of range")));
            match key {
                "width" | "w" => config.width = u16_of(value)?,
                "height" | "h" => config.height = u16_of(value)?,
                "fps" => config.fps = Fps::whole(u16_of(value)?),
                "plane" => config.plane_depth_mm = num(value)? as f32,
                "radius" => config.sphere_radius_mm = num(value)? as f32,
                "noise" => config.noise_amplitude_mm = u16_of(value)?,
                "seed" => config.seed = int(value)?,
                "orbit" => config.sphere_center_path.radius_mm = num(value)? as f32,
                "speed" => config.sphere_center_path.angular_speed_rad_s = num(value)? as f32,
                "depth" => config.sphere_center_path.center_mm[2] = num(value)? as f32,
                _ => return Err(err(format!("unknown parameter {key:?}"))),
            }
        }
        config.validate().map_err(|e| err(e.to_string()))?;
        Ok(Self::Synthetic(config))
    }

    /// Opens the source. `frame_limit` caps the number of frames; replays
    /// loop when `looping` is set.
    pub fn open(&self, frame_limit: Option<u64>, looping: bool) -> Result<Box<dyn FrameSource>, FrameError> {
        Ok(match self {
            Self::Synthetic(config) => Box::new(SyntheticSource::new(SyntheticSceneConfig {
                frame_limit: frame_limit.or(config.frame_limit),
                ..config.clone()
            })?),
            Self::Replay(path) => {
                let replay = ReplaySource::open(path, looping)?;
                match frame_limit {
                    Some(n) => Box::new(Limited::new(replay, n)),
                    None => Box::new(replay),
                }
            }
        })
    }
}

/// Caps a source at `n` frames.
pub struct Limited<S> {
    inner: S,
    remaining: u64,
}

impl<S> Limited<S> {
    pub fn new(inner: S, n: u64) -> Self {
        Self { inner, remaining: n }
    }
}

impl<S: FrameSource> Iterator for Limited<S> {
    type Item = Result<FramePair, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        self.inner.next()
    }
}

impl<S: FrameSource> FrameSource for Limited<S> {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.inner.intrinsics()
    }

    fn fps(&self) -> Fps {
        self.inner.fps()
    }
}

/// Turns config-file text into long-flag arguments, in file order.
pub fn config_file_args(text: &str) -> Result<Vec<String>, ConfigError> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::File {
            line: i + 1,
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::File {
                line: i + 1,
                reason: format!("bad key {key:?}"),
            });
        }
        let value = value.trim().trim_matches('"');
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}
