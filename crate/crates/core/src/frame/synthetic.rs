use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraIntrinsics, ColorFrame, DepthFrame, Fps, FrameError, FramePair, FrameSource};

pub const PLANE_COLOR: [u8; 3] = [128, 128, 128];
pub const SPHERE_COLOR: [u8; 3] = [220, 90, 40];

/// Circular path of the sphere center in the camera's x/y plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePath {
    /// Circle center in camera space, millimeters.
    pub center_mm: [f32; 3],
    pub radius_mm: f32,
    pub angular_speed_rad_s: f32,
}

impl CirclePath {
    pub fn fixed(center_mm: [f32; 3]) -> Self {
        Self {
            center_mm,
            radius_mm: 0.0,
            angular_speed_rad_s: 0.0,
        }
    }

    pub fn position_at(&self, t_s: f64) -> [f64; 3] {
        let angle = f64::from(self.angular_speed_rad_s) * t_s;
        let r = f64::from(self.radius_mm);
        [
            f64::from(self.center_mm[0]) + r * angle.cos(),
            f64::from(self.center_mm[1]) + r * angle.sin(),
            f64::from(self.center_mm[2]),
        ]
    }
}

/// Desk-scale test scene: a fronto-parallel background plane and a sphere
/// orbiting in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub width: u16,
    pub height: u16,
    pub fps: Fps,
    /// Background plane depth; a plane beyond the u16 range is not rendered.
    pub plane_depth_mm: f32,
    pub sphere_radius_mm: f32,
    pub sphere_center_path: CirclePath,
    /// Uniform integer noise in `[-a, a]` added to every valid pixel.
    pub noise_amplitude_mm: u16,
    pub seed: u64,
    /// Frames to produce; `None` is endless.
    pub frame_limit: Option<u64>,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 576,
            fps: Fps::whole(15),
            plane_depth_mm: 2000.0,
            sphere_radius_mm: 150.0,
            sphere_center_path: CirclePath {
                center_mm: [0.0, 0.0, 1500.0],
                radius_mm: 200.0,
                angular_speed_rad_s: 1.0,
            },
            noise_amplitude_mm: 2,
            seed: 1,
            frame_limit: None,
        }
    }
}

impl SyntheticSceneConfig {
    /// Same scene with the sphere parked at its path start and no noise.
    pub fn static_scene(mut self) -> Self {
        self.sphere_center_path.angular_speed_rad_s = 0.0;
        self.noise_amplitude_mm = 0;
        self
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.width == 0 || self.height == 0 {
            return Err(FrameError::Config(format!(
                "scene size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.fps.num == 0 || self.fps.den == 0 {
            return Err(FrameError::Config("fps must be positive".into()));
        }
        if self.plane_depth_mm.is_nan() || self.plane_depth_mm <= 0.0 {
            return Err(FrameError::Config(format!(
                "plane depth must be positive, got {}",
                self.plane_depth_mm
            )));
        }
        if [self.sphere_radius_mm, self.sphere_center_path.radius_mm].iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(FrameError::Config("sphere and path radii must be non-negative".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::nominal(self.width, self.height)
    }
}

/// Deterministic analytic renderer; identical configs produce identical
/// byte streams.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    config: SyntheticSceneConfig,
    intrinsics: CameraIntrinsics,
    rng: ChaCha8Rng,
    tick: u64,
}

impl SyntheticSource {
    pub fn new(config: SyntheticSceneConfig) -> Result<Self, FrameError> {
        config.validate()?;
        let intrinsics = config.intrinsics();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            intrinsics,
            config,
            tick: 0,
        })
    }

    pub fn config(&self) -> &SyntheticSceneConfig {
        &self.config
    }

    /// Renders tick `tick` without touching the noise stream.
    fn render(&mut self, tick: u64) -> FramePair {
        let k = self.intrinsics;
        let ts = self.config.fps.tick_ts_us(tick);
        let center = self.config.sphere_center_path.position_at(ts as f64 / 1e6);
        let radius = f64::from(self.config.sphere_radius_mm);
        let c_sq = center[0] * center[0] + center[1] * center[1] + center[2] * center[2];
        let plane = f64::from(self.config.plane_depth_mm);
        let plane_visible = plane <= f64::from(u16::MAX);

        let n = k.pixel_count();
        let mut depth = vec![0u16; n];
        let mut pixels = vec![0u8; 3 * n];
        let amplitude = i32::from(self.config.noise_amplitude_mm);

        for v in 0..k.height {
            let dy = (f64::from(v) - f64::from(k.cy)) / f64::from(k.fy);
            for u in 0..k.width {
                let dx = (f64::from(u) - f64::from(k.cx)) / f64::from(k.fx);
                // Ray p(t) = t * (dx, dy, 1); t is the z coordinate.
                let d_sq = dx * dx + dy * dy + 1.0;
                let d_dot_c = dx * center[0] + dy * center[1] + center[2];
                let disc = d_dot_c * d_dot_c - d_sq * (c_sq - radius * radius);
                let mut surface: Option<(f64, [u8; 3])> = plane_visible.then_some((plane, PLANE_COLOR));
                if radius > 0.0 && disc >= 0.0 {
                    let t = (d_dot_c - disc.sqrt()) / d_sq;
                    if t > 0.0 && t <= f64::from(u16::MAX) && surface.is_none_or(|(z, _)| t < z) {
                        surface = Some((t, SPHERE_COLOR));
                    }
                }
                let i = usize::from(v) * usize::from(k.width) + usize::from(u);
                if let Some((z, rgb)) = surface {
                    let mut mm = z.round() as i32;
                    if amplitude > 0 {
                        mm += self.rng.gen_range(-amplitude..=amplitude);
                    }
                    depth[i] = mm.clamp(1, i32::from(u16::MAX)) as u16;
                    pixels[3 * i..3 * i + 3].copy_from_slice(&rgb);
                }
            }
        }

        let frame_id = tick as u32;
        FramePair {
            depth: DepthFrame {
                frame_id,
                capture_ts_us: ts,
                intrinsics: k,
                depth,
            },
            color: ColorFrame {
                frame_id,
                capture_ts_us: ts,
                width: k.width,
                height: k.height,
                pixels,
            },
        }
    }
}

impl Iterator for SyntheticSource {
    type Item = Result<FramePair, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.config.frame_limit.is_some_and(|limit| self.tick >= limit) {
            return None;
        }
        let pair = self.render(self.tick);
        self.tick += 1;
        Some(Ok(pair))
    }
}

impl FrameSource for SyntheticSource {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn fps(&self) -> Fps {
        self.config.fps
    }
}
