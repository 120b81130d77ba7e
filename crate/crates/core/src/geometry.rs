//! Camera-space reconstruction from depth frames.
//!
//! Camera space is right-handed with z forward, x right and y down, so that
//! image rows and columns map onto +y and +x. Units are meters.

use std::io::{self, Write};

use thiserror::Error;

use crate::frame::{CameraIntrinsics, ColorFrame, DepthFrame};

pub const DEFAULT_POINT_COLOR: [u8; 3] = [128, 128, 128];
pub const DEFAULT_DISCONTINUITY_MM: u16 = 50;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({u}, {v}) has no valid depth")]
    InvalidPixel { u: u32, v: u32 },

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds { u: u32, v: u32, width: u16, height: u16 },

    #[error("color frame is {color_w}x{color_h}, depth frame is {depth_w}x{depth_h}")]
    DimensionMismatch {
        depth_w: u16,
        depth_h: u16,
        color_w: u16,
        color_h: u16,
    },

    #[error("ray direction must be non-zero and finite")]
    DegenerateRay,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f32 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    fn offset(self, dir: Point3, t: f32) -> Point3 {
        Point3::new(self.x + dir.x * t, self.y + dir.y * t, self.z + dir.z * t)
    }
}

impl From<[f32; 3]> for Point3 {
    fn from(a: [f32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    direction: Point3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Point3, direction: Point3) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::DegenerateRay);
        }
        Ok(Self {
            origin,
            direction: Point3::new(direction.x / n, direction.y / n, direction.z / n),
        })
    }

    /// Builds a ray from an already-normalized direction, kept bit-exact.
    /// Rejects directions whose length is not 1 within 1e-5.
    pub fn from_unit(origin: Point3, direction: Point3) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !(n.is_finite() && (n - 1.0).abs() <= 1e-5) {
            return Err(GeometryError::DegenerateRay);
        }
        Ok(Self { origin, direction })
    }

    /// Ray from the camera center through pixel `(u, v)`.
    pub fn through_pixel(intrinsics: &CameraIntrinsics, u: f32, v: f32) -> Self {
        let dir = Point3::new((u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0);
        Self::new(Point3::ORIGIN, dir).expect("pixel rays always have z = 1")
    }

    pub fn direction(&self) -> Point3 {
        self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Point3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub colors: Vec<[u8; 3]>,
    /// Pixel each vertex was deprojected from.
    pub source_pixels: Vec<(u32, u32)>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Writes the mesh as OBJ with `v x y z r g b` vertex lines (color in
    /// 0..1) and 1-based `f i j k` faces.
    pub fn write_obj(&self, mut out: impl Write) -> io::Result<()> {
        for (p, c) in self.vertices.iter().zip(&self.colors) {
            writeln!(
                out,
                "v {} {} {} {:.4} {:.4} {:.4}",
                p.x,
                p.y,
                p.z,
                f32::from(c[0]) / 255.0,
                f32::from(c[1]) / 255.0,
                f32::from(c[2]) / 255.0
            )?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

fn check_bounds(u: u32, v: u32, k: &CameraIntrinsics) -> Result<(), GeometryError> {
    if u >= u32::from(k.width) || v >= u32::from(k.height) {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(())
}

/// Pinhole back-projection of pixel `(u, v)` at `depth_mm`.
pub fn deproject(u: u32, v: u32, depth_mm: u16, intrinsics: &CameraIntrinsics) -> Result<Point3, GeometryError> {
    check_bounds(u, v, intrinsics)?;
    if depth_mm == 0 {
        return Err(GeometryError::InvalidPixel { u, v });
    }
    Ok(deproject_unchecked(u, v, depth_mm, intrinsics))
}

fn deproject_unchecked(u: u32, v: u32, depth_mm: u16, k: &CameraIntrinsics) -> Point3 {
    let z = f32::from(depth_mm) / 1000.0;
    Point3::new((u as f32 - k.cx) * z / k.fx, (v as f32 - k.cy) * z / k.fy, z)
}

/// Projects a camera-space point to continuous pixel coordinates. Returns
/// `None` for points at or behind the camera plane.
pub fn project(p: Point3, intrinsics: &CameraIntrinsics) -> Option<(f32, f32)> {
    (p.z > 0.0).then(|| (intrinsics.fx * p.x / p.z + intrinsics.cx, intrinsics.fy * p.y / p.z + intrinsics.cy))
}

fn check_pair(depth: &DepthFrame, color: &ColorFrame) -> Result<(), GeometryError> {
    if depth.width() != color.width || depth.height() != color.height {
        return Err(GeometryError::DimensionMismatch {
            depth_w: depth.width(),
            depth_h: depth.height(),
            color_w: color.width,
            color_h: color.height,
        });
    }
    Ok(())
}

/// One point per valid pixel, row-major.
pub fn to_point_cloud(depth: &DepthFrame, color: Option<&ColorFrame>) -> Result<Vec<ColoredPoint>, GeometryError> {
    if let Some(color) = color {
        check_pair(depth, color)?;
    }
    let k = depth.intrinsics;
    let width = usize::from(k.width);
    let mut cloud = Vec::with_capacity(depth.valid_count());
    for (i, &d) in depth.depth.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let (u, v) = ((i % width) as u32, (i / width) as u32);
        let rgb = color.map_or(DEFAULT_POINT_COLOR, |c| [c.pixels[3 * i], c.pixels[3 * i + 1], c.pixels[3 * i + 2]]);
        cloud.push(ColoredPoint {
            position: deproject_unchecked(u, v, d, &k),
            color: rgb,
        });
    }
    Ok(cloud)
}

/// Triangulates the depth grid, skipping any 2x2 quad that has an invalid
/// pixel or spans a depth jump larger than `discontinuity_mm`.
pub fn to_mesh(depth: &DepthFrame, color: &ColorFrame, discontinuity_mm: u16) -> Result<TriangleMesh, GeometryError> {
    check_pair(depth, color)?;
    let k = depth.intrinsics;
    let (w, h) = (usize::from(k.width), usize::from(k.height));
    let mut mesh = TriangleMesh::default();
    let mut vertex_of = vec![u32::MAX; w * h];

    let mut vertex = |mesh: &mut TriangleMesh, i: usize| -> u32 {
        if vertex_of[i] == u32::MAX {
            let (u, v) = ((i % w) as u32, (i / w) as u32);
            vertex_of[i] = mesh.vertices.len() as u32;
            mesh.vertices.push(deproject_unchecked(u, v, depth.depth[i], &k));
            mesh.colors.push([color.pixels[3 * i], color.pixels[3 * i + 1], color.pixels[3 * i + 2]]);
            mesh.source_pixels.push((u, v));
        }
        vertex_of[i]
    };

    for y in 0..h.saturating_sub(1) {
        for x in 0..w - 1 {
            let tl = y * w + x;
            let (tr, bl, br) = (tl + 1, tl + w, tl + w + 1);
            let quad = [depth.depth[tl], depth.depth[tr], depth.depth[bl], depth.depth[br]];
            if quad.contains(&0) {
                continue;
            }
            let lo = *quad.iter().min().unwrap();
            let hi = *quad.iter().max().unwrap();
            if hi - lo > discontinuity_mm {
                continue;
            }
            let (a, b, c, d) = (vertex(&mut mesh, tl), vertex(&mut mesh, bl), vertex(&mut mesh, tr), vertex(&mut mesh, br));
            mesh.triangles.push([a, b, c]);
            mesh.triangles.push([c, b, d]);
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaycastParams {
    pub step_mm: f32,
    pub hit_tolerance_mm: f32,
    pub max_range_m: f32,
}

impl Default for RaycastParams {
    fn default() -> Self {
        Self {
            step_mm: 5.0,
            hit_tolerance_mm: 15.0,
            max_range_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Deprojected surface point of `pixel`.
    pub point: Point3,
    pub pixel: (u32, u32),
}

/// Marches `ray` through the depth map and returns the first surface hit.
pub fn raycast(depth: &DepthFrame, ray: &Ray, params: &RaycastParams) -> Option<RayHit> {
    let k = depth.intrinsics;
    let step_m = params.step_mm / 1000.0;
    if step_m.is_nan() || step_m <= 0.0 {
        return None;
    }
    let steps = (params.max_range_m / step_m).floor() as u64;
    for i in 0..=steps {
        let sample = ray.origin.offset(ray.direction, i as f32 * step_m);
        let Some((pu, pv)) = project(sample, &k) else {
            continue;
        };
        let (u, v) = (pu.round(), pv.round());
        if u < 0.0 || v < 0.0 || u >= f32::from(k.width) || v >= f32::from(k.height) {
            continue;
        }
        let (u, v) = (u as u32, v as u32);
        let d = depth.at(u, v);
        if d != 0 && sample.z * 1000.0 >= f32::from(d) - params.hit_tolerance_mm {
            return Some(RayHit {
                point: deproject_unchecked(u, v, d, &k),
                pixel: (u, v),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::frame::{CirclePath, SyntheticSceneConfig, SyntheticSource};

    fn k(w: u16, h: u16) -> CameraIntrinsics {
        CameraIntrinsics::nominal(w, h)
    }

    fn constant(w: u16, h: u16, d: u16) -> (DepthFrame, ColorFrame) {
        let depth = DepthFrame::filled(0, 0, k(w, h), d);
        let n = usize::from(w) * usize::from(h);
        let color = ColorFrame::new(0, 0, w, h, vec![200; 3 * n]).unwrap();
        (depth, color)
    }

    #[test]
    fn deproject_examples() {
        let kk = k(640, 576);
        assert_eq!(deproject(320, 288, 1500, &kk).unwrap(), Point3::new(0.0, 0.0, 1.5));
        let unit = CameraIntrinsics::new(500.0, 500.0, 0.0, 0.0, 1000, 10).unwrap();
        assert_eq!(deproject(500, 0, 1000, &unit).unwrap(), Point3::new(1.0, 0.0, 1.0));
        assert_eq!(deproject(3, 4, 0, &kk), Err(GeometryError::InvalidPixel { u: 3, v: 4 }));
        assert!(matches!(deproject(640, 0, 10, &kk), Err(GeometryError::OutOfBounds { .. })));
    }

    #[test]
    fn depth_survives_meter_conversion() {
        for d in 1..=u16::MAX {
            let z = f32::from(d) / 1000.0;
            assert_eq!((z * 1000.0).round() as u16, d);
            assert!((z * 1000.0 - f32::from(d)).abs() < 0.01, "depth {d}");
        }
    }

    #[test]
    fn point_cloud_counts_valid_pixels() {
        let mut depth = DepthFrame::filled(0, 0, k(7, 5), 900);
        for i in [0, 3, 9, 34] {
            depth.depth[i] = 0;
        }
        let mut scanned = 0;
        for v in 0..5 {
            for u in 0..7 {
                if depth.at(u, v) != 0 {
                    scanned += 1;
                }
            }
        }
        let cloud = to_point_cloud(&depth, None).unwrap();
        assert_eq!(cloud.len(), scanned);
        assert!(cloud.iter().all(|p| p.color == DEFAULT_POINT_COLOR));
        let empty = DepthFrame::filled(0, 0, k(7, 5), 0);
        assert!(to_point_cloud(&empty, None).unwrap().is_empty());
    }

    #[test]
    fn point_cloud_of_plane_is_flat_and_colored() {
        let pair = SyntheticSource::new(SyntheticSceneConfig {
            width: 40,
            height: 30,
            noise_amplitude_mm: 0,
            sphere_center_path: CirclePath::fixed([0.0, 0.0, -1000.0]),
            ..SyntheticSceneConfig::default()
        })
        .unwrap()
        .next()
        .unwrap()
        .unwrap();
        let cloud = to_point_cloud(&pair.depth, Some(&pair.color)).unwrap();
        assert_eq!(cloud.len(), 1200);
        assert!(cloud.iter().all(|p| p.position.z == 2.0 && p.color == [128, 128, 128]));
        let wrong = ColorFrame::new(0, 0, 4, 4, vec![0; 48]).unwrap();
        assert!(matches!(
            to_point_cloud(&pair.depth, Some(&wrong)),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn smallest_quad_gives_two_triangles() {
        let (d, c) = constant(2, 2, 1000);
        let mesh = to_mesh(&d, &c, DEFAULT_DISCONTINUITY_MM).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [2, 1, 3]]);
        // TL, BL, TR, BR in creation order.
        assert_eq!(mesh.source_pixels, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn triangle_count_matches_brute_force() {
        let (d, c) = constant(4, 3, 1000);
        let mesh = to_mesh(&d, &c, 50).unwrap();
        assert_eq!(mesh.triangles.len(), 2 * (4 - 1) * (3 - 1));
        assert_eq!(mesh.vertices.len(), 12);

        // Irregular frame: count qualifying quads independently.
        let (mut d, c) = constant(9, 7, 1000);
        for (i, px) in d.depth.iter_mut().enumerate() {
            *px = match (i * 37) % 11 {
                0 => 0,
                1 => 1100,
                k => 1000 + k as u16 * 3,
            };
        }
        let px = |x: usize, y: usize| i32::from(d.depth[y * 9 + x]);
        let mut quads = 0;
        for y in 0..6 {
            for x in 0..8 {
                let q = [px(x, y), px(x + 1, y), px(x, y + 1), px(x + 1, y + 1)];
                let ok = q.iter().all(|&v| v != 0)
                    && q.iter().all(|&a| q.iter().all(|&b| (a - b).abs() <= 50));
                quads += usize::from(ok);
            }
        }
        assert!(quads > 0);
        assert_eq!(to_mesh(&d, &c, 50).unwrap().triangles.len(), 2 * quads);
    }

    #[test]
    fn discontinuity_and_holes_are_culled() {
        let (mut d, c) = constant(3, 2, 1000);
        // Left quad spans a 51 mm jump; right quad has a 50 mm one.
        d.depth[0] = 1051;
        d.depth[2] = 1050;
        let mesh = to_mesh(&d, &c, 50).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        assert!(mesh.source_pixels.iter().all(|&(u, _)| u >= 1));

        let (mut d, c) = constant(3, 3, 1000);
        d.depth[4] = 0;
        assert!(to_mesh(&d, &c, 50).unwrap().triangles.is_empty());
    }

    #[test]
    fn mesh_vertices_are_deprojected_pixels() {
        let mut pair = SyntheticSource::new(SyntheticSceneConfig {
            width: 48,
            height: 36,
            noise_amplitude_mm: 3,
            ..SyntheticSceneConfig::default()
        })
        .unwrap();
        let pair = pair.next().unwrap().unwrap();
        let mesh = to_mesh(&pair.depth, &pair.color, 50).unwrap();
        assert!(!mesh.triangles.is_empty());
        for (p, &(u, v)) in mesh.vertices.iter().zip(&mesh.source_pixels) {
            assert_eq!(*p, deproject(u, v, pair.depth.at(u, v), &pair.depth.intrinsics).unwrap());
        }
        let n = mesh.vertices.len() as u32;
        for t in &mesh.triangles {
            assert!(t.iter().all(|&i| i < n));
            assert!(t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
        }
    }

    #[test]
    fn obj_export() {
        let (d, c) = constant(2, 2, 1000);
        let mesh = to_mesh(&d, &c, 50).unwrap();
        let mut out = Vec::new();
        mesh.write_obj(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("v ") && lines[0].ends_with("0.7843 0.7843 0.7843"));
        assert_eq!(lines[4], "f 1 2 3");
        assert_eq!(lines[5], "f 3 2 4");
    }

    #[test]
    fn principal_ray_hits_plane() {
        let depth = DepthFrame::filled(0, 0, k(640, 576), 2000);
        let ray = Ray::new(Point3::ORIGIN, Point3::new(0.0, 0.0, 1.0)).unwrap();
        let hit = raycast(&depth, &ray, &RaycastParams::default()).unwrap();
        assert_eq!(hit.pixel, (320, 288));
        assert_eq!(hit.point, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn ray_away_from_frustum_misses() {
        let depth = DepthFrame::filled(0, 0, k(64, 48), 2000);
        for dir in [Point3::new(0.0, 0.0, -1.0), Point3::new(1.0, 0.0, 0.01), Point3::new(0.0, -1.0, 0.0)] {
            let ray = Ray::new(Point3::ORIGIN, dir).unwrap();
            assert_eq!(raycast(&depth, &ray, &RaycastParams::default()), None);
        }
        // Surface beyond max range.
        let far = DepthFrame::filled(0, 0, k(64, 48), 12_000);
        let ray = Ray::new(Point3::ORIGIN, Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(raycast(&far, &ray, &RaycastParams::default()), None);
    }

    #[test]
    fn ray_hits_sphere_front() {
        let (d, r) = (1500.0f32, 150.0f32);
        let pair = SyntheticSource::new(SyntheticSceneConfig {
            width: 160,
            height: 144,
            noise_amplitude_mm: 0,
            sphere_radius_mm: r,
            sphere_center_path: CirclePath::fixed([0.0, 0.0, d]),
            ..SyntheticSceneConfig::default()
        })
        .unwrap()
        .next()
        .unwrap()
        .unwrap();
        let params = RaycastParams::default();
        let ray = Ray::new(Point3::ORIGIN, Point3::new(0.0, 0.0, 1.0)).unwrap();
        let hit = raycast(&pair.depth, &ray, &params).unwrap();
        let expected = (d - r) / 1000.0;
        let bound = (params.step_mm + params.hit_tolerance_mm) / 1000.0;
        assert!((hit.point.z - expected).abs() <= bound, "{} vs {}", hit.point.z, expected);
        assert_eq!(hit.point.z * 1000.0, f32::from(pair.depth.at(hit.pixel.0, hit.pixel.1)));
    }

    #[test]
    fn ray_normalizes_direction() {
        let ray = Ray::new(Point3::ORIGIN, Point3::new(3.0, 4.0, 12.0)).unwrap();
        assert!((ray.direction().norm() - 1.0).abs() <= 1e-6);
        assert_eq!(Ray::new(Point3::ORIGIN, Point3::ORIGIN), Err(GeometryError::DegenerateRay));
        let kk = k(640, 576);
        let through = Ray::through_pixel(&kk, 100.0, 50.0);
        let (u, v) = project(through.origin.offset(through.direction(), 2.0), &kk).unwrap();
        assert!((u - 100.0).abs() < 1e-3 && (v - 50.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn project_inverts_deproject(u in 0u32..640, v in 0u32..576, d in 1u16..=u16::MAX) {
            let kk = k(640, 576);
            let p = deproject(u, v, d, &kk).unwrap();
            let (pu, pv) = project(p, &kk).unwrap();
            prop_assert!((pu - u as f32).abs() <= 0.5 && (pv - v as f32).abs() <= 0.5);
        }

        #[test]
        fn raycast_hits_lie_on_surface(seed in any::<u64>(), u in 0f32..63.0, v in 0f32..47.0) {
            let pair = SyntheticSource::new(SyntheticSceneConfig {
                width: 64,
                height: 48,
                noise_amplitude_mm: 20,
                seed,
                ..SyntheticSceneConfig::default()
            }).unwrap().next().unwrap().unwrap();
            let ray = Ray::through_pixel(&pair.depth.intrinsics, u, v);
            if let Some(hit) = raycast(&pair.depth, &ray, &RaycastParams::default()) {
                prop_assert_eq!((hit.point.z * 1000.0).round() as u16, pair.depth.at(hit.pixel.0, hit.pixel.1));
            }
        }
    }
}
