//! Synthetic images and scenes with known geometry.
//!
//! These generators produce inputs whose ground truth is known by
//! construction: anti-aliased line drawings, bundles of segments through a
//! chosen vanishing point, and perspective projections of box and corridor
//! wireframes under known intrinsics.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::geometry::{clip_segment, CameraIntrinsics, HomogeneousPoint, LineSegment, Point2};
use crate::math;
use crate::raster::ScalarField;

/// Smooth random image: a few random plane waves around mid-grey.
pub fn smooth_random_field<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> ScalarField {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let amp = rng.random_range(0.05..0.15);
            let freq = rng.random_range(0.25..0.9);
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            (amp, freq * math::cos(angle), freq * math::sin(angle), phase)
        })
        .collect();
    ScalarField::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + waves.iter().map(|(a, fx, fy, p)| a * math::sin(fx * x + fy * y + p)).sum::<f64>()
    })
}

/// Draws white anti-aliased lines of the given width on black. Intensity
/// falls off linearly over one pixel at the line border.
pub fn render_lines(width: usize, height: usize, segments: &[LineSegment], line_width: f64) -> ScalarField {
    let mut img = ScalarField::zeros(width, height);
    let half = 0.5 * line_width;
    let reach = half + 1.0;
    for seg in segments {
        let (p0, p1) = (seg.p0(), seg.p1());
        let xmin = math::floor(p0.x.min(p1.x) - reach).max(0.0);
        let ymin = math::floor(p0.y.min(p1.y) - reach).max(0.0);
        let xmax = math::ceil(p0.x.max(p1.x) + reach).min(width as f64 - 1.0);
        let ymax = math::ceil(p0.y.max(p1.y) + reach).min(height as f64 - 1.0);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        for y in ymin as usize..=ymax as usize {
            for x in xmin as usize..=xmax as usize {
                let d = seg.distance_to_point(Point2::new(x as f64, y as f64));
                let v = (half + 0.5 - d).clamp(0.0, 1.0);
                if v > img.get(x, y) {
                    img.set(x, y, v);
                }
            }
        }
    }
    img
}

/// Segments whose infinite lines pass exactly through `vp`, with midpoints
/// drawn uniformly inside `[margin, width − margin] × [margin, height − margin]`.
pub fn segments_through<R: Rng + ?Sized>(
    vp: &HomogeneousPoint,
    count: usize,
    width: f64,
    height: f64,
    length: (f64, f64),
    rng: &mut R,
) -> Vec<LineSegment> {
    let margin = 0.1 * width.min(height);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = Point2::new(rng.random_range(margin..width - margin), rng.random_range(margin..height - margin));
        let (dx, dy) = match vp.to_point() {
            Some(p) => (p.x - m.x, p.y - m.y),
            None => (vp.x(), vp.y()),
        };
        let n = math::hypot(dx, dy);
        let len = rng.random_range(length.0..length.1);
        if n < 1e-9 || (!vp.is_at_infinity() && n < len) {
            continue;
        }
        let (ux, uy) = (dx / n * 0.5 * len, dy / n * 0.5 * len);
        if let Ok(s) = LineSegment::from_coords(m.x - ux, m.y - uy, m.x + ux, m.y + uy) {
            out.push(s);
        }
    }
    out
}

/// Standard-normal sample via Box-Muller.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Moves both endpoints by independent isotropic Gaussian noise.
pub fn jitter_segment<R: Rng + ?Sized>(seg: &LineSegment, sigma: f64, rng: &mut R) -> LineSegment {
    let (p0, p1) = (seg.p0(), seg.p1());
    LineSegment::from_coords(
        p0.x + sigma * gaussian(rng),
        p0.y + sigma * gaussian(rng),
        p1.x + sigma * gaussian(rng),
        p1.y + sigma * gaussian(rng),
    )
    .unwrap_or(*seg)
}

type Vec3 = [f64; 3];

fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation about the camera's vertical axis (yaw) followed by a tilt
/// about its horizontal axis (pitch). Camera frame: x right, y down, z forward.
fn camera_rotation(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = (math::sin(yaw), math::cos(yaw));
    let (sp, cp) = (math::sin(pitch), math::cos(pitch));
    let r_yaw = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let r_pitch = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    mat_mul(&r_pitch, &r_yaw)
}

fn project(k: &CameraIntrinsics, p: Vec3) -> Point2 {
    Point2::new(k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy)
}

fn vanishing_point(k: &CameraIntrinsics, d: Vec3) -> Result<HomogeneousPoint> {
    HomogeneousPoint::new(k.fx * d[0] + k.cx * d[2], k.fy * d[1] + k.cy * d[2], d[2])
}

/// A rendered scene together with its generating geometry.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: ScalarField,
    pub intrinsics: CameraIntrinsics,
    /// Vanishing point of every 3D direction family present in the scene.
    pub vps: Vec<HomogeneousPoint>,
    /// Projected, image-clipped segments, tagged with the index of their VP.
    pub segments: Vec<(LineSegment, usize)>,
    /// The VP used as the evaluation target.
    pub target: HomogeneousPoint,
}

#[allow(clippy::too_many_arguments)]
fn add_projected(
    k: &CameraIntrinsics,
    rot: &[[f64; 3]; 3],
    a: Vec3,
    b: Vec3,
    family: usize,
    size: (usize, usize),
    min_len: f64,
    out: &mut Vec<(LineSegment, usize)>,
) {
    let (ca, cb) = (mat_vec(rot, a), mat_vec(rot, b));
    if ca[2] <= 0.1 || cb[2] <= 0.1 {
        return;
    }
    let Ok(seg) = LineSegment::new(project(k, ca), project(k, cb)) else {
        return;
    };
    let (w, h) = (size.0 as f64 - 1.0, size.1 as f64 - 1.0);
    if let Some(c) = clip_segment(&seg, 2.0, 2.0, w - 2.0, h - 2.0) {
        if c.length() >= min_len {
            out.push((c, family));
        }
    }
}

/// Wireframe of a building-like box with façade lines, seen from a camera
/// with random yaw (25°–65°) and pitch (±8°) under default intrinsics. The
/// box edges and façade lines fall into three direction families; the
/// target is the VP of the family running along the box's width.
pub fn box_scene<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Result<SyntheticScene> {
    let k = CameraIntrinsics::default_for_image(width, height);
    let yaw = rng.random_range(25.0_f64..65.0).to_radians() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let pitch = rng.random_range(-8.0_f64..8.0).to_radians();
    let rot = camera_rotation(yaw, pitch);
    let dirs: [Vec3; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let vps = dirs
        .iter()
        .map(|d| vanishing_point(&k, mat_vec(&rot, *d)))
        .collect::<Result<Vec<_>>>()?;

    // World box in front of the camera, placed along the rotated optical axis.
    let depth = rng.random_range(9.0..12.0);
    let forward = [math::sin(-yaw), 0.0, math::cos(yaw)];
    let centre = [forward[0] * depth, rng.random_range(-0.5..0.5), forward[2] * depth];
    let (hx, hy, hz) = (rng.random_range(2.5..3.5), rng.random_range(2.5..3.5), rng.random_range(2.5..3.5));
    let (x0, x1) = (centre[0] - hx, centre[0] + hx);
    let (y0, y1) = (centre[1] - hy, centre[1] + hy);
    let (z0, z1) = (centre[2] - hz, centre[2] + hz);
    let min_len = 0.06 * width.min(height) as f64;
    let size = (width, height);
    let levels = 5;
    let mut segments = Vec::new();
    for i in 0..=levels {
        let t = i as f64 / levels as f64;
        let y = y0 + t * (y1 - y0);
        // Lines along x on the two faces z = z0, z1.
        for z in [z0, z1] {
            add_projected(&k, &rot, [x0, y, z], [x1, y, z], 0, size, min_len, &mut segments);
        }
        // Lines along z on the two faces x = x0, x1.
        for x in [x0, x1] {
            add_projected(&k, &rot, [x, y, z0], [x, y, z1], 2, size, min_len, &mut segments);
        }
        // Vertical lines spread across the faces.
        let x = x0 + t * (x1 - x0);
        let z = z0 + t * (z1 - z0);
        add_projected(&k, &rot, [x, y0, z0], [x, y1, z0], 1, size, min_len, &mut segments);
        add_projected(&k, &rot, [x0, y0, z], [x0, y1, z], 1, size, min_len, &mut segments);
    }
    let lines: Vec<LineSegment> = segments.iter().map(|(s, _)| *s).collect();
    let image = render_lines(width, height, &lines, 1.5);
    Ok(SyntheticScene { image, intrinsics: k, target: vps[0], vps, segments })
}

/// Corridor of lines parallel to the optical axis (rotated slightly),
/// converging at a single vanishing point inside the image.
pub fn corridor_scene<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Result<SyntheticScene> {
    let k = CameraIntrinsics::default_for_image(width, height);
    let yaw = rng.random_range(-10.0_f64..10.0).to_radians();
    let pitch = rng.random_range(-6.0_f64..6.0).to_radians();
    let rot = camera_rotation(yaw, pitch);
    let axis = [0.0, 0.0, 1.0];
    let vp = vanishing_point(&k, mat_vec(&rot, axis))?;
    let min_len = 0.06 * width.min(height) as f64;
    let mut segments = Vec::new();
    for &(x, y) in &[
        (-2.0, -1.5),
        (2.0, -1.5),
        (-2.0, 1.5),
        (2.0, 1.5),
        (-2.0, 0.0),
        (2.0, 0.0),
        (0.0, -1.5),
        (0.0, 1.5),
        (-1.0, 1.5),
        (1.0, 1.5),
        (-1.0, -1.5),
        (1.0, -1.5),
    ] {
        let jx = x + rng.random_range(-0.1..0.1);
        let jy = y + rng.random_range(-0.1..0.1);
        add_projected(&k, &rot, [jx, jy, 2.0], [jx, jy, 12.0], 0, (width, height), min_len, &mut segments);
    }
    let lines: Vec<LineSegment> = segments.iter().map(|(s, _)| *s).collect();
    let image = render_lines(width, height, &lines, 1.5);
    Ok(SyntheticScene { image, intrinsics: k, vps: alloc::vec![vp], target: vp, segments })
}
