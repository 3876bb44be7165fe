//! Projective 2D primitives and pinhole back-projection.
//!
//! Pixel centers sit at integer coordinates: column `c`, row `r` is the
//! point `(c, r)`. Vanishing points are homogeneous so that families of
//! image-parallel lines (`w = 0`) are representable.

use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Minimum length of a valid segment, in pixels.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;
const DEGENERATE_NORM: f64 = 1e-9;

/// A point in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: Point2) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn midpoint(&self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// A point of the projective plane. `w = 0` encodes a point at infinity,
/// i.e. the common direction of a family of parallel image lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct HomogeneousPoint {
    x: f64,
    y: f64,
    w: f64,
}

impl HomogeneousPoint {
    pub fn new(x: f64, y: f64, w: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite()) {
            return Err(Error::InvalidGeometry("homogeneous point has non-finite component"));
        }
        if x == 0.0 && y == 0.0 && w == 0.0 {
            return Err(Error::InvalidGeometry("homogeneous point is the zero vector"));
        }
        Ok(Self { x, y, w })
    }

    /// Finite point `(x, y, 1)`.
    pub fn finite(x: f64, y: f64) -> Result<Self> {
        Self::new(x, y, 1.0)
    }

    /// Point at infinity in direction `(dx, dy)`.
    pub fn at_infinity(dx: f64, dy: f64) -> Result<Self> {
        Self::new(dx, dy, 0.0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.w]
    }

    pub fn is_at_infinity(&self) -> bool {
        self.w == 0.0
    }

    /// Unit-norm representative with the first nonzero component positive.
    pub fn normalized(&self) -> Self {
        let n = math::sqrt(self.x * self.x + self.y * self.y + self.w * self.w);
        let (mut x, mut y, mut w) = (self.x / n, self.y / n, self.w / n);
        let first = if x != 0.0 {
            x
        } else if y != 0.0 {
            y
        } else {
            w
        };
        if first < 0.0 {
            x = -x;
            y = -y;
            w = -w;
        }
        Self { x, y, w }
    }

    /// Euclidean pixel position, or `None` for points at infinity.
    pub fn to_point(&self) -> Option<Point2> {
        if self.w == 0.0 {
            None
        } else {
            Some(Point2::new(self.x / self.w, self.y / self.w))
        }
    }
}

impl TryFrom<[f64; 3]> for HomogeneousPoint {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        HomogeneousPoint::new(v[0], v[1], v[2])
    }
}

impl From<HomogeneousPoint> for [f64; 3] {
    fn from(p: HomogeneousPoint) -> Self {
        p.to_array()
    }
}

impl From<Point2> for HomogeneousPoint {
    fn from(p: Point2) -> Self {
        Self { x: p.x, y: p.y, w: 1.0 }
    }
}

/// Unit direction in the image plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct UnitVector2 {
    pub dx: f64,
    pub dy: f64,
}

impl UnitVector2 {
    /// Normalizes `(dx, dy)`; fails when its norm is below `1e-9`.
    pub fn try_new(dx: f64, dy: f64) -> Result<Self> {
        let n = math::hypot(dx, dy);
        if !(n >= DEGENERATE_NORM) || !n.is_finite() {
            return Err(Error::DegenerateDirection);
        }
        Ok(Self { dx: dx / n, dy: dy / n })
    }

    pub fn dot(&self, other: UnitVector2) -> f64 {
        self.dx * other.dx + self.dy * other.dy
    }

    pub fn neg(&self) -> Self {
        Self { dx: -self.dx, dy: -self.dy }
    }
}

impl From<[f64; 2]> for UnitVector2 {
    fn from(v: [f64; 2]) -> Self {
        Self { dx: v[0], dy: v[1] }
    }
}

impl From<UnitVector2> for [f64; 2] {
    fn from(v: UnitVector2) -> Self {
        [v.dx, v.dy]
    }
}

/// Directed segment between two distinct points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment", into = "RawSegment")]
pub struct LineSegment {
    p0: Point2,
    p1: Point2,
}

#[derive(Serialize, Deserialize)]
struct RawSegment {
    p0: Point2,
    p1: Point2,
}

impl TryFrom<RawSegment> for LineSegment {
    type Error = Error;

    fn try_from(raw: RawSegment) -> Result<Self> {
        LineSegment::new(raw.p0, raw.p1)
    }
}

impl From<LineSegment> for RawSegment {
    fn from(s: LineSegment) -> Self {
        RawSegment { p0: s.p0, p1: s.p1 }
    }
}

impl LineSegment {
    pub fn new(p0: Point2, p1: Point2) -> Result<Self> {
        if !p0.is_finite() || !p1.is_finite() {
            return Err(Error::InvalidGeometry("segment endpoint is not finite"));
        }
        if p0.distance(p1) < MIN_SEGMENT_LENGTH {
            return Err(Error::InvalidGeometry("segment endpoints coincide"));
        }
        Ok(Self { p0, p1 })
    }

    pub fn from_coords(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(Point2::new(x0, y0), Point2::new(x1, y1))
    }

    pub fn p0(&self) -> Point2 {
        self.p0
    }

    pub fn p1(&self) -> Point2 {
        self.p1
    }

    pub fn length(&self) -> f64 {
        self.p0.distance(self.p1)
    }

    pub fn midpoint(&self) -> Point2 {
        self.p0.midpoint(self.p1)
    }

    pub fn reversed(&self) -> Self {
        Self { p0: self.p1, p1: self.p0 }
    }

    pub fn direction(&self) -> UnitVector2 {
        // Valid segments are longer than the degenerate-norm threshold.
        UnitVector2::try_new(self.p1.x - self.p0.x, self.p1.y - self.p0.y)
            .unwrap_or(UnitVector2 { dx: 1.0, dy: 0.0 })
    }

    /// Coefficients `(a, b, c)` of the infinite line `a·x + b·y + c = 0`,
    /// scaled so that `a² + b² = 1`.
    pub fn line_coefficients(&self) -> [f64; 3] {
        let d = self.direction();
        let (a, b) = (-d.dy, d.dx);
        [a, b, -(a * self.p0.x + b * self.p0.y)]
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let (vx, vy) = (self.p1.x - self.p0.x, self.p1.y - self.p0.y);
        let (wx, wy) = (p.x - self.p0.x, p.y - self.p0.y);
        let len2 = vx * vx + vy * vy;
        let t = ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0);
        math::hypot(wx - t * vx, wy - t * vy)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidConfig("focal lengths must be positive and finite"));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidConfig("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// `f = max(width, height)` with the principal point at the image center.
    pub fn default_for_image(width: usize, height: usize) -> Self {
        let f = width.max(height).max(1) as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Unit vector pointing from `pixel` toward `vp`. For a point at infinity
/// the result is the VP direction itself, independent of the pixel.
pub fn vp_direction_at(vp: &HomogeneousPoint, pixel: Point2) -> Result<UnitVector2> {
    if vp.w == 0.0 {
        return UnitVector2::try_new(vp.x, vp.y);
    }
    let dx = vp.x / vp.w - pixel.x;
    let dy = vp.y / vp.w - pixel.y;
    UnitVector2::try_new(dx, dy)
}

/// Angle between two undirected directions, in `[0, π/2]`.
///
/// Evaluated as `atan2(|a × b|, |a · b|)`, which equals `acos(|a · b|)` but
/// keeps full precision near 0.
pub fn undirected_angle(a: UnitVector2, b: UnitVector2) -> f64 {
    let cos = libm::fabs(a.dot(b));
    let sin = libm::fabs(a.dx * b.dy - a.dy * b.dx);
    math::atan2(sin, cos).clamp(0.0, FRAC_PI_2)
}

/// Angle between the segment and the direction toward `vp` seen from the
/// segment midpoint.
pub fn segment_vp_deviation(seg: &LineSegment, vp: &HomogeneousPoint) -> Result<f64> {
    let to_vp = vp_direction_at(vp, seg.midpoint())?;
    Ok(undirected_angle(seg.direction(), to_vp))
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    math::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
}

/// Intersection of the infinite lines through two segments. Parallel lines
/// meet at infinity (`w = 0`).
pub fn intersect_lines(a: &LineSegment, b: &LineSegment) -> Result<HomogeneousPoint> {
    let la = a.line_coefficients();
    let lb = b.line_coefficients();
    let la = scale3(la, 1.0 / norm3(la));
    let lb = scale3(lb, 1.0 / norm3(lb));
    let mut p = cross3(la, lb);
    let n = norm3(p);
    if n < 1e-9 {
        return Err(Error::IdenticalLines);
    }
    if libm::fabs(p[2]) <= 1e-12 * n {
        p[2] = 0.0;
    }
    HomogeneousPoint::new(p[0], p[1], p[2])
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Camera-frame unit direction of the 3D line family whose image vanishes
/// at `vp`. Sign is canonical: `z ≥ 0`, then `y ≥ 0`, then `x ≥ 0`.
pub fn backproject_direction(k: &CameraIntrinsics, vp: &HomogeneousPoint) -> [f64; 3] {
    // K⁻¹·(x, y, w) without dividing by w, so points at infinity need no branch.
    let mut d = [
        (vp.x - k.cx * vp.w) / k.fx,
        (vp.y - k.cy * vp.w) / k.fy,
        vp.w,
    ];
    let n = norm3(d);
    d = scale3(d, 1.0 / n);
    let flip = if d[2] != 0.0 {
        d[2] < 0.0
    } else if d[1] != 0.0 {
        d[1] < 0.0
    } else {
        d[0] < 0.0
    };
    if flip {
        d = scale3(d, -1.0);
    }
    d
}

/// Angle between the camera-space directions of two vanishing points,
/// in `[0, π/2]`.
pub fn camera_angle_error(k: &CameraIntrinsics, a: &HomogeneousPoint, b: &HomogeneousPoint) -> f64 {
    let da = backproject_direction(k, a);
    let db = backproject_direction(k, b);
    let cos = libm::fabs(da[0] * db[0] + da[1] * db[1] + da[2] * db[2]);
    let sin = norm3(cross3(da, db));
    math::atan2(sin, cos).clamp(0.0, FRAC_PI_2)
}

/// Liang-Barsky clip of a segment against the axis-aligned box
/// `[xmin, xmax] × [ymin, ymax]`. Returns `None` if nothing (or only a
/// degenerate sliver) remains.
pub fn clip_segment(seg: &LineSegment, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Option<LineSegment> {
    let (x0, y0) = (seg.p0.x, seg.p0.y);
    let (dx, dy) = (seg.p1.x - x0, seg.p1.y - y0);
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (p, q) in [(-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    LineSegment::from_coords(x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_4, PI};
    use proptest::prelude::*;

    fn hp(x: f64, y: f64, w: f64) -> HomogeneousPoint {
        HomogeneousPoint::new(x, y, w).unwrap()
    }

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> LineSegment {
        LineSegment::from_coords(x0, y0, x1, y1).unwrap()
    }

    fn unit(theta: f64) -> UnitVector2 {
        UnitVector2 { dx: math::cos(theta), dy: math::sin(theta) }
    }

    #[test]
    fn vp_direction_examples() {
        let d = vp_direction_at(&hp(3.0, 4.0, 1.0), Point2::new(0.0, 0.0)).unwrap();
        assert!((d.dx - 0.6).abs() < 1e-15 && (d.dy - 0.8).abs() < 1e-15);
        let d = vp_direction_at(&hp(1.0, 0.0, 0.0), Point2::new(57.0, -12.0)).unwrap();
        assert_eq!((d.dx, d.dy), (1.0, 0.0));
        assert_eq!(
            vp_direction_at(&hp(5.0, 5.0, 1.0), Point2::new(5.0, 5.0)),
            Err(Error::DegenerateDirection)
        );
    }

    #[test]
    fn negative_w_still_points_toward_the_vp() {
        let d = vp_direction_at(&hp(-3.0, -4.0, -1.0), Point2::new(0.0, 0.0)).unwrap();
        assert!((d.dx - 0.6).abs() < 1e-15 && (d.dy - 0.8).abs() < 1e-15);
    }

    #[test]
    fn undirected_angle_examples() {
        let e = UnitVector2 { dx: 1.0, dy: 0.0 };
        assert!((undirected_angle(e, UnitVector2 { dx: 0.0, dy: 1.0 }) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(undirected_angle(e, e.neg()), 0.0);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((undirected_angle(e, UnitVector2 { dx: h, dy: h }) - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn undirected_angle_symmetry_over_sampled_angles() {
        for i in 0..360 {
            let a = unit(i as f64 * PI / 180.0);
            for j in (0..360).step_by(7) {
                let b = unit(j as f64 * PI / 180.0 + 0.3);
                let ab = undirected_angle(a, b);
                assert_eq!(ab, undirected_angle(b, a));
                assert!((ab - undirected_angle(a.neg(), b)).abs() < 1e-12);
                assert!((0.0..=FRAC_PI_2).contains(&ab));
            }
        }
    }

    #[test]
    fn segment_deviation_examples() {
        assert_eq!(segment_vp_deviation(&seg(0.0, 0.0, 10.0, 0.0), &hp(100.0, 0.0, 1.0)).unwrap(), 0.0);
        let d = segment_vp_deviation(&seg(0.0, 0.0, 0.0, 10.0), &hp(100.0, 5.0, 1.0)).unwrap();
        assert!((d - FRAC_PI_2).abs() < 1e-12);
        let d = segment_vp_deviation(&seg(0.0, 0.0, 10.0, 10.0), &hp(1.0, 0.0, 0.0)).unwrap();
        assert!((d - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn intersection_examples() {
        // Hand oracle: y = 0 and y = x + 1 meet at x = -1.
        let p = intersect_lines(&seg(0.0, 0.0, 1.0, 0.0), &seg(0.0, 1.0, 1.0, 2.0)).unwrap();
        let e = p.to_point().unwrap();
        assert!((e.x + 1.0).abs() < 1e-12 && e.y.abs() < 1e-12);

        let p = intersect_lines(&seg(0.0, 0.0, 1.0, 0.0), &seg(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!(p.is_at_infinity());
        let n = p.normalized();
        assert!((n.x() - 1.0).abs() < 1e-12 && n.y().abs() < 1e-12);

        // y = x meets y = 2 - x at (1, 1).
        let p = intersect_lines(&seg(0.0, 0.0, 1.0, 1.0), &seg(0.0, 2.0, 2.0, 0.0)).unwrap();
        let e = p.to_point().unwrap();
        assert!((e.x - 1.0).abs() < 1e-12 && (e.y - 1.0).abs() < 1e-12);

        assert_eq!(
            intersect_lines(&seg(0.0, 0.0, 1.0, 1.0), &seg(2.0, 2.0, 5.0, 5.0)),
            Err(Error::IdenticalLines)
        );
    }

    #[test]
    fn normalized_has_canonical_sign() {
        let n = hp(-2.0, 0.0, 2.0).normalized();
        assert!(n.x() > 0.0);
        assert!((n.x() * n.x() + n.y() * n.y() + n.w() * n.w() - 1.0).abs() < 1e-15);
        let e = n.to_point().unwrap();
        assert!((e.x + 1.0).abs() < 1e-15);
    }

    #[test]
    fn backprojection_examples() {
        let f = 500.0;
        let k = CameraIntrinsics::new(f, f, 320.0, 240.0).unwrap();
        assert_eq!(backproject_direction(&k, &hp(320.0, 240.0, 1.0)), [0.0, 0.0, 1.0]);
        let k0 = CameraIntrinsics::new(f, f, 0.0, 0.0).unwrap();
        let d = backproject_direction(&k0, &hp(f, 0.0, 1.0));
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((d[0] - h).abs() < 1e-15 && d[1] == 0.0 && (d[2] - h).abs() < 1e-15);
        assert_eq!(backproject_direction(&k, &hp(1.0, 0.0, 0.0)), [1.0, 0.0, 0.0]);
        assert_eq!(backproject_direction(&k, &hp(-1.0, 0.0, 0.0)), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn camera_angle_examples() {
        let f = 700.0;
        let k = CameraIntrinsics::new(f, f, 0.0, 0.0).unwrap();
        let a = hp(12.0, -3.0, 1.0);
        assert_eq!(camera_angle_error(&k, &a, &a), 0.0);
        let e = camera_angle_error(&k, &hp(0.0, 0.0, 1.0), &hp(f, 0.0, 1.0));
        assert!((e - FRAC_PI_4).abs() < 1e-12);
        let e = camera_angle_error(&k, &hp(1.0, 0.0, 0.0), &hp(0.0, 1.0, 0.0));
        assert!((e - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn clipping_keeps_inside_part() {
        let s = clip_segment(&seg(-10.0, 5.0, 30.0, 5.0), 0.0, 0.0, 20.0, 10.0).unwrap();
        assert_eq!((s.p0(), s.p1()), (Point2::new(0.0, 5.0), Point2::new(20.0, 5.0)));
        assert!(clip_segment(&seg(-10.0, -5.0, -1.0, -8.0), 0.0, 0.0, 20.0, 10.0).is_none());
        let inside = seg(1.0, 1.0, 2.0, 3.0);
        assert_eq!(clip_segment(&inside, 0.0, 0.0, 20.0, 10.0), Some(inside));
    }

    #[test]
    fn default_intrinsics_use_long_side() {
        let k = CameraIntrinsics::default_for_image(640, 480);
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (640.0, 640.0, 320.0, 240.0));
    }

    #[test]
    fn invalid_constructions_are_rejected() {
        assert!(HomogeneousPoint::new(0.0, 0.0, 0.0).is_err());
        assert!(HomogeneousPoint::new(f64::NAN, 0.0, 1.0).is_err());
        assert!(LineSegment::from_coords(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn vp_direction_is_scale_invariant(
            x in -1e3f64..1e3, y in -1e3f64..1e3, w in prop_oneof![Just(0.0), 0.01f64..10.0],
            u in -500f64..500.0, v in -500f64..500.0, lambda in 0.01f64..100.0,
        ) {
            prop_assume!(x.abs() + y.abs() > 1e-3);
            let vp = hp(x, y, w);
            let scaled = hp(lambda * x, lambda * y, lambda * w);
            let px = Point2::new(u, v);
            if let (Ok(a), Ok(b)) = (vp_direction_at(&vp, px), vp_direction_at(&scaled, px)) {
                prop_assert!((a.dx - b.dx).abs() < 1e-12 && (a.dy - b.dy).abs() < 1e-12);
            }
        }

        #[test]
        fn intersection_lies_on_both_lines(
            ax in -300f64..300.0, ay in -300f64..300.0, bx in -300f64..300.0, by in -300f64..300.0,
            cx in -300f64..300.0, cy in -300f64..300.0, dx in -300f64..300.0, dy in -300f64..300.0,
        ) {
            let (Ok(s1), Ok(s2)) = (LineSegment::from_coords(ax, ay, bx, by), LineSegment::from_coords(cx, cy, dx, dy)) else {
                return Ok(());
            };
            prop_assume!(s1.length() > 1.0 && s2.length() > 1.0);
            prop_assume!(undirected_angle(s1.direction(), s2.direction()) > 1e-3);
            let p = intersect_lines(&s1, &s2).unwrap().normalized();
            for s in [s1, s2] {
                let l = s.line_coefficients();
                let r = l[0] * p.x() + l[1] * p.y() + l[2] * p.w();
                let ln = math::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
                prop_assert!((r / ln).abs() < 1e-9);
            }
        }

        #[test]
        fn camera_angle_error_is_symmetric_and_scale_invariant(
            ax in -2e3f64..2e3, ay in -2e3f64..2e3, aw in prop_oneof![Just(0.0), Just(1.0), 0.1f64..3.0],
            bx in -2e3f64..2e3, by in -2e3f64..2e3, lambda in 0.05f64..20.0,
        ) {
            prop_assume!(ax.abs() + ay.abs() > 1e-3);
            let k = CameraIntrinsics::new(512.0, 512.0, 256.0, 256.0).unwrap();
            let a = hp(ax, ay, aw);
            let b = hp(bx, by, 1.0);
            let e = camera_angle_error(&k, &a, &b);
            prop_assert!((e - camera_angle_error(&k, &b, &a)).abs() < 1e-12);
            let a2 = hp(lambda * ax, lambda * ay, lambda * aw);
            prop_assert!((e - camera_angle_error(&k, &a2, &b)).abs() < 1e-7);
            let b2 = hp(-lambda * bx, -lambda * by, -lambda);
            prop_assert!((e - camera_angle_error(&k, &a, &b2)).abs() < 1e-7);
        }

        #[test]
        fn backprojection_has_unit_norm(x in -1e4f64..1e4, y in -1e4f64..1e4, w in -2.0f64..2.0) {
            prop_assume!(x.abs() + y.abs() + w.abs() > 1e-6);
            let k = CameraIntrinsics::new(640.0, 600.0, 320.0, 240.0).unwrap();
            let d = backproject_direction(&k, &hp(x, y, w));
            let n = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            prop_assert!((math::sqrt(n) - 1.0).abs() < 1e-12);
        }
    }
}
