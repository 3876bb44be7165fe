//! Outline extraction from surface segmentation maps.
//!
//! Boundaries of labelled regions are traced, simplified to polygons with
//! Douglas-Peucker, and the polygon edges that point at a vanishing point
//! are kept. Selected edges can be rasterized into a binary condition image
//! and randomly subsampled.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_segment, segment_vp_deviation, HomogeneousPoint, LineSegment, Point2};
use crate::math;
use crate::raster::BinaryImage;

/// Components smaller than this many pixels are ignored by [`trace_contours`].
pub const MIN_COMPONENT_PIXELS: usize = 16;

/// Label raster; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry("segmentation map must be non-empty"));
        }
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch("label count differs from width * height"));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Ordered vertices. A closed polyline repeats its first vertex at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point2>,
    pub closed: bool,
}

impl Polyline {
    pub fn open(points: Vec<Point2>) -> Self {
        Self { points, closed: false }
    }

    /// Builds a closed polyline, appending the first vertex if needed.
    pub fn closed(mut points: Vec<Point2>) -> Self {
        if let (Some(first), Some(last)) = (points.first().copied(), points.last()) {
            if *last != first || points.len() == 1 {
                points.push(first);
            }
        }
        Self { points, closed: true }
    }

    /// Consecutive vertex pairs, skipping zero-length ones.
    pub fn edges(&self) -> Vec<LineSegment> {
        self.points.windows(2).filter_map(|w| LineSegment::new(w[0], w[1]).ok()).collect()
    }

    /// Signed shoelace area in pixel coordinates.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            s += a.x * b.y - b.x * a.y;
        }
        0.5 * s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlineEdge {
    pub seg: LineSegment,
    pub vp_index: usize,
    /// Radians.
    pub deviation: f64,
}

/// Binary outline raster, 1 on lines.
pub type ConditionImage = BinaryImage;

// Moore neighbourhood, clockwise on screen (y down) starting west.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(dx: isize, dy: isize) -> usize {
    RING.iter().position(|&d| d == (dx, dy)).unwrap_or(0)
}

/// Moore-neighbour trace of the outer boundary of the component containing
/// `start`, the component's first pixel in raster order.
fn moore_trace(member: &dyn Fn(isize, isize) -> bool, start: (isize, isize)) -> Vec<(isize, isize)> {
    let mut boundary = vec![start];
    // Entering from the west: that neighbour is outside by choice of start.
    let mut p = start;
    let mut back = 0usize;
    let mut first_move: Option<((isize, isize), usize)> = None;
    loop {
        let mut next = None;
        for k in 1..=8 {
            let dir = (back + k) % 8;
            let q = (p.0 + RING[dir].0, p.1 + RING[dir].1);
            if member(q.0, q.1) {
                next = Some((q, dir));
                break;
            }
        }
        let Some((q, dir)) = next else {
            return boundary;
        };
        // Backtrack: the neighbour examined just before q, seen from q.
        let prev = (dir + 7) % 8;
        let b = (p.0 + RING[prev].0 - q.0, p.1 + RING[prev].1 - q.1);
        let new_back = ring_index(b.0, b.1);
        // Jacob's criterion: stop on re-entering the start the same way.
        if p == start {
            match first_move {
                None => first_move = Some((q, dir)),
                Some(m) if m == (q, dir) => {
                    boundary.pop();
                    return boundary;
                }
                _ => {}
            }
        }
        boundary.push(q);
        p = q;
        back = new_back;
        if boundary.len() > 8 * 1_000_000 {
            return boundary;
        }
    }
}

/// Closed boundary polylines of every labelled component of at least
/// [`MIN_COMPONENT_PIXELS`] pixels, with vertices at pixel centres and
/// positive shoelace area.
pub fn trace_contours(map: &SegmentationMap) -> Vec<Polyline> {
    let (w, h) = (map.width, map.height);
    let mut component = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut next_id = 0;
    for start in 0..w * h {
        let label = map.labels[start];
        if label == 0 || component[start] != usize::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        component[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if component[j] == usize::MAX && map.labels[j] == label {
                    component[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if size < MIN_COMPONENT_PIXELS {
            continue;
        }
        let member = |x: isize, y: isize| {
            x >= 0 && y >= 0 && x < w as isize && y < h as isize && component[y as usize * w + x as usize] == id
        };
        let sx = (start % w) as isize;
        let sy = (start / w) as isize;
        let cells = moore_trace(&member, (sx, sy));
        let points: Vec<Point2> = cells.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect();
        let mut poly = Polyline::closed(points);
        if poly.signed_area() < 0.0 {
            poly.points.reverse();
        }
        out.push(poly);
    }
    out
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    math::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy))
}

/// Marks the vertices of `pts[lo..=hi]` kept by Douglas-Peucker.
fn dp_mark(pts: &[Point2], lo: usize, hi: usize, eps: f64, keep: &mut [bool]) {
    let mut stack = vec![(lo, hi)];
    while let Some((a, b)) = stack.pop() {
        keep[a] = true;
        keep[b] = true;
        if b <= a + 1 {
            continue;
        }
        let mut best = (0.0, a);
        for i in a + 1..b {
            let d = point_segment_distance(pts[i], pts[a], pts[b]);
            if d > best.0 {
                best = (d, i);
            }
        }
        if best.0 > eps {
            stack.push((best.1, b));
            stack.push((a, best.1));
        }
    }
}

/// Douglas-Peucker simplification. Closed inputs are split at their two
/// mutually farthest vertices; kept vertices stay in their original order.
pub fn douglas_peucker(line: &Polyline, epsilon: f64) -> Result<Polyline> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive"));
    }
    let pts = &line.points;
    if !line.closed {
        if pts.len() < 3 {
            return Ok(line.clone());
        }
        let mut keep = vec![false; pts.len()];
        dp_mark(pts, 0, pts.len() - 1, epsilon, &mut keep);
        return Ok(Polyline::open(pts.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect()));
    }

    let ring: &[Point2] = if pts.len() > 1 && pts[0] == pts[pts.len() - 1] { &pts[..pts.len() - 1] } else { pts };
    let n = ring.len();
    if n < 4 {
        return Ok(Polyline::closed(ring.to_vec()));
    }
    let (mut far, mut fi, mut fj) = (-1.0, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let d = ring[i].distance(ring[j]);
            if d > far {
                (far, fi, fj) = (d, i, j);
            }
        }
    }
    let mut keep = vec![false; n];
    dp_mark(ring, fi, fj, epsilon, &mut keep);
    // Second chain wraps around: fj..n, 0..=fi.
    let wrapped: Vec<Point2> = ring[fj..].iter().chain(&ring[..=fi]).copied().collect();
    let mut keep_w = vec![false; wrapped.len()];
    dp_mark(&wrapped, 0, wrapped.len() - 1, epsilon, &mut keep_w);
    for (k, flag) in keep_w.iter().enumerate() {
        if *flag {
            keep[(fj + k) % n] = true;
        }
    }
    Ok(Polyline::closed(ring.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect()))
}

/// Polyline edges within `theta` of the direction toward each VP. An edge
/// may be selected for several VPs.
pub fn select_vp_aligned_edges(polys: &[Polyline], vps: &[HomogeneousPoint], theta: f64) -> Result<Vec<OutlineEdge>> {
    if !(theta > 0.0 && theta < FRAC_PI_2) {
        return Err(Error::InvalidConfig("theta must lie in (0, pi/2)"));
    }
    let mut out = Vec::new();
    for poly in polys {
        for seg in poly.edges() {
            for (vp_index, vp) in vps.iter().enumerate() {
                if let Ok(deviation) = segment_vp_deviation(&seg, vp) {
                    if deviation <= theta {
                        out.push(OutlineEdge { seg, vp_index, deviation });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Trace, simplify and select in one pass.
pub fn extract_outlines(
    map: &SegmentationMap,
    vps: &[HomogeneousPoint],
    dp_epsilon: f64,
    theta: f64,
) -> Result<Vec<OutlineEdge>> {
    let polys = trace_contours(map)
        .iter()
        .map(|p| douglas_peucker(p, dp_epsilon))
        .collect::<Result<Vec<_>>>()?;
    select_vp_aligned_edges(&polys, vps, theta)
}

/// Integer points of the Bresenham line between two pixels, inclusive.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws a segment between rounded endpoints, thickened by a square
/// `line_width × line_width` element. Parts outside the image are clipped.
pub fn draw_segment(img: &mut BinaryImage, seg: &LineSegment, line_width: usize) {
    let lw = line_width.max(1) as i64;
    let margin = lw as f64 + 1.0;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let Some(c) = clip_segment(seg, -margin, -margin, w - 1.0 + margin, h - 1.0 + margin) else {
        return;
    };
    let (p0, p1) = (c.p0(), c.p1());
    let (lo, hi) = (-(lw - 1) / 2, lw / 2);
    for (x, y) in bresenham(math::round(p0.x) as i64, math::round(p0.y) as i64, math::round(p1.x) as i64, math::round(p1.y) as i64) {
        for oy in lo..=hi {
            for ox in lo..=hi {
                img.set_clipped(x + ox, y + oy);
            }
        }
    }
}

/// Binary condition image of the given edges.
pub fn render_condition(edges: &[OutlineEdge], width: usize, height: usize, line_width: usize) -> Result<ConditionImage> {
    if line_width == 0 {
        return Err(Error::InvalidConfig("line_width must be at least 1"));
    }
    let mut img = BinaryImage::new(width, height);
    for e in edges {
        draw_segment(&mut img, &e.seg, line_width);
    }
    Ok(img)
}

/// Keeps each edge independently with probability `keep_prob`, in order.
pub fn sample_training_condition(edges: &[OutlineEdge], keep_prob: f64, rng_seed: u64) -> Result<Vec<OutlineEdge>> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::InvalidConfig("keep_prob must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(edges.iter().filter(|_| rng.random_bool(keep_prob)).copied().collect())
}
