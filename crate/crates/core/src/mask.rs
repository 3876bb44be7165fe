//! Inpainting masks from pairs of original and desired outlines.
//!
//! The editable region of a pair is the quadrilateral spanned by the two
//! segments, with endpoints matched so the total correspondence distance is
//! minimal. Regions are filled by sampling pixel centres, unioned across
//! pairs and dilated.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LineSegment, Point2};
use crate::math;
use crate::outline::draw_segment;
use crate::raster::BinaryImage;

/// Tolerance for a pixel centre to count as lying on a polygon edge.
const ON_EDGE_TOL: f64 = 1e-9;

/// Binary mask; set pixels may be modified.
pub type Mask = BinaryImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlinePair {
    pub original: LineSegment,
    pub desired: LineSegment,
}

impl OutlinePair {
    pub fn new(original: LineSegment, desired: LineSegment) -> Result<Self> {
        let same = |a: Point2, b: Point2| a.distance(b) <= 1e-6;
        let (o, d) = (original, desired);
        if (same(o.p0(), d.p0()) && same(o.p1(), d.p1())) || (same(o.p0(), d.p1()) && same(o.p1(), d.p0())) {
            return Err(Error::InvalidGeometry("original and desired outlines coincide"));
        }
        Ok(Self { original, desired })
    }

    pub fn swapped(&self) -> Self {
        Self { original: self.desired, desired: self.original }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskReport {
    pub mask: Mask,
    /// Fraction of set pixels.
    pub coverage: f64,
    /// Indices of pairs skipped because their region was degenerate.
    pub skipped: Vec<usize>,
}

/// Unsigned shoelace area.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    libm::fabs(0.5 * s)
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_span(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching included.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_span(a, b, c))
        || (o2 == 0.0 && on_span(a, b, d))
        || (o3 == 0.0 && on_span(c, d, a))
        || (o4 == 0.0 && on_span(c, d, b))
}

/// `true` if two non-adjacent edges of the quadrilateral meet.
pub fn quad_self_intersects(q: &[Point2; 4]) -> bool {
    segments_intersect(q[0], q[1], q[2], q[3]) || segments_intersect(q[1], q[2], q[3], q[0])
}

fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Vec<Point2> = if pass == 0 { pts.clone() } else { pts.iter().rev().copied().collect() };
        for p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Simple polygon between the two outlines: `o0, o1, d(o1), d(o0)` under
/// the cheaper endpoint matching. A self-intersecting result has its last
/// two vertices swapped; if that still crosses itself (the outlines cross
/// each other) the convex hull of the four endpoints is used.
pub fn pair_endpoints(pair: &OutlinePair) -> Result<Vec<Point2>> {
    let (o0, o1) = (pair.original.p0(), pair.original.p1());
    let (d0, d1) = (pair.desired.p0(), pair.desired.p1());
    let straight = o0.distance(d0) + o1.distance(d1);
    let crossed = o0.distance(d1) + o1.distance(d0);
    let (m0, m1) = if straight <= crossed { (d0, d1) } else { (d1, d0) };
    let mut quad = [o0, o1, m1, m0];
    if quad_self_intersects(&quad) {
        quad.swap(2, 3);
    }
    let poly = if quad_self_intersects(&quad) { convex_hull(&quad) } else { quad.to_vec() };
    if poly.len() < 3 || polygon_area(&poly) < 1.0 {
        return Err(Error::DegenerateRegion);
    }
    Ok(poly)
}

/// Even-odd scanline fill sampled at pixel centres. Centres on an edge are
/// inside; everything is clipped to the image.
pub fn rasterize_polygon(poly: &[Point2], width: usize, height: usize) -> Mask {
    let mut mask = BinaryImage::new(width, height);
    let n = poly.len();
    if n < 2 || width == 0 || height == 0 {
        return mask;
    }
    // Each edge once, lower endpoint first, so crossings do not depend on
    // vertex order.
    let edges: Vec<(Point2, Point2)> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a.y, a.x) <= (b.y, b.x) {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    let ymin = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = math::ceil(ymin).max(0.0);
    let row_hi = math::floor(ymax).min(height as f64 - 1.0);
    if row_lo > row_hi {
        return mask;
    }
    let xmax_px = width as f64 - 1.0;
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in row_lo as usize..=row_hi as usize {
        let y = row as f64;
        xs.clear();
        for &(p, q) in &edges {
            if p.y <= y && y < q.y {
                xs.push(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let a = math::ceil(span[0]).max(0.0);
            let b = math::floor(span[1]).min(xmax_px);
            if a <= b {
                for x in a as usize..=b as usize {
                    mask.set(x, row, true);
                }
            }
        }
        for &(p, q) in &edges {
            if y < p.y || y > q.y {
                continue;
            }
            if p.y == q.y {
                let a = math::ceil(p.x.min(q.x)).max(0.0);
                let b = math::floor(p.x.max(q.x)).min(xmax_px);
                if a <= b {
                    for x in a as usize..=b as usize {
                        mask.set(x, row, true);
                    }
                }
            } else {
                let x = p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y);
                let r = math::round(x);
                if libm::fabs(x - r) <= ON_EDGE_TOL && r >= 0.0 && r <= xmax_px {
                    mask.set(r as usize, row, true);
                }
            }
        }
    }
    mask
}

fn structuring_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if radius <= 2 || dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Morphological dilation: square element for radius ≤ 2, disc above.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = structuring_offsets(radius);
    let mut out = mask.clone();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                for &(dx, dy) in &offsets {
                    out.set_clipped(x as i64 + dx, y as i64 + dy);
                }
            }
        }
    }
    out
}

/// Undilated region of one pair: the filled polygon plus both outlines.
pub fn pair_region(pair: &OutlinePair, width: usize, height: usize) -> Result<Mask> {
    let poly = pair_endpoints(pair)?;
    let mut region = rasterize_polygon(&poly, width, height);
    draw_segment(&mut region, &pair.original, 1);
    draw_segment(&mut region, &pair.desired, 1);
    Ok(region)
}

/// Union of all pair regions, dilated. Degenerate pairs are skipped and
/// reported; if every pair is degenerate the call fails.
pub fn build_mask(pairs: &[OutlinePair], width: usize, height: usize, dilation: usize) -> Result<MaskReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut union = BinaryImage::new(width, height);
    let mut skipped = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        match pair_region(pair, width, height) {
            Ok(region) => union.union_with(&region)?,
            Err(Error::DegenerateRegion) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    if skipped.len() == pairs.len() {
        return Err(Error::DegenerateRegion);
    }
    let mask = dilate(&union, dilation);
    let coverage = mask.coverage();
    Ok(MaskReport { mask, coverage, skipped })
}
