//! Classical vanishing-point detection.
//!
//! Line segments are grown from strong edge pixels with consistent
//! orientation and fitted by weighted total least squares. Vanishing points
//! are then found greedily: RANSAC over pairwise segment intersections,
//! refinement of the winning hypothesis by reweighted least squares over its
//! inliers, inlier removal, repeat.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge::{sobel, EdgeField};
use crate::error::{Error, Result};
use crate::geometry::{intersect_lines, segment_vp_deviation, HomogeneousPoint, LineSegment, Point2};
use crate::math;
use crate::raster::ScalarField;

/// Pixels whose edge orientations differ by more than this do not share a region.
const REGION_ANGLE_TOL: f64 = 10.0 * PI / 180.0;
const MERGE_ANGLE_TOL: f64 = 3.0 * PI / 180.0;
const MERGE_OFFSET_TOL: f64 = 4.0;
const MERGE_GAP_TOL: f64 = 10.0;
const IRLS_ROUNDS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Radians.
    pub consensus_angle: f64,
    pub max_vps: usize,
    pub min_inliers: usize,
    /// Pixels.
    pub min_segment_length: f64,
    pub magnitude_quantile: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            consensus_angle: 2.0_f64.to_radians(),
            max_vps: 3,
            min_inliers: 4,
            min_segment_length: 20.0,
            magnitude_quantile: 0.9,
            rng_seed: 42,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1"));
        }
        if !(self.consensus_angle > 0.0 && self.consensus_angle < PI / 4.0) {
            return Err(Error::InvalidConfig("consensus_angle must lie in (0, pi/4)"));
        }
        if !(0.0..1.0).contains(&self.magnitude_quantile) {
            return Err(Error::InvalidConfig("magnitude_quantile must lie in [0, 1)"));
        }
        if !(self.min_segment_length >= 0.0) {
            return Err(Error::InvalidConfig("min_segment_length must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedSegment {
    pub seg: LineSegment,
    /// Number of edge pixels behind the fit.
    pub support: usize,
    pub mean_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpCandidate {
    pub vp: HomogeneousPoint,
    /// Indices into the segment list given to [`detect_vps`].
    pub inliers: Vec<usize>,
    /// Sum of inlier segment lengths.
    pub score: f64,
}

struct Region {
    pixels: Vec<(usize, usize)>,
}

/// Orientation of the edge at a pixel, as an angle in `[0, π)`.
fn edge_orientation(ef: &EdgeField, x: usize, y: usize) -> f64 {
    let a = math::atan2(ef.gx.get(x, y), -ef.gy.get(x, y));
    if a < 0.0 {
        a + PI
    } else if a >= PI {
        a - PI
    } else {
        a
    }
}

fn orientation_gap(a: f64, b: f64) -> f64 {
    let d = libm::fabs(a - b) % PI;
    d.min(PI - d)
}

fn magnitude_threshold(ef: &EdgeField, q: f64) -> f64 {
    let mut m: Vec<f64> = ef.magnitude.data().to_vec();
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.sort_by(f64::total_cmp);
    let idx = math::floor(q * (m.len() - 1) as f64) as usize;
    let max = m[m.len() - 1];
    m[idx].max(1e-6 * max).max(1e-12)
}

fn grow_regions(ef: &EdgeField, threshold: f64) -> Vec<Region> {
    let (w, h) = (ef.width(), ef.height());
    let strong: Vec<bool> = ef.magnitude.data().iter().map(|m| *m > threshold).collect();
    let mut order: Vec<usize> = (0..w * h).filter(|i| strong[*i]).collect();
    order.sort_by(|a, b| ef.magnitude.data()[*b].total_cmp(&ef.magnitude.data()[*a]).then(a.cmp(b)));
    let orient: Vec<f64> = (0..w * h)
        .map(|i| if strong[i] { edge_orientation(ef, i % w, i / w) } else { 0.0 })
        .collect();

    let mut used = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        queue.clear();
        queue.push_back(seed);
        let (mut c2, mut s2) = (math::cos(2.0 * orient[seed]), math::sin(2.0 * orient[seed]));
        let mut mean = orient[seed];
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push((i % w, i / w));
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if used[j] || !strong[j] || orientation_gap(orient[j], mean) > REGION_ANGLE_TOL {
                        continue;
                    }
                    used[j] = true;
                    queue.push_back(j);
                    c2 += math::cos(2.0 * orient[j]);
                    s2 += math::sin(2.0 * orient[j]);
                    mean = 0.5 * math::atan2(s2, c2);
                    if mean < 0.0 {
                        mean += PI;
                    }
                }
            }
        }
        regions.push(Region { pixels });
    }
    regions
}

struct Fit {
    seg: Option<LineSegment>,
    centre: Point2,
    dir: (f64, f64),
    tmin: f64,
    tmax: f64,
    mean_magnitude: f64,
}

/// Magnitude-weighted total-least-squares line through the pixels, with the
/// extent given by the projections onto the fitted direction.
fn fit_pixels(ef: &EdgeField, pixels: &[(usize, usize)]) -> Fit {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let m = ef.magnitude.get(x, y);
        sw += m;
        sx += m * x as f64;
        sy += m * y as f64;
    }
    let (cx, cy) = (sx / sw, sy / sw);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let m = ef.magnitude.get(x, y);
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        sxx += m * dx * dx;
        syy += m * dy * dy;
        sxy += m * dx * dy;
    }
    let phi = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    let dir = (math::cos(phi), math::sin(phi));
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pixels {
        let t = (x as f64 - cx) * dir.0 + (y as f64 - cy) * dir.1;
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    let seg = LineSegment::from_coords(cx + tmin * dir.0, cy + tmin * dir.1, cx + tmax * dir.0, cy + tmax * dir.1).ok();
    Fit { seg, centre: Point2::new(cx, cy), dir, tmin, tmax, mean_magnitude: sw / pixels.len() as f64 }
}

fn should_merge(a: &Fit, b: &Fit) -> bool {
    let cross = a.dir.0 * b.dir.1 - a.dir.1 * b.dir.0;
    let dot = a.dir.0 * b.dir.0 + a.dir.1 * b.dir.1;
    if math::atan2(libm::fabs(cross), libm::fabs(dot)) > MERGE_ANGLE_TOL {
        return false;
    }
    // Offsets of b's extent ends from a's line, and the gap along a.
    let ends = [
        (b.centre.x + b.tmin * b.dir.0, b.centre.y + b.tmin * b.dir.1),
        (b.centre.x + b.tmax * b.dir.0, b.centre.y + b.tmax * b.dir.1),
    ];
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    for (x, y) in ends {
        let (dx, dy) = (x - a.centre.x, y - a.centre.y);
        if libm::fabs(dx * a.dir.1 - dy * a.dir.0) > MERGE_OFFSET_TOL {
            return false;
        }
        let t = dx * a.dir.0 + dy * a.dir.1;
        t_lo = t_lo.min(t);
        t_hi = t_hi.max(t);
    }
    let gap = (t_lo - a.tmax).max(a.tmin - t_hi);
    gap <= MERGE_GAP_TOL
}

/// Line segments supported by strong, consistently oriented edge pixels.
pub fn extract_segments(ef: &EdgeField, cfg: &RansacConfig) -> Vec<DetectedSegment> {
    let threshold = magnitude_threshold(ef, cfg.magnitude_quantile);
    let mut groups: Vec<Vec<(usize, usize)>> =
        grow_regions(ef, threshold).into_iter().map(|r| r.pixels).filter(|p| p.len() >= 3).collect();
    let mut fits: Vec<Fit> = groups.iter().map(|p| fit_pixels(ef, p)).collect();

    // Join collinear pieces: the two flanks of a thin line and runs split
    // by crossings.
    loop {
        let mut merged = false;
        let mut i = 0;
        while i < groups.len() {
            let mut j = i + 1;
            while j < groups.len() {
                if should_merge(&fits[i], &fits[j]) && should_merge(&fits[j], &fits[i]) {
                    let taken = groups.swap_remove(j);
                    fits.swap_remove(j);
                    groups[i].extend(taken);
                    groups[i].sort_unstable_by_key(|&(x, y)| (y, x));
                    fits[i] = fit_pixels(ef, &groups[i]);
                    merged = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged {
            break;
        }
    }

    let mut out: Vec<DetectedSegment> = groups
        .iter()
        .zip(&fits)
        .filter_map(|(pixels, fit)| {
            let seg = fit.seg?;
            (seg.length() >= cfg.min_segment_length && pixels.len() as f64 >= cfg.min_segment_length)
                .then_some(DetectedSegment { seg, support: pixels.len(), mean_magnitude: fit.mean_magnitude })
        })
        .collect();
    out.sort_by(|a, b| b.seg.length().total_cmp(&a.seg.length()));
    out
}

fn consensus(segments: &[DetectedSegment], pool: &[usize], vp: &HomogeneousPoint, tol: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut score = 0.0;
    for &i in pool {
        if let Ok(d) = segment_vp_deviation(&segments[i].seg, vp) {
            if d <= tol {
                inliers.push(i);
                score += segments[i].seg.length();
            }
        }
    }
    (inliers, score)
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors as columns.
#[allow(clippy::needless_range_loop)]
fn symmetric_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (libm::fabs(theta) + math::sqrt(theta * theta + 1.0));
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / math::sqrt(t * t + 1.0);
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vkp, vkq) = (row[p], row[q]);
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Point minimizing a robust, length-weighted sum of squared angular
/// residuals to the inlier lines, by iteratively reweighted homogeneous least squares in
/// normalized coordinates.
fn refine_vp(
    segments: &[DetectedSegment],
    inliers: &[usize],
    start: &HomogeneousPoint,
    scale: f64,
) -> Option<HomogeneousPoint> {
    let n = inliers.len() as f64;
    let (mx, my) = inliers.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        let m = segments[i].seg.midpoint();
        (sx + m.x / n, sy + m.y / n)
    });
    let spread = inliers.iter().map(|&i| segments[i].seg.midpoint().distance(Point2::new(mx, my))).sum::<f64>() / n;
    let s = if spread > 1e-9 { core::f64::consts::SQRT_2 / spread } else { 1.0 };

    let mut current = *start;
    for _ in 0..IRLS_ROUNDS {
        let mut a = [[0.0; 3]; 3];
        for &i in inliers {
            let seg = &segments[i].seg;
            let m = seg.midpoint();
            let [x, y, w] = current.to_array();
            let r = math::hypot(x - m.x * w, y - m.y * w);
            if r < 1e-12 {
                continue;
            }
            // Cauchy weight on the angular residual damps badly fitted segments.
            let dev = segment_vp_deviation(seg, &current).unwrap_or(0.0) / scale;
            let weight = seg.length() / (r * r) / (1.0 + dev * dev);
            // Line in normalized coordinates x' = s (x − m̄ w), w' = w.
            let [la, lb, lc] = seg.line_coefficients();
            let l = [la / s, lb / s, lc + la * mx + lb * my];
            let norm = math::hypot(l[0], l[1]);
            let l = [l[0] / norm, l[1] / norm, l[2] / norm];
            let weight = weight * norm * norm;
            for r in 0..3 {
                for c in 0..3 {
                    a[r][c] += weight * l[r] * l[c];
                }
            }
        }
        let (vals, vecs) = symmetric_eigen3(a);
        let k = (0..3).min_by(|&i, &j| vals[i].total_cmp(&vals[j]))?;
        let (xn, yn, wn) = (vecs[0][k], vecs[1][k], vecs[2][k]);
        let x = xn / s + mx * wn;
        let y = yn / s + my * wn;
        let w = if libm::fabs(wn) <= 1e-12 * math::sqrt(x * x + y * y) { 0.0 } else { wn };
        current = HomogeneousPoint::new(x, y, w).ok()?.normalized();
    }
    Some(current)
}

/// Greedy multi-model RANSAC over segment-pair intersections.
pub fn detect_vps(segments: &[DetectedSegment], cfg: &RansacConfig) -> Result<Vec<VpCandidate>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut pool: Vec<usize> = (0..segments.len()).collect();
    let mut out = Vec::new();
    while out.len() < cfg.max_vps && pool.len() >= 2 {
        let mut best: Option<(HomogeneousPoint, Vec<usize>, f64)> = None;
        for _ in 0..cfg.iterations {
            let a = rng.random_range(0..pool.len());
            let mut b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            let Ok(h) = intersect_lines(&segments[pool[a]].seg, &segments[pool[b]].seg) else {
                continue;
            };
            let (inliers, score) = consensus(segments, &pool, &h, cfg.consensus_angle);
            if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
                best = Some((h.normalized(), inliers, score));
            }
        }
        let Some((mut vp, mut inliers, mut score)) = best else { break };
        // Refit on the consensus set and re-evaluate it, twice.
        for _ in 0..2 {
            if inliers.len() < 2 {
                break;
            }
            let Some(refined) = refine_vp(segments, &inliers, &vp, 0.25 * cfg.consensus_angle) else { break };
            let (r_in, r_score) = consensus(segments, &pool, &refined, cfg.consensus_angle);
            if r_in.len() < 2 {
                break;
            }
            vp = refined;
            inliers = r_in;
            score = r_score;
        }
        if inliers.len() < cfg.min_inliers.max(1) {
            break;
        }
        pool.retain(|i| !inliers.contains(i));
        out.push(VpCandidate { vp, inliers, score });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Sobel, segment extraction and RANSAC in one call.
pub fn detect_vps_in_image(img: &ScalarField, cfg: &RansacConfig) -> Result<(Vec<DetectedSegment>, Vec<VpCandidate>)> {
    cfg.validate()?;
    let ef = sobel(img)?;
    let segments = extract_segments(&ef, cfg);
    let candidates = detect_vps(&segments, cfg)?;
    Ok((segments, candidates))
}
