//! Exact checks of polyline simplification on integer inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpkit_core::geometry::Point2;
use vpkit_core::outline::{douglas_peucker, Polyline};

/// `dist(p, segment ab)² <= (num/den)²`, evaluated exactly.
fn within(p: (i64, i64), a: (i64, i64), b: (i64, i64), num: i128, den: i128) -> bool {
    let (px, py) = ((p.0 - a.0) as i128, (p.1 - a.1) as i128);
    let (bx, by) = ((b.0 - a.0) as i128, (b.1 - a.1) as i128);
    let l2 = bx * bx + by * by;
    let t = px * bx + py * by;
    let d2_times_l2 = if l2 == 0 || t <= 0 {
        (px * px + py * py) * l2.max(1)
    } else if t >= l2 {
        let (qx, qy) = (px - bx, py - by);
        (qx * qx + qy * qy) * l2
    } else {
        let c = px * by - py * bx;
        c * c
    };
    d2_times_l2 * den * den <= num * num * l2.max(1)
}

fn key(p: Point2) -> (i64, i64) {
    (p.x as i64, p.y as i64)
}

fn random_polyline(rng: &mut ChaCha8Rng) -> Vec<(i64, i64)> {
    let n = rng.random_range(2..60);
    let mut pts = Vec::with_capacity(n);
    let (mut x, mut y) = (rng.random_range(0..500i64), rng.random_range(0..500i64));
    for _ in 0..n {
        pts.push((x, y));
        x += rng.random_range(-20..=20);
        y += rng.random_range(-20..=20);
    }
    pts.dedup();
    pts
}

/// Simplifies `trials` random polylines (alternately open and closed) and
/// checks endpoints, vertex order, the ε bound and idempotence.
pub fn check_douglas_peucker(trials: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let raw = random_polyline(&mut rng);
        if raw.len() < 2 {
            continue;
        }
        // eps = num / 4 with num in 1..=40.
        let num: i128 = rng.random_range(1..=40);
        let eps = num as f64 / 4.0;
        let closed = trial % 2 == 1 && raw.len() >= 3;
        let pts: Vec<Point2> = raw.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect();
        let line = if closed { Polyline::closed(pts) } else { Polyline::open(pts) };
        let simp = douglas_peucker(&line, eps).map_err(|e| format!("trial {trial}: {e}"))?;

        let chain: Vec<(i64, i64)> = simp.points.iter().map(|p| key(*p)).collect();
        if chain.len() < 2 {
            return Err(format!("trial {trial}: chain collapsed"));
        }
        if !closed && (chain.first() != raw.first() || chain.last() != raw.last()) {
            return Err(format!("trial {trial}: endpoints moved"));
        }
        // Kept vertices are an ordered subsequence of the input.
        let mut it = raw.iter();
        for c in chain.iter().take(chain.len() - usize::from(closed)) {
            if !it.any(|r| r == c) {
                return Err(format!("trial {trial}: vertex order changed"));
            }
        }
        for p in &raw {
            if !chain.windows(2).any(|w| within(*p, w[0], w[1], num, 4)) {
                return Err(format!("trial {trial}: vertex {p:?} farther than {eps} from the simplified chain"));
            }
        }
        if douglas_peucker(&simp, eps).ok() != Some(simp) {
            return Err(format!("trial {trial}: not idempotent"));
        }
    }
    Ok(())
}
