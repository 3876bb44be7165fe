//! Straightforward references for checking the library. The oracles
//! themselves share no code with it; the `check_*` and `max_*` drivers
//! compare the two.

#![allow(dead_code)]

pub mod polyline;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpkit_core::edge::{sobel, vp_alignment_score, VpLossConfig, WeightingMode};
use vpkit_core::{HomogeneousPoint, ScalarField};

pub struct NaiveParams {
    pub theta_thresh: f64,
    pub k: f64,
    pub eps: f64,
    pub dot_mode: bool,
}

impl Default for NaiveParams {
    fn default() -> Self {
        Self { theta_thresh: 5.0 * std::f64::consts::PI / 180.0, k: 50.0, eps: 1e-4, dot_mode: false }
    }
}

/// `img[y][x]`; vp as `[x, y, w]`.
pub fn naive_score(img: &[Vec<f64>], vp: [f64; 3], p: &NaiveParams) -> f64 {
    let h = img.len() as i64;
    let w = img[0].len() as i64;
    let at = |x: i64, y: i64| img[y.clamp(0, h - 1) as usize][x.clamp(0, w - 1) as usize];
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..3 {
                for i in 0..3 {
                    let v = at(x + i as i64 - 1, y + j as i64 - 1);
                    gx += kx[j][i] * v;
                    gy += ky[j][i] * v;
                }
            }
            let m = (gx * gx + gy * gy).sqrt();
            if m < p.eps || m == 0.0 {
                continue;
            }
            let (dx, dy) = (-gy / m, gx / m);
            let (mut vx, mut vy) = if vp[2] == 0.0 {
                (vp[0], vp[1])
            } else {
                (vp[0] / vp[2] - x as f64, vp[1] / vp[2] - y as f64)
            };
            let n = (vx * vx + vy * vy).sqrt();
            if n < 1e-9 {
                continue;
            }
            vx /= n;
            vy /= n;
            let c = (dx * vx + dy * vy).abs().min(1.0);
            let weight = if p.dot_mode {
                c
            } else {
                let theta = c.acos();
                1.0 / (1.0 + (-p.k * (p.theta_thresh - theta)).exp())
            };
            total += m * weight;
        }
    }
    total
}

pub fn to_rows(width: usize, data: &[f64]) -> Vec<Vec<f64>> {
    data.chunks(width).map(|r| r.to_vec()).collect()
}

fn random_vp(rng: &mut ChaCha8Rng) -> HomogeneousPoint {
    if rng.random_bool(0.2) {
        HomogeneousPoint::at_infinity(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).unwrap()
    } else {
        HomogeneousPoint::finite(rng.random_range(-40.0..56.0), rng.random_range(-40.0..56.0)).unwrap()
    }
}

/// Largest relative difference between [`vp_alignment_score`] and
/// [`naive_score`] over `fields` uniform random 16×16 images and three
/// random VPs each (a fifth of them at infinity).
pub fn max_score_discrepancy(mode: WeightingMode, fields: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VpLossConfig { weighting_mode: mode, ..Default::default() };
    let params = NaiveParams { dot_mode: mode == WeightingMode::DotProduct, ..Default::default() };
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let img = ScalarField::from_fn(16, 16, |_, _| rng.random::<f64>());
        let ef = sobel(&img).unwrap();
        let rows = to_rows(16, img.data());
        for _ in 0..3 {
            let vp = random_vp(&mut rng);
            let fast = vp_alignment_score(&ef, &vp, &cfg);
            let slow = naive_score(&rows, vp.to_array(), &params);
            worst = worst.max((fast - slow).abs() / slow.abs().max(1e-300));
        }
    }
    worst
}
