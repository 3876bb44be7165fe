//! Finite-difference verification of [`vp_loss_gradient`].
//!
//! The checker perturbs one input pixel at a time and compares the central
//! difference of [`vp_loss`] with the analytic gradient. Probes are the
//! pixels with the largest analytic gradient, skipping those whose Sobel
//! stencil touches a non-differentiable point (magnitude gate, or an edge
//! exactly parallel / perpendicular to a VP direction) within the reach of
//! the finite-difference step. Pixels where the difference quotient itself
//! is unreliable are skipped too: halving the step must change it by less
//! than a tenth of the tolerance, relative to its value (the `O(h²)`
//! truncation estimate `|D(2h) − D(h)| / 3`), and so must the rounding
//! error of the loss difference, about `ε·|L| / h`.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge::{sobel, vp_loss, vp_loss_gradient, EdgeField, VpLossConfig};
use crate::error::{Error, Result};
use crate::geometry::{undirected_angle, vp_direction_at, HomogeneousPoint, Point2, UnitVector2};
use crate::raster::ScalarField;
use crate::synth;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub size: usize,
    pub trials: usize,
    pub vps_per_trial: usize,
    /// Central-difference step.
    pub step: f64,
    /// Number of probed pixels per trial.
    pub probes: usize,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { size: 16, trials: 5, vps_per_trial: 2, step: 1e-4, probes: 50, tolerance: 1e-3, seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckTrial {
    pub trial: usize,
    pub vps: Vec<HomogeneousPoint>,
    pub loss: f64,
    pub probed: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub config: GradCheckConfig,
    pub loss_config: VpLossConfig,
    pub trials: Vec<GradCheckTrial>,
}

/// Relative error `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = libm::fabs(a).max(libm::fabs(b));
    if scale == 0.0 {
        0.0
    } else {
        libm::fabs(a - b) / scale
    }
}

/// Central difference of the loss with respect to one input pixel.
pub fn finite_difference(
    pred: &ScalarField,
    gt: &ScalarField,
    vps: &[HomogeneousPoint],
    cfg: &VpLossConfig,
    x: usize,
    y: usize,
    h: f64,
) -> Result<f64> {
    let mut plus = pred.clone();
    let mut minus = pred.clone();
    let v = pred.get(x, y);
    plus.set(x, y, v + h);
    minus.set(x, y, v - h);
    let lp = vp_loss(&plus, gt, vps, cfg)?.loss;
    let lm = vp_loss(&minus, gt, vps, cfg)?.loss;
    Ok((lp - lm) / (2.0 * h))
}

/// Fraction of the tolerance the difference quotient's own truncation
/// estimate may use.
const ORACLE_RESOLUTION: f64 = 0.1;

/// Pixels of `ef` whose per-pixel loss term is not smooth within a
/// perturbation of `reach` on the gradient vector.
fn non_smooth_pixels(ef: &EdgeField, vps: &[HomogeneousPoint], cfg: &VpLossConfig, reach: f64) -> Vec<bool> {
    let (w, h) = (ef.width(), ef.height());
    let mut out = alloc::vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = ef.magnitude.get(x, y);
            let gate_band = (2.0 * cfg.magnitude_epsilon).max(2.0 * reach);
            if libm::fabs(m - cfg.magnitude_epsilon) < gate_band {
                out[y * w + x] = true;
                continue;
            }
            if m < cfg.magnitude_epsilon {
                continue;
            }
            let d = UnitVector2 { dx: -ef.gy.get(x, y) / m, dy: ef.gx.get(x, y) / m };
            let angle_band = 2.0 * reach / m;
            for vp in vps {
                let Ok(v) = vp_direction_at(vp, Point2::new(x as f64, y as f64)) else {
                    out[y * w + x] = true;
                    continue;
                };
                let theta = undirected_angle(d, v);
                if theta < angle_band || FRAC_PI_2 - theta < angle_band {
                    out[y * w + x] = true;
                }
            }
        }
    }
    out
}

/// Compares analytic and finite-difference gradients on one image pair.
/// Returns `(probed, excluded, max_rel_err)`.
pub fn check_pair(
    pred: &ScalarField,
    gt: &ScalarField,
    vps: &[HomogeneousPoint],
    loss_cfg: &VpLossConfig,
    cfg: &GradCheckConfig,
) -> Result<(usize, usize, f64)> {
    let analytic = vp_loss_gradient(pred, gt, vps, loss_cfg)?;
    compare(&analytic, pred, gt, vps, loss_cfg, cfg)
}

fn compare(
    analytic: &ScalarField,
    pred: &ScalarField,
    gt: &ScalarField,
    vps: &[HomogeneousPoint],
    loss_cfg: &VpLossConfig,
    cfg: &GradCheckConfig,
) -> Result<(usize, usize, f64)> {
    let (step, tolerance) = (cfg.step, cfg.tolerance);
    let ef = sobel(pred)?;
    let roundoff = f64::EPSILON * libm::fabs(vp_loss(pred, gt, vps, loss_cfg)?.loss) / step;
    // A pixel enters each Sobel response with total weight at most 4 per
    // axis (corner pixels under replicate padding).
    let reach = 4.0 * core::f64::consts::SQRT_2 * step;
    let rough = non_smooth_pixels(&ef, vps, loss_cfg, reach);
    let (w, h) = (pred.width(), pred.height());

    let mut candidates: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut excluded = 0;
    for y in 0..h {
        for x in 0..w {
            let touches_rough = (-1..=1).any(|dy: isize| {
                (-1..=1).any(|dx: isize| {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    rough[sy * w + sx]
                })
            });
            if touches_rough {
                excluded += 1;
                continue;
            }
            let d1 = finite_difference(pred, gt, vps, loss_cfg, x, y, step)?;
            let d2 = finite_difference(pred, gt, vps, loss_cfg, x, y, 2.0 * step)?;
            let truncation = libm::fabs(d2 - d1) / 3.0;
            if truncation.max(roundoff) > ORACLE_RESOLUTION * tolerance * libm::fabs(d1) {
                excluded += 1;
                continue;
            }
            candidates.push((x, y, analytic.get(x, y), d1));
        }
    }
    candidates.sort_by(|a, b| libm::fabs(b.2).total_cmp(&libm::fabs(a.2)).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    candidates.truncate(cfg.probes);

    let max_err = candidates.iter().map(|&(_, _, a, n)| relative_error(a, n)).fold(0.0, f64::max);
    Ok((candidates.len(), excluded, max_err))
}

/// Smallest image side accepted by [`run_grad_check`].
pub const MIN_GRAD_CHECK_SIZE: usize = 4;

/// Seeded multi-trial gradient check on smooth random images.
pub fn run_grad_check(cfg: &GradCheckConfig, loss_cfg: &VpLossConfig) -> Result<GradCheckReport> {
    if cfg.size < MIN_GRAD_CHECK_SIZE {
        return Err(Error::ImageTooSmall { width: cfg.size, height: cfg.size, min: MIN_GRAD_CHECK_SIZE });
    }
    if cfg.trials == 0 || cfg.vps_per_trial == 0 || cfg.probes == 0 {
        return Err(Error::InvalidConfig("trials, vps_per_trial and probes must be positive"));
    }
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive"));
    }
    loss_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.size as f64;
    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let pred = synth::smooth_random_field(cfg.size, cfg.size, &mut rng);
        let gt = synth::smooth_random_field(cfg.size, cfg.size, &mut rng);
        let vps: Vec<HomogeneousPoint> = (0..cfg.vps_per_trial)
            .map(|_| {
                let x = rng.random_range(-2.0 * s..3.0 * s);
                let y = rng.random_range(-2.0 * s..3.0 * s);
                HomogeneousPoint::finite(x, y)
            })
            .collect::<Result<_>>()?;
        let loss = vp_loss(&pred, &gt, &vps, loss_cfg)?.loss;
        let (probed, excluded, max_rel_err) = check_pair(&pred, &gt, &vps, loss_cfg, cfg)?;
        trials.push(GradCheckTrial { trial, vps, loss, probed, excluded, max_rel_err });
    }
    let max_rel_err = trials.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    let pass = max_rel_err < cfg.tolerance && trials.iter().all(|t| t.probed > 0);
    Ok(GradCheckReport { pass, max_rel_err, config: cfg.clone(), loss_config: *loss_cfg, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::WeightingMode;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(-1.0, 1.0), 2.0);
    }

    #[test]
    fn default_run_passes_in_both_modes() {
        let cfg = GradCheckConfig { trials: 2, ..Default::default() };
        let r = run_grad_check(&cfg, &VpLossConfig::default()).unwrap();
        assert!(r.pass, "{:?}", r.trials);
        let dot = VpLossConfig { weighting_mode: WeightingMode::DotProduct, ..Default::default() };
        let r = run_grad_check(&cfg, &dot).unwrap();
        assert!(r.pass, "{:?}", r.trials);
    }

    #[test]
    fn scaled_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = synth::smooth_random_field(12, 12, &mut rng);
        let gt = synth::smooth_random_field(12, 12, &mut rng);
        let vps = [HomogeneousPoint::finite(30.0, -5.0).unwrap(), HomogeneousPoint::finite(-8.0, 20.0).unwrap()];
        let loss_cfg = VpLossConfig::default();
        let cfg = GradCheckConfig::default();
        let mut analytic = vp_loss_gradient(&pred, &gt, &vps, &loss_cfg).unwrap();
        let (probed, _, err) = compare(&analytic, &pred, &gt, &vps, &loss_cfg, &cfg).unwrap();
        assert!(probed > 0 && err < cfg.tolerance);
        analytic.data_mut().iter_mut().for_each(|v| *v *= 1.01);
        let (_, _, err) = compare(&analytic, &pred, &gt, &vps, &loss_cfg, &cfg).unwrap();
        assert!(err > 5.0 * cfg.tolerance, "{err}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = GradCheckConfig { trials: 1, size: 10, ..Default::default() };
        let a = run_grad_check(&cfg, &VpLossConfig::default()).unwrap();
        let b = run_grad_check(&cfg, &VpLossConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_images_are_rejected() {
        let cfg = GradCheckConfig { size: 3, ..Default::default() };
        assert!(matches!(
            run_grad_check(&cfg, &VpLossConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
