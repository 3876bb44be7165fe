//! Sobel edge fields and the vanishing-point alignment loss.
//!
//! For every edge pixel `p` with gradient `g = (gx, gy)` and magnitude
//! `M = |g|`, the edge direction is `d = (-gy, gx) / M`. For each vanishing
//! point the per-pixel angle `θ = acos(|d · v|)` against the unit direction
//! `v` toward that VP is turned into a weight:
//!
//! * `SigmoidThreshold`: `w = σ(k · (θ_thresh − θ))`
//! * `DotProduct`: `w = |d · v|`
//!
//! and the per-VP score is `S = Σ M · w`. The loss between a predicted and a
//! ground-truth image is `(1/N) Σ_i (S_i^gt − S_i^pred)²`.
//!
//! Internally the angle is evaluated as `atan2(|g · v|, |g · n|)` with
//! `n = (v_y, −v_x)`, which is the same quantity and has a well-defined
//! derivative everywhere except where it kinks at `0` and `π/2`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vp_direction_at, HomogeneousPoint, Point2, UnitVector2};
use crate::math;
use crate::raster::ScalarField;

/// Horizontal Sobel kernel, `SOBEL_X[dy + 1][dx + 1]`.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical Sobel kernel (transpose of [`SOBEL_X`]).
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Per-pixel weighting applied to edge magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    SigmoidThreshold,
    DotProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderPolicy {
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpLossConfig {
    /// Angular threshold, radians.
    pub theta_thresh: f64,
    /// Sigmoid steepness, 1/radians.
    pub sigmoid_steepness: f64,
    /// Pixels with magnitude below this are ignored.
    pub magnitude_epsilon: f64,
    pub weighting_mode: WeightingMode,
    pub border_policy: BorderPolicy,
    /// Divide scores by the pixel count of the image.
    #[serde(default)]
    pub normalize_by_pixel_count: bool,
}

impl Default for VpLossConfig {
    fn default() -> Self {
        Self {
            theta_thresh: 5.0_f64.to_radians(),
            sigmoid_steepness: 50.0,
            magnitude_epsilon: 1e-4,
            weighting_mode: WeightingMode::SigmoidThreshold,
            border_policy: BorderPolicy::Replicate,
            normalize_by_pixel_count: false,
        }
    }
}

impl VpLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_thresh > 0.0 && self.theta_thresh < core::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidConfig("theta_thresh must lie in (0, pi/2)"));
        }
        if !(self.sigmoid_steepness > 0.0) || !self.sigmoid_steepness.is_finite() {
            return Err(Error::InvalidConfig("sigmoid steepness must be positive"));
        }
        if !(self.magnitude_epsilon > 0.0) || !self.magnitude_epsilon.is_finite() {
            return Err(Error::InvalidConfig("magnitude epsilon must be positive"));
        }
        Ok(())
    }
}

/// Sobel gradients and magnitude of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub gx: ScalarField,
    pub gy: ScalarField,
    pub magnitude: ScalarField,
}

impl EdgeField {
    pub fn width(&self) -> usize {
        self.gx.width()
    }

    pub fn height(&self) -> usize {
        self.gx.height()
    }
}

/// Per-VP scores of a predicted / ground-truth pair and the resulting loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpScoreReport {
    pub vps: Vec<HomogeneousPoint>,
    pub scores_pred: Vec<f64>,
    pub scores_gt: Vec<f64>,
    pub loss: f64,
    pub config: VpLossConfig,
}

/// ITU-R BT.601 luma of an RGB stack with values in `[0, 1]`.
pub fn to_grayscale(channels: &[ScalarField]) -> Result<ScalarField> {
    let [r, g, b] = channels else {
        return Err(Error::ChannelMismatch);
    };
    if !r.same_dims(g) || !r.same_dims(b) {
        return Err(Error::ChannelMismatch);
    }
    let data = r
        .data()
        .iter()
        .zip(g.data())
        .zip(b.data())
        .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    ScalarField::new(r.width(), r.height(), data)
}

/// 3×3 Sobel gradients with replicate padding.
pub fn sobel(img: &ScalarField) -> Result<EdgeField> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h, min: 3 });
    }
    let mut gx = ScalarField::zeros(w, h);
    let mut gy = ScalarField::zeros(w, h);
    let mut mag = ScalarField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (ky, (row_x, row_y)) in SOBEL_X.iter().zip(SOBEL_Y.iter()).enumerate() {
                for kx in 0..3 {
                    let v = img.get_clamped(x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                    sx += row_x[kx] * v;
                    sy += row_y[kx] * v;
                }
            }
            gx.set(x, y, sx);
            gy.set(x, y, sy);
            mag.set(x, y, math::hypot(sx, sy));
        }
    }
    Ok(EdgeField { gx, gy, magnitude: mag })
}

/// Unit edge direction `(-gy, gx) / M` at an integer pixel.
pub fn edge_direction_at(ef: &EdgeField, x: usize, y: usize, magnitude_epsilon: f64) -> Result<UnitVector2> {
    let m = ef.magnitude.get(x, y);
    if !(m >= magnitude_epsilon) || m == 0.0 {
        return Err(Error::FlatRegion);
    }
    let (gx, gy) = (ef.gx.get(x, y), ef.gy.get(x, y));
    Ok(UnitVector2 { dx: -gy / m, dy: gx / m })
}

/// Angle between an edge with gradient `(gx, gy)` and direction `v`,
/// together with its partial derivatives with respect to `gx` and `gy`.
///
/// The derivative is one-sided at the kinks `θ = 0` and `θ = π/2`.
#[inline]
fn edge_angle(gx: f64, gy: f64, v: UnitVector2) -> (f64, f64, f64) {
    // |g·v| = M·sinθ, |g·n| = M·cosθ with n ⟂ v.
    let along = gx * v.dx + gy * v.dy;
    let across = gx * v.dy - gy * v.dx;
    let (p, q) = (libm::fabs(along), libm::fabs(across));
    let theta = math::atan2(p, q);
    let m2 = gx * gx + gy * gy;
    let sp = if along < 0.0 { -1.0 } else { 1.0 };
    let sq = if across < 0.0 { -1.0 } else { 1.0 };
    // ∂θ/∂g = (q·∂p − p·∂q) / M², with ∂p = sp·v and ∂q = sq·(v_y, −v_x).
    let dgx = (q * sp * v.dx - p * sq * v.dy) / m2;
    let dgy = (q * sp * v.dy + p * sq * v.dx) / m2;
    (theta, dgx, dgy)
}

/// Contribution `M·w` of one pixel and its derivative with respect to the
/// pixel's gradient vector.
#[inline]
fn pixel_term(gx: f64, gy: f64, m: f64, v: UnitVector2, cfg: &VpLossConfig) -> (f64, f64, f64) {
    match cfg.weighting_mode {
        WeightingMode::SigmoidThreshold => {
            let (theta, dtx, dty) = edge_angle(gx, gy, v);
            let s = math::sigmoid(cfg.sigmoid_steepness * (cfg.theta_thresh - theta));
            let ds = -cfg.sigmoid_steepness * s * (1.0 - s);
            // ∂(M·w) = w·g/M + M·σ'·∂θ
            let f = m * s;
            (f, s * gx / m + m * ds * dtx, s * gy / m + m * ds * dty)
        }
        WeightingMode::DotProduct => {
            // M·|d·v| = |g·n|
            let across = gx * v.dy - gy * v.dx;
            let sq = if across < 0.0 { -1.0 } else { 1.0 };
            (libm::fabs(across), sq * v.dy, -sq * v.dx)
        }
    }
}

fn pixel_count_scale(ef: &EdgeField, cfg: &VpLossConfig) -> f64 {
    if cfg.normalize_by_pixel_count {
        1.0 / (ef.width() * ef.height()) as f64
    } else {
        1.0
    }
}

/// Alignment score `S = Σ M·w` of an edge field against one vanishing point.
pub fn vp_alignment_score(ef: &EdgeField, vp: &HomogeneousPoint, cfg: &VpLossConfig) -> f64 {
    let mut terms = Vec::with_capacity(ef.gx.len());
    for y in 0..ef.height() {
        for x in 0..ef.width() {
            let m = ef.magnitude.get(x, y);
            if m < cfg.magnitude_epsilon || m == 0.0 {
                continue;
            }
            let Ok(v) = vp_direction_at(vp, Point2::new(x as f64, y as f64)) else {
                continue;
            };
            terms.push(pixel_term(ef.gx.get(x, y), ef.gy.get(x, y), m, v, cfg).0);
        }
    }
    math::pairwise_sum(&terms) * pixel_count_scale(ef, cfg)
}

fn check_pair(pred: &ScalarField, gt: &ScalarField, vps: &[HomogeneousPoint], cfg: &VpLossConfig) -> Result<()> {
    cfg.validate()?;
    if vps.is_empty() {
        return Err(Error::EmptyVpSet);
    }
    if !pred.same_dims(gt) {
        return Err(Error::DimensionMismatch("predicted and ground-truth images differ in size"));
    }
    Ok(())
}

/// Vanishing-point loss between a predicted and a ground-truth image.
pub fn vp_loss(
    pred: &ScalarField,
    gt: &ScalarField,
    vps: &[HomogeneousPoint],
    cfg: &VpLossConfig,
) -> Result<VpScoreReport> {
    check_pair(pred, gt, vps, cfg)?;
    let ef_pred = sobel(pred)?;
    let ef_gt = sobel(gt)?;
    let scores_pred: Vec<f64> = vps.iter().map(|vp| vp_alignment_score(&ef_pred, vp, cfg)).collect();
    let scores_gt: Vec<f64> = vps.iter().map(|vp| vp_alignment_score(&ef_gt, vp, cfg)).collect();
    let loss = squared_score_loss(&scores_pred, &scores_gt);
    Ok(VpScoreReport { vps: vps.to_vec(), scores_pred, scores_gt, loss, config: *cfg })
}

fn squared_score_loss(pred: &[f64], gt: &[f64]) -> f64 {
    let sq: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (g - p) * (g - p)).collect();
    math::pairwise_sum(&sq) / pred.len() as f64
}

/// Analytic gradient `∂L/∂pred` of [`vp_loss`], back-propagated through
/// the weighting, the magnitude and the Sobel convolution (a transposed
/// scatter that honours replicate padding).
pub fn vp_loss_gradient(
    pred: &ScalarField,
    gt: &ScalarField,
    vps: &[HomogeneousPoint],
    cfg: &VpLossConfig,
) -> Result<ScalarField> {
    let report = vp_loss(pred, gt, vps, cfg)?;
    let ef = sobel(pred)?;
    let (w, h) = (ef.width(), ef.height());
    let n = vps.len() as f64;
    let scale = pixel_count_scale(&ef, cfg);
    // dL/dS_i^pred
    let coeffs: Vec<f64> = report
        .scores_pred
        .iter()
        .zip(&report.scores_gt)
        .map(|(p, g)| 2.0 / n * (p - g) * scale)
        .collect();

    let mut grad_gx = ScalarField::zeros(w, h);
    let mut grad_gy = ScalarField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let m = ef.magnitude.get(x, y);
            if m < cfg.magnitude_epsilon || m == 0.0 {
                continue;
            }
            let (gx, gy) = (ef.gx.get(x, y), ef.gy.get(x, y));
            let (mut ax, mut ay) = (0.0, 0.0);
            for (vp, c) in vps.iter().zip(&coeffs) {
                if *c == 0.0 {
                    continue;
                }
                let Ok(v) = vp_direction_at(vp, Point2::new(x as f64, y as f64)) else {
                    continue;
                };
                let (_, dx, dy) = pixel_term(gx, gy, m, v, cfg);
                ax += c * dx;
                ay += c * dy;
            }
            grad_gx.set(x, y, ax);
            grad_gy.set(x, y, ay);
        }
    }
    Ok(sobel_transpose(&grad_gx, &grad_gy))
}

/// Adjoint of [`sobel`]'s gradient maps: scatters upstream gradients on
/// `gx` and `gy` back onto the input pixels.
pub fn sobel_transpose(grad_gx: &ScalarField, grad_gy: &ScalarField) -> ScalarField {
    let (w, h) = (grad_gx.width(), grad_gx.height());
    let mut out = ScalarField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (ux, uy) = (grad_gx.get(x, y), grad_gy.get(x, y));
            if ux == 0.0 && uy == 0.0 {
                continue;
            }
            for ky in 0..3 {
                let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                for kx in 0..3 {
                    let sx = (x as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                    let contrib = SOBEL_X[ky][kx] * ux + SOBEL_Y[ky][kx] * uy;
                    if contrib != 0.0 {
                        let cur = out.get(sx, sy);
                        out.set(sx, sy, cur + contrib);
                    }
                }
            }
        }
    }
    out
}

/// `l_cn + λ·l_vp`.
pub fn total_loss(l_cn: f64, l_vp: f64, lambda: f64) -> f64 {
    l_cn + lambda * l_vp
}
