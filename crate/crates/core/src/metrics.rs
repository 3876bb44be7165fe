//! Angle-accuracy evaluation and pixel-fidelity metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{camera_angle_error, CameraIntrinsics, HomogeneousPoint};
use crate::math;
use crate::raster::ScalarField;

/// Error assigned to an image on which nothing was detected.
pub const NO_DETECTION_ERROR_DEG: f64 = 90.0;

pub const DEFAULT_THRESHOLDS_DEG: [f64; 3] = [3.0, 5.0, 10.0];

/// Smallest camera-space angle, in degrees, between any detection and the target.
pub fn image_angle_error(detected: &[HomogeneousPoint], target: &HomogeneousPoint, k: &CameraIntrinsics) -> Result<f64> {
    detected
        .iter()
        .map(|d| camera_angle_error(k, d, target).to_degrees())
        .min_by(f64::total_cmp)
        .ok_or(Error::NoDetections)
}

/// Fraction of errors strictly below each threshold.
pub fn angle_accuracy(errors_deg: &[f64], thresholds_deg: &[f64]) -> Result<Vec<f64>> {
    if errors_deg.is_empty() || thresholds_deg.is_empty() {
        return Err(Error::EmptyInput);
    }
    if thresholds_deg.iter().any(|t| !(*t > 0.0)) || thresholds_deg.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("thresholds must be positive and strictly ascending"));
    }
    let n = errors_deg.len() as f64;
    Ok(thresholds_deg.iter().map(|t| errors_deg.iter().filter(|e| **e < *t).count() as f64 / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub error_deg: f64,
    pub detector: String,
    /// `true` when the error is the no-detection penalty.
    pub no_detection: bool,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AAReport {
    pub thresholds_deg: Vec<f64>,
    /// Threshold (as printed) to fraction of images below it.
    pub aa_at: BTreeMap<String, f64>,
    pub mean_error_deg: f64,
    pub per_image: Vec<ImageResult>,
    pub no_detection_policy: String,
    /// Perceptual similarity is not computed; kept for schema stability.
    pub psd: Option<f64>,
}

impl AAReport {
    pub fn build(per_image: Vec<ImageResult>, thresholds_deg: &[f64]) -> Result<Self> {
        let errors: Vec<f64> = per_image.iter().map(|r| r.error_deg).collect();
        let fractions = angle_accuracy(&errors, thresholds_deg)?;
        let aa_at = thresholds_deg.iter().zip(fractions).map(|(t, f)| (format!("{t}"), f)).collect();
        let mean_error_deg = math::pairwise_sum(&errors) / errors.len() as f64;
        Ok(Self {
            thresholds_deg: thresholds_deg.to_vec(),
            aa_at,
            mean_error_deg,
            per_image,
            no_detection_policy: format!("scored as {NO_DETECTION_ERROR_DEG} degrees"),
            psd: None,
        })
    }
}

/// Scores one image: its detections against the target, or the
/// no-detection penalty.
pub fn score_image(
    image_id: &str,
    detector: &str,
    detected: &[HomogeneousPoint],
    target: &HomogeneousPoint,
    k: &CameraIntrinsics,
) -> ImageResult {
    let (error_deg, no_detection) = match image_angle_error(detected, target, k) {
        Ok(e) => (e, false),
        Err(_) => (NO_DETECTION_ERROR_DEG, true),
    };
    ImageResult { image_id: image_id.into(), error_deg, detector: detector.into(), no_detection, intrinsics: *k }
}

/// Index of the candidate whose detections best match the target; ties go
/// to the lowest index. Candidates without detections score 90°.
pub fn best_of_k_select<T>(
    candidates: &[T],
    target: &HomogeneousPoint,
    k: &CameraIntrinsics,
    mut detector: impl FnMut(&T) -> Result<Vec<HomogeneousPoint>>,
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let e = match image_angle_error(&detector(c)?, target, k) {
            Ok(e) => e,
            Err(Error::NoDetections) => NO_DETECTION_ERROR_DEG,
            Err(e) => return Err(e),
        };
        if e < best.1 {
            best = (i, e);
        }
    }
    Ok(best)
}

/// Mean squared error over stacks of equally sized channels.
pub fn mse(a: &[ScalarField], b: &[ScalarField]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| !x.same_dims(y)) {
        return Err(Error::ShapeMismatch);
    }
    let sq: Vec<f64> = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)))
        .collect();
    if sq.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(math::pairwise_sum(&sq) / sq.len() as f64)
}

/// Peak signal-to-noise ratio for unit-range images; `None` when the
/// inputs are identical.
pub fn psnr(a: &[ScalarField], b: &[ScalarField]) -> Result<Option<f64>> {
    let m = mse(a, b)?;
    Ok((m > 0.0).then(|| -10.0 * math::log10(m)))
}
