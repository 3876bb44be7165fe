//! Diffusion guidance arithmetic against an abstract noise predictor.
//!
//! Covers forward noising, clean-latent prediction, text and dual
//! (text × condition) classifier-free guidance, two-step clean-latent
//! refinement, and masked inpainting with deterministic DDIM (η = 0) steps.
//! Masks are binary and broadcast over the trailing dimensions of a latent.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Cumulative products ᾱ_t for t = 1..T; ᾱ_0 = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    #[serde(rename = "T")]
    timesteps: usize,
    alpha_bar: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for DiffusionSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        if r.timesteps != r.alpha_bar.len() {
            return Err(Error::InvalidConfig("T differs from the length of alpha_bar"));
        }
        DiffusionSchedule::new(r.alpha_bar)
    }
}

impl From<DiffusionSchedule> for ScheduleRepr {
    fn from(s: DiffusionSchedule) -> Self {
        Self { timesteps: s.alpha_bar.len(), alpha_bar: s.alpha_bar }
    }
}

impl DiffusionSchedule {
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::InvalidConfig("schedule needs at least one timestep"));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidConfig("alpha_bar entries must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("alpha_bar must be strictly decreasing"));
        }
        Ok(Self { alpha_bar })
    }

    /// ᾱ_t = Π (1 − β_s) over s ≤ t.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidConfig("betas must lie in (0, 1)"));
        }
        let mut acc = 1.0;
        Self::new(
            betas
                .iter()
                .map(|b| {
                    acc *= 1.0 - b;
                    acc
                })
                .collect(),
        )
    }

    /// Betas spaced linearly between `beta_start` and `beta_end`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::from_betas(&spaced(timesteps, beta_start, beta_end, |b| b))
    }

    /// Betas whose square roots are spaced linearly.
    pub fn scaled_linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::from_betas(&spaced(timesteps, math::sqrt(beta_start), math::sqrt(beta_end), |b| b * b))
    }

    /// 1000-step scaled-linear schedule, β from 0.00085 to 0.012.
    pub fn latent_diffusion_default() -> Self {
        Self::scaled_linear(1000, 0.00085, 0.012).expect("valid constant schedule")
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.alpha_bar.len() => Ok(self.alpha_bar[t - 1]),
            t => Err(Error::TimestepOutOfRange { t, max: self.alpha_bar.len() }),
        }
    }
}

fn spaced(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![f(a)],
        _ => (0..n).map(|i| f(a + (b - a) * i as f64 / (n - 1) as f64)).collect(),
    }
}

/// `n` timesteps from `T` down to 1, evenly spaced and strictly decreasing.
pub fn uniform_steps(timesteps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || timesteps == 0 || n > timesteps {
        return Err(Error::InvalidConfig("step count must lie in 1..=T"));
    }
    if n == 1 {
        return Ok(alloc::vec![1]);
    }
    let span = (timesteps - 1) as f64;
    Ok((0..n).map(|i| timesteps - math::round(span * i as f64 / (n - 1) as f64) as usize).collect())
}

/// Dense real tensor, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr")]
pub struct LatentTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for LatentTensor {
    type Error = Error;
    fn try_from(r: TensorRepr) -> Result<Self> {
        LatentTensor::new(r.shape, r.data)
    }
}

impl LatentTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DimensionMismatch("data length differs from the product of the shape"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("tensor contains non-finite values"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: alloc::vec![1], data: alloc::vec![v] }
    }

    /// Standard-normal entries.
    pub fn gaussian<R: rand::Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch);
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max))
    }
}

/// `wa·a + wb·b`, dropping terms whose weight is exactly zero.
fn affine2(a: &LatentTensor, wa: f64, b: &LatentTensor, wb: f64) -> Result<LatentTensor> {
    match (wa == 0.0, wb == 0.0) {
        (true, true) => Ok(LatentTensor::zeros(a.shape.clone())).and_then(|z| z.zip_with(b, |z, _| z)),
        (true, false) => a.zip_with(b, |_, y| wb * y),
        (false, true) => a.zip_with(b, |x, _| wa * x),
        (false, false) => a.zip_with(b, |x, y| wa * x + wb * y),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    /// Text guidance scale.
    pub omega1: f64,
    /// Image-condition guidance scale.
    pub omega2: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self { omega1: 1.0, omega2: 1.0 }
    }
}

impl GuidanceWeights {
    pub fn new(omega1: f64, omega2: f64) -> Result<Self> {
        if !omega1.is_finite() || !omega2.is_finite() {
            return Err(Error::InvalidConfig("guidance weights must be finite"));
        }
        Ok(Self { omega1, omega2 })
    }
}

/// A noise model `ε̂(z_t, t, text, condition)`; the flags switch each
/// conditioning input between present and null.
pub trait NoisePredictor {
    fn predict(&mut self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> Result<LatentTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &mut P {
    fn predict(&mut self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> Result<LatentTensor> {
        (**self).predict(z, t, text_on, cond_on)
    }
}

fn checked_predict<P: NoisePredictor + ?Sized>(
    p: &mut P,
    z: &LatentTensor,
    t: usize,
    text_on: bool,
    cond_on: bool,
) -> Result<LatentTensor> {
    let out = p.predict(z, t, text_on, cond_on)?;
    if out.shape != z.shape {
        return Err(Error::PredictorShapeMismatch);
    }
    Ok(out)
}

/// `z_t = √ᾱ_t z₀ + √(1 − ᾱ_t) ε`.
pub fn add_noise(z0: &LatentTensor, eps: &LatentTensor, sched: &DiffusionSchedule, t: usize) -> Result<LatentTensor> {
    let ab = sched.alpha_bar(t)?;
    if t == 0 {
        return z0.zip_with(eps, |z, _| z);
    }
    let (a, b) = (math::sqrt(ab), math::sqrt(1.0 - ab));
    z0.zip_with(eps, |z, e| a * z + b * e)
}

/// `x̂₀ = (z_t − √(1 − ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(z_t: &LatentTensor, eps_hat: &LatentTensor, sched: &DiffusionSchedule, t: usize) -> Result<LatentTensor> {
    let ab = sched.alpha_bar(t)?;
    if t == 0 {
        return z_t.zip_with(eps_hat, |z, _| z);
    }
    let (a, b) = (math::sqrt(ab), math::sqrt(1.0 - ab));
    z_t.zip_with(eps_hat, |z, e| (z - b * e) / a)
}

/// `(1 − ω₁) ε_uc + ω₁ ε_c`.
pub fn cfg_text(eps_uc: &LatentTensor, eps_c: &LatentTensor, omega1: f64) -> Result<LatentTensor> {
    affine2(eps_uc, 1.0 - omega1, eps_c, omega1)
}

/// Dual guidance from all four (text, condition) corners: the condition
/// scale mixes within each text setting, then text guidance mixes those.
pub fn cfg_dual<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z_t: &LatentTensor,
    t: usize,
    w: GuidanceWeights,
) -> Result<LatentTensor> {
    let nn = checked_predict(predictor, z_t, t, false, false)?;
    let nc = checked_predict(predictor, z_t, t, false, true)?;
    let tn = checked_predict(predictor, z_t, t, true, false)?;
    let tc = checked_predict(predictor, z_t, t, true, true)?;
    let eps_c = affine2(&tn, 1.0 - w.omega2, &tc, w.omega2)?;
    let eps_uc = affine2(&nn, 1.0 - w.omega2, &nc, w.omega2)?;
    cfg_text(&eps_uc, &eps_c, w.omega1)
}

/// Same value as [`cfg_dual`], skipping predictor calls whose output would
/// be weighted by zero (two calls when ω₂ = 1, one when also ω₁ = 1).
pub fn cfg_dual_elided<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z_t: &LatentTensor,
    t: usize,
    w: GuidanceWeights,
) -> Result<LatentTensor> {
    let (w_null, w_cond) = (1.0 - w.omega2, w.omega2);
    let mut mix = |text_on: bool| -> Result<Option<LatentTensor>> {
        let a = if w_null != 0.0 { Some(checked_predict(predictor, z_t, t, text_on, false)?) } else { None };
        let b = if w_cond != 0.0 { Some(checked_predict(predictor, z_t, t, text_on, true)?) } else { None };
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(affine2(&a, w_null, &b, w_cond)?),
            (Some(a), None) => Some(affine2(&a, w_null, &a, 0.0)?),
            (None, Some(b)) => Some(affine2(&b, 0.0, &b, w_cond)?),
            (None, None) => None,
        })
    };
    let eps_uc = if 1.0 - w.omega1 != 0.0 { mix(false)? } else { None };
    let eps_c = if w.omega1 != 0.0 { mix(true)? } else { None };
    match (eps_uc, eps_c) {
        (Some(u), Some(c)) => cfg_text(&u, &c, w.omega1),
        (Some(u), None) => affine2(&u, 1.0 - w.omega1, &u, 0.0),
        (None, Some(c)) => affine2(&c, 0.0, &c, w.omega1),
        (None, None) => Ok(LatentTensor::zeros(z_t.shape.clone())),
    }
}

/// Clean-latent estimate refined through an intermediate timestep
/// `⌊t/2⌋`, re-noised deterministically with the first noise estimate.
pub fn two_step_x0<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z_t: &LatentTensor,
    t: usize,
    sched: &DiffusionSchedule,
    w: GuidanceWeights,
) -> Result<LatentTensor> {
    if t < 2 {
        return Err(Error::TimestepOutOfRange { t, max: sched.timesteps() });
    }
    sched.alpha_bar(t)?;
    let eps1 = cfg_dual(predictor, z_t, t, w)?;
    let x0 = predict_x0(z_t, &eps1, sched, t)?;
    let t_mid = t / 2;
    let z_mid = add_noise(&x0, &eps1, sched, t_mid)?;
    let eps2 = cfg_dual(predictor, &z_mid, t_mid, w)?;
    predict_x0(&z_mid, &eps2, sched, t_mid)
}

fn check_mask(mask: &LatentTensor, z: &LatentTensor) -> Result<()> {
    let (ms, zs) = (&mask.shape, &z.shape);
    if ms.len() > zs.len() || zs[zs.len() - ms.len()..] != ms[..] {
        return Err(Error::ShapeMismatch);
    }
    if mask.data.iter().any(|m| *m != 0.0 && *m != 1.0) {
        return Err(Error::MaskNotBinary);
    }
    Ok(())
}

/// `mask ? inside : outside`, the mask repeating over leading dimensions.
fn blend(mask: &LatentTensor, inside: &LatentTensor, outside: &LatentTensor) -> Result<LatentTensor> {
    check_mask(mask, inside)?;
    if inside.shape != outside.shape {
        return Err(Error::ShapeMismatch);
    }
    let m = mask.data.len();
    let data = (0..inside.data.len())
        .map(|i| if mask.data[i % m] == 1.0 { inside.data[i] } else { outside.data[i] })
        .collect();
    Ok(LatentTensor { shape: inside.shape.clone(), data })
}

/// One masked step from `t` to `t_next < t`: inside the mask a
/// deterministic DDIM step from the guided noise estimate, outside the
/// original latent noised to `t_next` with `fresh_eps`.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_step_to<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z_t: &LatentTensor,
    t: usize,
    t_next: usize,
    sched: &DiffusionSchedule,
    w: GuidanceWeights,
    mask: &LatentTensor,
    z0_orig: &LatentTensor,
    fresh_eps: &LatentTensor,
) -> Result<LatentTensor> {
    if t == 0 || t_next >= t {
        return Err(Error::TimestepOutOfRange { t, max: sched.timesteps() });
    }
    check_mask(mask, z_t)?;
    if z0_orig.shape != z_t.shape || fresh_eps.shape != z_t.shape {
        return Err(Error::ShapeMismatch);
    }
    let eps = cfg_dual(predictor, z_t, t, w)?;
    let x0 = predict_x0(z_t, &eps, sched, t)?;
    let z_pred = add_noise(&x0, &eps, sched, t_next)?;
    let z_ideal = add_noise(z0_orig, fresh_eps, sched, t_next)?;
    blend(mask, &z_pred, &z_ideal)
}

/// [`inpaint_step_to`] with `t_next = t − 1`.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_step<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z_t: &LatentTensor,
    t: usize,
    sched: &DiffusionSchedule,
    w: GuidanceWeights,
    mask: &LatentTensor,
    z0_orig: &LatentTensor,
    fresh_eps: &LatentTensor,
) -> Result<LatentTensor> {
    inpaint_step_to(predictor, z_t, t, t.saturating_sub(1), sched, w, mask, z0_orig, fresh_eps)
}

/// Mean squared difference.
pub fn controlnet_mse(eps: &LatentTensor, eps_hat: &LatentTensor) -> Result<f64> {
    if eps.shape != eps_hat.shape {
        return Err(Error::ShapeMismatch);
    }
    if eps.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sq: Vec<f64> = eps.data.iter().zip(&eps_hat.data).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(math::pairwise_sum(&sq) / eps.len() as f64)
}

/// Full masked sampling loop over `steps` (strictly decreasing, ending at
/// 1). Starts from the original latent noised with seeded Gaussian noise;
/// the last step predicts the clean latent inside the mask and restores
/// the original outside it.
pub fn run_inpainting<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    z0_orig: &LatentTensor,
    mask: &LatentTensor,
    sched: &DiffusionSchedule,
    w: GuidanceWeights,
    steps: &[usize],
    rng_seed: u64,
) -> Result<LatentTensor> {
    if steps.is_empty() || steps[steps.len() - 1] != 1 || steps.windows(2).any(|s| s[1] >= s[0]) {
        return Err(Error::InvalidConfig("steps must be strictly decreasing and end at 1"));
    }
    sched.alpha_bar(steps[0])?;
    check_mask(mask, z0_orig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = z0_orig.shape.clone();
    let noise = LatentTensor::gaussian(shape.clone(), &mut rng);
    let mut z = add_noise(z0_orig, &noise, sched, steps[0])?;
    for pair in steps.windows(2) {
        let fresh = LatentTensor::gaussian(shape.clone(), &mut rng);
        z = inpaint_step_to(predictor, &z, pair[0], pair[1], sched, w, mask, z0_orig, &fresh)?;
    }
    let eps = cfg_dual(predictor, &z, 1, w)?;
    let x0 = predict_x0(&z, &eps, sched, 1)?;
    blend(mask, &x0, z0_orig)
}

/// Predictors that need no model.
pub mod mock {
    use super::*;

    /// Constant output per (text, condition) corner, ordered
    /// `[(∅,∅), (∅,c), (t,∅), (t,c)]`.
    #[derive(Clone, Debug)]
    pub struct CornerConstants(pub [f64; 4]);

    impl NoisePredictor for CornerConstants {
        fn predict(&mut self, z: &LatentTensor, _t: usize, text_on: bool, cond_on: bool) -> Result<LatentTensor> {
            let v = self.0[2 * text_on as usize + cond_on as usize];
            Ok(LatentTensor::filled(z.shape.clone(), v))
        }
    }

    /// Always returns the same tensor.
    #[derive(Clone, Debug)]
    pub struct Fixed(pub LatentTensor);

    impl NoisePredictor for Fixed {
        fn predict(&mut self, _z: &LatentTensor, _t: usize, _text: bool, _cond: bool) -> Result<LatentTensor> {
            Ok(self.0.clone())
        }
    }

    /// The exact noise separating `z` from a known clean latent:
    /// `(z − √ᾱ_t z₀) / √(1 − ᾱ_t)`.
    #[derive(Clone, Debug)]
    pub struct Oracle {
        pub z0: LatentTensor,
        pub schedule: DiffusionSchedule,
    }

    impl NoisePredictor for Oracle {
        fn predict(&mut self, z: &LatentTensor, t: usize, _text: bool, _cond: bool) -> Result<LatentTensor> {
            let ab = self.schedule.alpha_bar(t)?;
            if t == 0 {
                return Ok(LatentTensor::zeros(z.shape.clone()));
            }
            let (a, b) = (math::sqrt(ab), math::sqrt(1.0 - ab));
            z.zip_with(&self.z0, |z, x| (z - a * x) / b)
        }
    }

    /// Wraps a predictor and counts its calls.
    #[derive(Debug)]
    pub struct Counting<P> {
        pub inner: P,
        pub calls: usize,
    }

    impl<P> Counting<P> {
        pub fn new(inner: P) -> Self {
            Self { inner, calls: 0 }
        }
    }

    impl<P: NoisePredictor> NoisePredictor for Counting<P> {
        fn predict(&mut self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> Result<LatentTensor> {
            self.calls += 1;
            self.inner.predict(z, t, text_on, cond_on)
        }
    }

    /// Fails every call; for error-path tests.
    #[derive(Clone, Debug)]
    pub struct Failing(pub String);

    impl NoisePredictor for Failing {
        fn predict(&mut self, _z: &LatentTensor, _t: usize, _text: bool, _cond: bool) -> Result<LatentTensor> {
            Err(Error::Predictor(self.0.clone()))
        }
    }
}
