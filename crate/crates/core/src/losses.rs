//! Gated network output and the training losses around it.
//!
//! The gate splits a 4-channel feature map into a 3-channel latent and a
//! blur-mask logit; only pixels the mask marks as blurred receive the
//! residual. Losses are the mask MSE, MAE, negative SSIM and the
//! multi-scale frequency reconstruction (MSFR) loss, each wrapped in a
//! minimum over the nine `{-1, 0, 1}^2` shifts of the prediction.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2::{to_complex, Fft2};
use crate::image::{downsample2, overlap_pair, pyramid, BlurMask, Image};
use crate::metrics;

/// Number of scales used by the MSFR loss.
pub const MSFR_LEVELS: usize = 3;

/// Pre-activation network features: 3 latent channels plus one mask logit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub const CHANNELS: usize = 4;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::dims(
                format!("{} samples", width * height * Self::CHANNELS),
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map must be finite"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * Self::CHANNELS);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }
}

/// Logistic function kept strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone)]
pub struct GateOutput {
    pub pred_sharp: Image,
    pub pred_mask: BlurMask,
}

/// `mask = sigmoid(logit)`, `pred = blurred + latent * mask`.
pub fn gate_forward(feat: &FeatureMap, blurred: &Image) -> Result<GateOutput> {
    if blurred.width() != feat.width || blurred.height() != feat.height || blurred.channels() != 3 {
        return Err(Error::dims(
            format!("{}x{}x3", feat.width, feat.height),
            blurred.dims_string(),
        ));
    }
    let n = feat.width * feat.height;
    let logits = &feat.data[3 * n..4 * n];
    let mask: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut pred = blurred.clone();
    for c in 0..3 {
        let latent = &feat.data[c * n..(c + 1) * n];
        for ((p, l), m) in pred.plane_mut(c).iter_mut().zip(latent).zip(&mask) {
            *p += l * m;
        }
    }
    Ok(GateOutput {
        pred_sharp: pred,
        pred_mask: BlurMask::from_vec(feat.width, feat.height, mask)?,
    })
}

pub fn loss_mse(pred: &Image, target: &Image) -> Result<f64> {
    metrics::mse(pred, target)
}

pub fn loss_mask(pred: &BlurMask, target: &BlurMask) -> Result<f64> {
    target.check_dims(pred.width(), pred.height())?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.data().len() as f64)
}

pub fn loss_mae(pred: &Image, target: &Image) -> Result<f64> {
    pred.check_same_shape(target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / pred.data().len() as f64)
}

/// Negative mean SSIM; `-1` at a perfect prediction.
pub fn loss_ssim(pred: &Image, target: &Image) -> Result<f64> {
    Ok(-metrics::ssim(target, pred)?)
}

/// Spectrum of `pred - target` per channel; the DFT is linear so one
/// transform of the difference replaces two.
fn diff_spectrum(pred: &Image, target: &Image) -> Vec<Vec<Complex64>> {
    let fft = Fft2::new(pred.width(), pred.height());
    (0..pred.channels())
        .map(|c| {
            let d: Vec<f64> = pred
                .plane(c)
                .iter()
                .zip(target.plane(c))
                .map(|(a, b)| a - b)
                .collect();
            let mut buf = to_complex(&d);
            fft.forward(&mut buf);
            buf
        })
        .collect()
}

/// `(1 / t) * ||F(pred) - F(target)||_1` at one scale, with real and
/// imaginary parts counted separately and `t = 2 * C * H * W`.
pub fn msfr_level(pred: &Image, target: &Image) -> Result<f64> {
    pred.check_same_shape(target)?;
    let spectra = diff_spectrum(pred, target);
    let l1: f64 = spectra
        .iter()
        .flat_map(|s| s.iter())
        .map(|z| z.re.abs() + z.im.abs())
        .sum();
    Ok(l1 / msfr_element_count(pred))
}

fn msfr_element_count(img: &Image) -> f64 {
    (2 * img.data().len()) as f64
}

/// MSFR summed over matching pyramid levels.
pub fn msfr(pred_pyramid: &[Image], target_pyramid: &[Image]) -> Result<f64> {
    if pred_pyramid.len() != target_pyramid.len() || pred_pyramid.is_empty() {
        return Err(Error::dims(
            format!("{} levels", target_pyramid.len()),
            format!("{} levels", pred_pyramid.len()),
        ));
    }
    pred_pyramid
        .iter()
        .zip(target_pyramid)
        .map(|(p, t)| msfr_level(p, t))
        .sum()
}

/// MSFR on pyramids built from two full-resolution images.
pub fn msfr_image(pred: &Image, target: &Image, levels: usize) -> Result<f64> {
    pred.check_same_shape(target)?;
    msfr(&pyramid(pred, levels), &pyramid(target, levels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMin {
    pub value: f64,
    pub dx: i64,
    pub dy: i64,
}

pub const UNIT_SHIFTS: [(i64, i64); 9] = [
    (0, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Minimum of `loss(pred', target')` over the nine unit shifts, where the
/// primed images are the overlap of `pred` shifted by `(dx, dy)` with
/// `target`. Ties keep the earlier shift in [`UNIT_SHIFTS`], so `(0, 0)`
/// wins any tie.
pub fn shift_invariant<F>(loss: F, pred: &Image, target: &Image) -> Result<ShiftMin>
where
    F: Fn(&Image, &Image) -> Result<f64> + Sync,
{
    pred.check_same_shape(target)?;
    if pred.width() < 3 || pred.height() < 3 {
        return Err(Error::invalid(
            "shift-invariant loss needs at least 3x3 inputs",
        ));
    }
    let values: Vec<Result<f64>> = UNIT_SHIFTS
        .par_iter()
        .map(|&(dx, dy)| {
            let (p, t) = overlap_pair(pred, target, dx, dy)?;
            loss(&p, &t)
        })
        .collect();
    let mut best: Option<ShiftMin> = None;
    for (&(dx, dy), v) in UNIT_SHIFTS.iter().zip(values) {
        let value = v?;
        if best.is_none_or(|b| value < b.value) {
            best = Some(ShiftMin { value, dx, dy });
        }
    }
    Ok(best.expect("nine shifts evaluated"))
}

/// Shift-invariant mask loss.
pub fn shift_invariant_mask(pred: &BlurMask, target: &BlurMask) -> Result<ShiftMin> {
    target.check_dims(pred.width(), pred.height())?;
    shift_invariant(loss_mse, &pred.to_image(), &target.to_image())
}

/// Shift-invariant MSFR over a pyramid: each level is shifted by the same
/// integer offset at its own resolution.
pub fn shift_invariant_msfr(pred_pyramid: &[Image], target_pyramid: &[Image]) -> Result<ShiftMin> {
    if pred_pyramid.len() != target_pyramid.len() || pred_pyramid.is_empty() {
        return Err(Error::dims(
            format!("{} levels", target_pyramid.len()),
            format!("{} levels", pred_pyramid.len()),
        ));
    }
    let mut best: Option<ShiftMin> = None;
    for &(dx, dy) in &UNIT_SHIFTS {
        let mut value = 0.0;
        for (p, t) in pred_pyramid.iter().zip(target_pyramid) {
            let (pc, tc) = overlap_pair(p, t, dx, dy)?;
            value += msfr_level(&pc, &tc)?;
        }
        if best.is_none_or(|b| value < b.value) {
            best = Some(ShiftMin { value, dx, dy });
        }
    }
    Ok(best.expect("nine shifts evaluated"))
}

/// Weights of the mask, MAE, SSIM and MSFR terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub mae: f64,
    pub ssim: f64,
    pub msfr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 0.01,
            mae: 1.0,
            ssim: 1.0,
            msfr: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mask, self.mae, self.ssim, self.msfr];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mask: f64,
    pub mae: f64,
    pub ssim: f64,
    pub msfr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub weights: LossWeights,
    /// Shift-invariant terms before weighting.
    pub terms: LossTerms,
    pub weighted: LossTerms,
    pub total: f64,
}

/// Weighted sum of the four shift-invariant terms.
///
/// MAE and SSIM are averaged over the pyramid levels with equal weight;
/// MSFR sums its per-level spectra as part of its definition; the mask term
/// is evaluated at full resolution.
pub fn total_loss(
    pred_pyramid: &[Image],
    target_pyramid: &[Image],
    pred_mask: &BlurMask,
    target_mask: &BlurMask,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if pred_pyramid.len() != target_pyramid.len() || pred_pyramid.is_empty() {
        return Err(Error::dims(
            format!("{} levels", target_pyramid.len()),
            format!("{} levels", pred_pyramid.len()),
        ));
    }
    let levels = pred_pyramid.len() as f64;
    let mut mae = 0.0;
    let mut ssim = 0.0;
    for (p, t) in pred_pyramid.iter().zip(target_pyramid) {
        mae += shift_invariant(loss_mae, p, t)?.value;
        ssim += shift_invariant(loss_ssim, p, t)?.value;
    }
    let terms = LossTerms {
        mask: shift_invariant_mask(pred_mask, target_mask)?.value,
        mae: mae / levels,
        ssim: ssim / levels,
        msfr: shift_invariant_msfr(pred_pyramid, target_pyramid)?.value,
    };
    let weighted = LossTerms {
        mask: weights.mask * terms.mask,
        mae: weights.mae * terms.mae,
        ssim: weights.ssim * terms.ssim,
        msfr: weights.msfr * terms.msfr,
    };
    Ok(LossBreakdown {
        weights: *weights,
        terms,
        weighted,
        total: weighted.mask + weighted.mae + weighted.ssim + weighted.msfr,
    })
}

/// A scalar loss of a prediction against a fixed target.
pub trait DifferentiableLoss: Sync {
    fn name(&self) -> &'static str;

    fn value(&self, pred: &Image) -> Result<f64>;

    /// Analytic gradient, or `None` when only numeric checking is possible.
    fn gradient(&self, pred: &Image) -> Option<Result<Image>>;

    /// True when a perturbation of `eps` at sample `index` may cross a
    /// non-differentiable point.
    fn near_kink(&self, _pred: &Image, _index: usize, _eps: f64) -> bool {
        false
    }
}

pub struct MseLoss {
    pub target: Image,
}

pub struct MaeLoss {
    pub target: Image,
}

pub struct SsimLoss {
    pub target: Image,
}

pub struct MsfrLoss {
    pub target: Image,
    pub levels: usize,
}

impl DifferentiableLoss for MseLoss {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn value(&self, pred: &Image) -> Result<f64> {
        loss_mse(pred, &self.target)
    }

    fn gradient(&self, pred: &Image) -> Option<Result<Image>> {
        Some(pred.check_same_shape(&self.target).map(|_| {
            let n = pred.data().len() as f64;
            let mut g = pred.clone();
            for (v, t) in g.data_mut().iter_mut().zip(self.target.data()) {
                *v = 2.0 * (*v - t) / n;
            }
            g
        }))
    }
}

impl DifferentiableLoss for MaeLoss {
    fn name(&self) -> &'static str {
        "mae"
    }

    fn value(&self, pred: &Image) -> Result<f64> {
        loss_mae(pred, &self.target)
    }

    fn gradient(&self, pred: &Image) -> Option<Result<Image>> {
        Some(pred.check_same_shape(&self.target).map(|_| {
            let n = pred.data().len() as f64;
            let mut g = pred.clone();
            for (v, t) in g.data_mut().iter_mut().zip(self.target.data()) {
                *v = signum0(*v - t) / n;
            }
            g
        }))
    }

    fn near_kink(&self, pred: &Image, index: usize, eps: f64) -> bool {
        (pred.data()[index] - self.target.data()[index]).abs() <= eps
    }
}

impl DifferentiableLoss for SsimLoss {
    fn name(&self) -> &'static str {
        "ssim"
    }

    fn value(&self, pred: &Image) -> Result<f64> {
        loss_ssim(pred, &self.target)
    }

    fn gradient(&self, _pred: &Image) -> Option<Result<Image>> {
        None
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Upsamples a gradient through one 2x2 box-average step.
fn box_adjoint(grad: &Image, width: usize, height: usize) -> Image {
    let mut out = Image::new(width, height, grad.channels()).expect("valid shape");
    for c in 0..grad.channels() {
        let g = grad.plane(c);
        let o = out.plane_mut(c);
        for y in 0..grad.height() {
            for x in 0..grad.width() {
                let v = 0.25 * g[y * grad.width() + x];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    o[(2 * y + dy) * width + 2 * x + dx] += v;
                }
            }
        }
    }
    out
}

impl MsfrLoss {
    fn level_gradient(pred: &Image, target: &Image) -> Image {
        let (w, h) = (pred.width(), pred.height());
        let t = msfr_element_count(pred);
        let fft = Fft2::new(w, h);
        let mut g = Image::new(w, h, pred.channels()).expect("valid shape");
        for (c, spec) in diff_spectrum(pred, target).into_iter().enumerate() {
            // d/dx_a sum_u |Re D_u| + |Im D_u| = Re( sum_u conj(S_u) e^{-i theta(u, a)} )
            let mut buf: Vec<Complex64> = spec
                .iter()
                .map(|z| Complex64::new(signum0(z.re), -signum0(z.im)))
                .collect();
            fft.forward(&mut buf);
            for (o, z) in g.plane_mut(c).iter_mut().zip(&buf) {
                *o = z.re / t;
            }
        }
        g
    }
}

impl DifferentiableLoss for MsfrLoss {
    fn name(&self) -> &'static str {
        "msfr"
    }

    fn value(&self, pred: &Image) -> Result<f64> {
        msfr_image(pred, &self.target, self.levels)
    }

    fn gradient(&self, pred: &Image) -> Option<Result<Image>> {
        if let Err(e) = pred.check_same_shape(&self.target) {
            return Some(Err(e));
        }
        let pp = pyramid(pred, self.levels);
        let tp = pyramid(&self.target, self.levels);
        let mut acc: Option<Image> = None;
        for k in (0..pp.len()).rev() {
            let mut g = Self::level_gradient(&pp[k], &tp[k]);
            if let Some(coarse) = acc.take() {
                let up = box_adjoint(&coarse, pp[k].width(), pp[k].height());
                for (a, b) in g.data_mut().iter_mut().zip(up.data()) {
                    *a += b;
                }
            }
            acc = Some(g);
        }
        acc.map(Ok)
    }

    fn near_kink(&self, pred: &Image, index: usize, eps: f64) -> bool {
        let n = pred.pixel_count();
        let c = index / n;
        let (mut x, mut y) = ((index % n) % pred.width(), (index % n) / pred.width());
        let pp = pyramid(pred, self.levels);
        let tp = pyramid(&self.target, self.levels);
        let mut reach = eps;
        for (p, t) in pp.iter().zip(&tp) {
            if x >= p.width() || y >= p.height() {
                break;
            }
            let spec = &diff_spectrum(p, t)[c];
            let (w, h) = (p.width() as f64, p.height() as f64);
            for v in 0..p.height() {
                for u in 0..p.width() {
                    let th = 2.0
                        * std::f64::consts::PI
                        * (u as f64 * x as f64 / w + v as f64 * y as f64 / h);
                    let z = spec[v * p.width() + u];
                    if (z.re.abs() <= 2.0 * reach && th.cos().abs() > 1e-9)
                        || (z.im.abs() <= 2.0 * reach && th.sin().abs() > 1e-9)
                    {
                        return true;
                    }
                }
            }
            x /= 2;
            y /= 2;
            reach *= 0.25;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub eps: f64,
    /// False when no analytic gradient exists and the report compares
    /// central differences at `eps` and `eps / 2` instead.
    pub analytic: bool,
    pub checked: usize,
    /// `(x, y, channel)` of coordinates skipped at a kink.
    pub skipped: Vec<[usize; 3]>,
    pub max_abs_error: f64,
    /// `max |g - g_fd| / max(|g|, |g_fd|)` over the checked coordinates.
    pub max_rel_error: f64,
}

/// Compares analytic gradients with central differences at `samples`
/// (at least 32) pseudo-random coordinates.
pub fn grad_check(
    loss: &dyn DifferentiableLoss,
    at: &Image,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    use rand::seq::index::sample;
    use rand::SeedableRng;

    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let total = at.data().len();
    let k = samples.max(32).min(total);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, k).into_vec();
    idx.sort_unstable();

    let central = |i: usize, h: f64| -> Result<f64> {
        let mut p = at.clone();
        p.data_mut()[i] += h;
        let up = loss.value(&p)?;
        p.data_mut()[i] -= 2.0 * h;
        let down = loss.value(&p)?;
        Ok((up - down) / (2.0 * h))
    };

    let analytic = loss.gradient(at).transpose()?;
    let n = at.pixel_count();
    let mut report = GradCheckReport {
        loss: loss.name().to_string(),
        eps,
        analytic: analytic.is_some(),
        checked: 0,
        skipped: Vec::new(),
        max_abs_error: 0.0,
        max_rel_error: 0.0,
    };
    let mut scale = 0.0f64;
    for i in idx {
        let coord = [(i % n) % at.width(), (i % n) / at.width(), i / n];
        if loss.near_kink(at, i, eps) {
            report.skipped.push(coord);
            continue;
        }
        let numeric = central(i, eps)?;
        let reference = match &analytic {
            Some(g) => g.data()[i],
            None => central(i, eps / 2.0)?,
        };
        report.max_abs_error = report.max_abs_error.max((reference - numeric).abs());
        scale = scale.max(reference.abs()).max(numeric.abs());
        report.checked += 1;
    }
    report.max_rel_error = if scale > 0.0 {
        report.max_abs_error / scale
    } else {
        0.0
    };
    Ok(report)
}

/// Convenience: the downsampled copy used as the next MSFR level.
pub fn next_level(img: &Image) -> Result<Image> {
    downsample2(img)
}
