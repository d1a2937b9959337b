//! Full-frame and blur-region quality metrics: PSNR, SSIM, mask-weighted
//! PSNR/SSIM and shift-aligned PSNR.
//!
//! The weighted variants evaluate PSNR pixel by pixel, which is undefined at
//! zero error; the per-pixel squared error is floored by [`WEIGHTED_EPS`], so
//! a perfect prediction scores `10 log10(1 / 1e-8) = 80 dB`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BlurMask, Image};

/// PSNR reported when the mean squared error falls below [`MSE_FLOOR`].
pub const PSNR_CAP: f64 = 100.0;
pub const MSE_FLOOR: f64 = 1e-10;
/// Floor added to per-pixel squared error inside weighted PSNR.
pub const WEIGHTED_EPS: f64 = 1e-8;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.data().len() as f64)
}

pub fn psnr(sharp: &Image, pred: &Image, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(sharp, pred)?, peak))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    taps
}

/// Separable Gaussian blur, truncated at the frame edge and renormalized over
/// the in-frame taps.
fn gaussian_blur(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for k in -r..=r {
                let xx = x as isize + k;
                if xx >= 0 && (xx as usize) < w {
                    let t = taps[(k + r) as usize];
                    acc += t * row[xx as usize];
                    norm += t;
                }
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for k in -r..=r {
                let yy = y as isize + k;
                if yy >= 0 && (yy as usize) < h {
                    let t = taps[(k + r) as usize];
                    acc += t * tmp[yy as usize * w + x];
                    norm += t;
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// Per-pixel, per-channel SSIM with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim_map(sharp: &Image, pred: &Image) -> Result<Image> {
    sharp.check_same_shape(pred)?;
    let (w, h) = (sharp.width(), sharp.height());
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let planes: Vec<Vec<f64>> = (0..sharp.channels())
        .into_par_iter()
        .map(|c| {
            let x = sharp.plane(c);
            let y = pred.plane(c);
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
            let mx = gaussian_blur(x, w, h, &taps);
            let my = gaussian_blur(y, w, h, &taps);
            let exx = gaussian_blur(&xx, w, h, &taps);
            let eyy = gaussian_blur(&yy, w, h, &taps);
            let exy = gaussian_blur(&xy, w, h, &taps);
            (0..w * h)
                .map(|i| {
                    let (mx, my) = (mx[i], my[i]);
                    let sxx = exx[i] - mx * mx;
                    let syy = eyy[i] - my * my;
                    let sxy = exy[i] - mx * my;
                    ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sxx + syy + c2))
                })
                .collect()
        })
        .collect();
    Image::from_planes(w, h, sharp.channels(), planes.concat())
}

pub fn ssim(sharp: &Image, pred: &Image) -> Result<f64> {
    let map = ssim_map(sharp, pred)?;
    Ok(map.data().iter().sum::<f64>() / map.data().len() as f64)
}

fn check_mask(sharp: &Image, mask: &BlurMask) -> Result<f64> {
    mask.check_dims(sharp.width(), sharp.height())?;
    let total = mask.sum();
    if total <= 0.0 {
        return Err(Error::EmptyRegion);
    }
    Ok(total)
}

/// Mask-weighted mean of per-pixel PSNR.
pub fn weighted_psnr(sharp: &Image, pred: &Image, mask: &BlurMask, peak: f64) -> Result<f64> {
    sharp.check_same_shape(pred)?;
    let total = check_mask(sharp, mask)?;
    let n = sharp.pixel_count();
    let ch = sharp.channels();
    let mut acc = 0.0;
    for i in 0..n {
        let m = mask.data()[i];
        if m == 0.0 {
            continue;
        }
        let mut se = 0.0;
        for c in 0..ch {
            let d = sharp.plane(c)[i] - pred.plane(c)[i];
            se += d * d;
        }
        se /= ch as f64;
        acc += m * 10.0 * (peak * peak / (se + WEIGHTED_EPS)).log10();
    }
    Ok(acc / total)
}

/// Mask-weighted mean of the channel-averaged SSIM map.
pub fn weighted_ssim(sharp: &Image, pred: &Image, mask: &BlurMask) -> Result<f64> {
    let total = check_mask(sharp, mask)?;
    let map = ssim_map(sharp, pred)?;
    Ok(weighted_ssim_from_map(&map, mask) / total)
}

fn weighted_ssim_from_map(map: &Image, mask: &BlurMask) -> f64 {
    let ch = map.channels() as f64;
    let mut acc = 0.0;
    for i in 0..map.pixel_count() {
        let m = mask.data()[i];
        if m == 0.0 {
            continue;
        }
        let s: f64 = (0..map.channels()).map(|c| map.plane(c)[i]).sum();
        acc += m * s / ch;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPsnr {
    pub psnr: f64,
    /// Shift `(dx, dy)` applied to the prediction that maximizes PSNR.
    pub dx: i64,
    pub dy: i64,
}

#[derive(Debug, Clone, Copy)]
pub struct AlignOptions<'a> {
    pub radius: usize,
    pub peak: f64,
    /// Restrict the error to mask-positive pixels of the reference frame.
    pub mask: Option<&'a BlurMask>,
}

impl Default for AlignOptions<'_> {
    fn default() -> Self {
        Self {
            radius: 8,
            peak: 1.0,
            mask: None,
        }
    }
}

/// PSNR maximized over integer shifts of `pred` within `radius`, each
/// evaluated on the overlap of the shifted prediction with `sharp`.
pub fn aligned_psnr(sharp: &Image, pred: &Image, opts: &AlignOptions) -> Result<AlignedPsnr> {
    sharp.check_same_shape(pred)?;
    let r = opts.radius as i64;
    let (w, h) = (sharp.width() as i64, sharp.height() as i64);
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return Err(Error::invalid(format!(
            "aligned psnr with radius {r} needs at least {}x{}",
            2 * r + 1,
            2 * r + 1
        )));
    }
    if let Some(m) = opts.mask {
        m.check_dims(sharp.width(), sharp.height())?;
    }
    let shifts: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect();
    let scores: Vec<Option<f64>> = shifts
        .par_iter()
        .map(|&(dx, dy)| shifted_mse(sharp, pred, dx, dy, opts.mask))
        .collect();
    let mut best: Option<AlignedPsnr> = None;
    for (&(dx, dy), mse) in shifts.iter().zip(scores) {
        let Some(mse) = mse else { continue };
        let cand = AlignedPsnr {
            psnr: psnr_from_mse(mse, opts.peak),
            dx,
            dy,
        };
        let better = match best {
            None => true,
            Some(b) => {
                cand.psnr > b.psnr
                    || (cand.psnr == b.psnr
                        && cand.dx.abs() + cand.dy.abs() < b.dx.abs() + b.dy.abs())
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(Error::EmptyRegion)
}

/// MSE between `sharp(x, y)` and `pred(x - dx, y - dy)` over their overlap.
fn shifted_mse(
    sharp: &Image,
    pred: &Image,
    dx: i64,
    dy: i64,
    mask: Option<&BlurMask>,
) -> Option<f64> {
    let (w, h) = (sharp.width() as i64, sharp.height() as i64);
    let (x0, x1) = (dx.max(0), (w + dx).min(w));
    let (y0, y1) = (dy.max(0), (h + dy).min(h));
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..sharp.channels() {
        let s = sharp.plane(c);
        let p = pred.plane(c);
        for y in y0..y1 {
            let srow = (y * w) as usize;
            let prow = ((y - dy) * w) as usize;
            for x in x0..x1 {
                if let Some(m) = mask {
                    if !m.is_set(x as usize, y as usize) {
                        continue;
                    }
                }
                let d = s[srow + x as usize] - p[prow + (x - dx) as usize];
                acc += d * d;
                count += 1;
            }
        }
    }
    (count > 0).then(|| acc / count as f64)
}

/// One row of an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "PSNR")]
    pub psnr: f64,
    #[serde(rename = "SSIM")]
    pub ssim: f64,
    #[serde(rename = "PSNR_w")]
    pub psnr_w: f64,
    #[serde(rename = "SSIM_w")]
    pub ssim_w: f64,
    #[serde(rename = "PSNR_a")]
    pub psnr_a: f64,
    pub align_shift: [i64; 2],
}

impl MetricReport {
    /// Column-wise mean; the alignment shift of the mean row is zero.
    pub fn mean(rows: &[MetricReport]) -> Option<MetricReport> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            psnr_w: avg(|r| r.psnr_w),
            ssim_w: avg(|r| r.ssim_w),
            psnr_a: avg(|r| r.psnr_a),
            align_shift: [0, 0],
        })
    }
}

/// All five table metrics for one prediction.
pub fn evaluate_pair(
    sharp: &Image,
    pred: &Image,
    mask: &BlurMask,
    align: &AlignOptions,
) -> Result<MetricReport> {
    sharp.check_same_shape(pred)?;
    let total = check_mask(sharp, mask)?;
    let map = ssim_map(sharp, pred)?;
    let ssim = map.data().iter().sum::<f64>() / map.data().len() as f64;
    let ssim_w = weighted_ssim_from_map(&map, mask) / total;
    let a = aligned_psnr(sharp, pred, align)?;
    Ok(MetricReport {
        psnr: psnr(sharp, pred, align.peak)?,
        ssim,
        psnr_w: weighted_psnr(sharp, pred, mask, align.peak)?,
        ssim_w,
        psnr_a: a.psnr,
        align_shift: [a.dx, a.dy],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::shift;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn identical_images_are_capped() {
        let a = random(16, 16, 3, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let m = BlurMask::ones(16, 16);
        assert!((weighted_psnr(&a, &a, &m, 1.0).unwrap() - 80.0).abs() < 1e-9);
        assert_eq!(weighted_ssim(&a, &a, &m).unwrap(), 1.0);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::filled(8, 8, 3, 0.0).unwrap();
        let b = Image::filled(8, 8, 3, 0.1).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_with_full_mask_is_mean_of_map() {
        let a = random(12, 10, 3, 2);
        let b = random(12, 10, 3, 3);
        let m = BlurMask::ones(12, 10);
        let map = ssim_map(&a, &b).unwrap();
        let mean = map.data().iter().sum::<f64>() / map.data().len() as f64;
        assert!((weighted_ssim(&a, &b, &m).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_errors() {
        let a = random(8, 8, 1, 4);
        let m = BlurMask::zeros(8, 8);
        assert!(matches!(
            weighted_psnr(&a, &a, &m, 1.0),
            Err(Error::EmptyRegion)
        ));
        assert!(matches!(weighted_ssim(&a, &a, &m), Err(Error::EmptyRegion)));
    }

    #[test]
    fn aligned_psnr_recovers_shift() {
        let s = random(32, 32, 3, 5);
        let p = shift(&s, 3, 2).unwrap().image;
        let a = aligned_psnr(&s, &p, &AlignOptions::default()).unwrap();
        assert_eq!(a.psnr, PSNR_CAP);
        assert_eq!((a.dx, a.dy), (-3, -2));
        assert!(a.psnr >= psnr(&s, &p, 1.0).unwrap());
    }

    #[test]
    fn aligned_psnr_sign_flips_when_swapped() {
        let s = random(24, 24, 1, 6);
        let p = shift(&s, -2, 1).unwrap().image.map(|v| v * 0.9 + 0.05);
        let ab = aligned_psnr(&s, &p, &AlignOptions::default()).unwrap();
        let ba = aligned_psnr(&p, &s, &AlignOptions::default()).unwrap();
        assert_eq!((ab.dx, ab.dy), (-ba.dx, -ba.dy));
    }

    #[test]
    fn aligned_psnr_rejects_small_frames() {
        let s = random(10, 10, 1, 7);
        assert!(aligned_psnr(&s, &s, &AlignOptions::default()).is_err());
    }

    #[test]
    fn shrinking_mask_to_worst_pixels_does_not_raise_weighted_psnr() {
        let s = random(16, 16, 3, 8);
        let p = random(16, 16, 3, 9);
        let full = BlurMask::ones(16, 16);
        let se: Vec<f64> = (0..256)
            .map(|i| {
                (0..3)
                    .map(|c| (s.plane(c)[i] - p.plane(c)[i]).powi(2))
                    .sum()
            })
            .collect();
        let mut sorted = se.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let cut = sorted[40];
        let worst = BlurMask::from_fn(16, 16, |x, y| if se[y * 16 + x] >= cut { 1.0 } else { 0.0 });
        assert!(
            weighted_psnr(&s, &p, &worst, 1.0).unwrap()
                <= weighted_psnr(&s, &p, &full, 1.0).unwrap()
        );
    }

    #[test]
    fn identity_report() {
        let s = random(20, 20, 3, 10);
        let m = BlurMask::from_predicate(20, 20, |x, _| x < 5);
        let r = evaluate_pair(&s, &s, &m, &AlignOptions::default()).unwrap();
        assert_eq!(r.psnr, PSNR_CAP);
        assert_eq!(r.ssim, 1.0);
        assert!((r.psnr_w - 80.0).abs() < 1e-9);
        assert_eq!(r.ssim_w, 1.0);
        assert_eq!(r.psnr_a, PSNR_CAP);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"PSNR_w\"") && json.contains("\"PSNR_a\""));
    }
}
