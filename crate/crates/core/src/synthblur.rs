//! Synthetic local blur: a masked foreground is averaged over a short
//! rigid motion, smoothed with a 5×5 box kernel and composited back over
//! the sharp frame.
//!
//! Compositing uses premultiplied color: with `P` the averaged masked
//! color and `A` the averaged coverage, `out = P + (1 - A) · sharp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BlurMask, Image};

/// Longest blur trail accepted, pixels.
pub const MAX_SPAN: f64 = 70.0;
pub const KERNEL_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum MotionMode {
    /// Linear path from rest to `(dx, dy)`.
    Translation { dx: f64, dy: f64 },
    /// Rotation from rest to `degrees` about the mask centroid.
    Rotation { degrees: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthBlurParams {
    pub motion: MotionMode,
    pub steps: usize,
    /// Apply the 5×5 box kernel.
    pub kernel: bool,
    /// Apply the kernel before motion averaging instead of after.
    pub kernel_first: bool,
}

impl SynthBlurParams {
    pub fn translation(dx: f64, dy: f64, steps: usize) -> Self {
        Self {
            motion: MotionMode::Translation { dx, dy },
            steps,
            kernel: true,
            kernel_first: false,
        }
    }

    pub fn rotation(degrees: f64, steps: usize) -> Self {
        Self {
            motion: MotionMode::Rotation { degrees },
            steps,
            kernel: true,
            kernel_first: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBlurOutput {
    pub image: Image,
    /// Pixels with nonzero averaged coverage: the mask actually blurred.
    pub footprint: BlurMask,
    /// Set when the input mask was empty and the input was returned as is.
    pub empty_mask: bool,
}

struct Layer {
    planes: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

/// Bilinear sample with zero outside the frame.
fn sample_zero(p: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return 0.0;
    }
    let get = |ix: i64, iy: i64| {
        if ix < 0 || iy < 0 || ix >= w as i64 || iy >= h as i64 {
            0.0
        } else {
            p[iy as usize * w + ix as usize]
        }
    };
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let top = get(ix, iy) * (1.0 - tx) + get(ix + 1, iy) * tx;
    let bot = get(ix, iy + 1) * (1.0 - tx) + get(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Normalized `(2r+1)^2` box filter, zero outside the frame.
pub fn box_filter(p: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let norm = 1.0 / ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            tmp[y * w + x] = p[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum::<f64>() * norm;
        }
    }
    out
}

fn centroid(mask: &BlurMask) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let a = mask.get(x, y);
            sx += a * x as f64;
            sy += a * y as f64;
            n += a;
        }
    }
    (sx / n, sy / n)
}

fn max_radius(mask: &BlurMask, c: (f64, f64)) -> f64 {
    let mut r: f64 = 0.0;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_set(x, y) {
                r = r.max((x as f64 - c.0).hypot(y as f64 - c.1));
            }
        }
    }
    r
}

impl Layer {
    fn from_mask(img: &Image, mask: &BlurMask) -> Layer {
        let alpha = mask.data().to_vec();
        let planes = (0..img.channels())
            .map(|c| {
                img.plane(c)
                    .iter()
                    .zip(&alpha)
                    .map(|(v, a)| v * a)
                    .collect()
            })
            .collect();
        Layer { planes, alpha }
    }

    fn filtered(&self, w: usize, h: usize) -> Layer {
        Layer {
            planes: self
                .planes
                .iter()
                .map(|p| box_filter(p, w, h, KERNEL_RADIUS))
                .collect(),
            alpha: box_filter(&self.alpha, w, h, KERNEL_RADIUS),
        }
    }

    /// Mean of the layer under `steps` poses; `pose(t)` maps an output
    /// position to its source position at path fraction `t`.
    fn averaged(
        &self,
        w: usize,
        h: usize,
        steps: usize,
        pose: impl Fn(f64, f64, f64) -> (f64, f64),
    ) -> Layer {
        let mut acc = Layer {
            planes: vec![vec![0.0; w * h]; self.planes.len()],
            alpha: vec![0.0; w * h],
        };
        let inv = 1.0 / steps as f64;
        for k in 0..steps {
            let t = if steps > 1 {
                k as f64 / (steps - 1) as f64
            } else {
                0.0
            };
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = pose(t, x as f64, y as f64);
                    let i = y * w + x;
                    acc.alpha[i] += sample_zero(&self.alpha, w, h, sx, sy);
                    for (dst, src) in acc.planes.iter_mut().zip(&self.planes) {
                        dst[i] += sample_zero(src, w, h, sx, sy);
                    }
                }
            }
        }
        for v in acc.alpha.iter_mut().chain(acc.planes.iter_mut().flatten()) {
            *v *= inv;
        }
        acc
    }
}

/// Blurs the foreground selected by `fg_mask` along a rigid motion and
/// composites it over `sharp`. Pixels the moved foreground never reaches
/// are returned bit-identical.
pub fn synth_local_blur(
    sharp: &Image,
    fg_mask: &BlurMask,
    params: &SynthBlurParams,
) -> Result<SynthBlurOutput> {
    let (w, h) = (sharp.width(), sharp.height());
    fg_mask.check_dims(w, h)?;
    if !fg_mask.is_binary() {
        return Err(Error::invalid("foreground mask must be binary"));
    }
    if params.steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if fg_mask.is_empty() {
        return Ok(SynthBlurOutput {
            image: sharp.clone(),
            footprint: BlurMask::zeros(w, h),
            empty_mask: true,
        });
    }
    let ctr = centroid(fg_mask);
    let span = match params.motion {
        MotionMode::Translation { dx, dy } => dx.hypot(dy),
        MotionMode::Rotation { degrees } => degrees.to_radians().abs() * max_radius(fg_mask, ctr),
    };
    if !span.is_finite() || span > MAX_SPAN {
        return Err(Error::invalid(format!(
            "blur span {span:.1} px exceeds {MAX_SPAN}"
        )));
    }
    let mut layer = Layer::from_mask(sharp, fg_mask);
    if params.kernel && params.kernel_first {
        layer = layer.filtered(w, h);
    }
    layer = match params.motion {
        MotionMode::Translation { dx, dy } => {
            layer.averaged(w, h, params.steps, |t, x, y| (x - t * dx, y - t * dy))
        }
        MotionMode::Rotation { degrees } => layer.averaged(w, h, params.steps, |t, x, y| {
            let (s, c) = (t * degrees).to_radians().sin_cos();
            let (rx, ry) = (x - ctr.0, y - ctr.1);
            (c * rx + s * ry + ctr.0, -s * rx + c * ry + ctr.1)
        }),
    };
    if params.kernel && !params.kernel_first {
        layer = layer.filtered(w, h);
    }
    let mut image = sharp.clone();
    for (c, p) in layer.planes.iter().enumerate() {
        for (i, v) in image.plane_mut(c).iter_mut().enumerate() {
            let a = layer.alpha[i];
            if a != 0.0 || p[i] != 0.0 {
                *v = p[i] + (1.0 - a) * *v;
            }
        }
    }
    let footprint = BlurMask::from_vec(
        w,
        h,
        layer
            .alpha
            .iter()
            .map(|&a| if a > 0.0 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    Ok(SynthBlurOutput {
        image,
        footprint,
        empty_mask: false,
    })
}
