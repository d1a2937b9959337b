//! Geometric alignment of a moving frame onto a reference frame.
//!
//! Flow is estimated coarse to fine with windowed phase correlation on
//! overlapping blocks, median-filtered on the block grid and interpolated
//! bilinearly to a dense field. Flow `d` at `x` means `a(x) ≈ b(x + d)`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2::Fft2;
use crate::image::{bilinear, pyramid, BlurMask, FlowField, Image, DEFAULT_MAX_FLOW};

const FLAT_VARIANCE: f64 = 1e-12;
/// Relative magnitude added to every bin before whitening.
const WHITEN_FLOOR: f64 = 1e-2;
const REFINE_ITERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowOptions {
    pub levels: usize,
    /// Block side at every level.
    pub block: usize,
    pub max_flow: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            levels: 3,
            block: 64,
            max_flow: DEFAULT_MAX_FLOW,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Windowed phase correlation at one block size.
struct Correlator {
    w: usize,
    h: usize,
    fft: Fft2,
    window: Vec<f64>,
}

impl Correlator {
    fn new(w: usize, h: usize) -> Self {
        let (wx, wy) = (hann(w), hann(h));
        let window = (0..h)
            .flat_map(|y| {
                let wy = wy[y];
                wx.iter().map(move |&a| a * wy)
            })
            .collect();
        Self {
            w,
            h,
            fft: Fft2::new(w, h),
            window,
        }
    }

    fn prepare(&self, block: &[f64]) -> Option<Vec<Complex64>> {
        let n = block.len() as f64;
        let mean = block.iter().sum::<f64>() / n;
        let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var < FLAT_VARIANCE {
            return None;
        }
        let mut buf: Vec<Complex64> = block
            .iter()
            .zip(&self.window)
            .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        self.fft.forward(&mut buf);
        Some(buf)
    }

    /// Displacement `d` with `a(x) ≈ b(x + d)` and the correlation peak
    /// height; `None` when either block is flat.
    fn correlate(&self, a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
        let fa = self.prepare(a)?;
        let fb = self.prepare(b)?;
        let cross: Vec<Complex64> = fb.iter().zip(&fa).map(|(p, q)| p * q.conj()).collect();
        // whitening with a floor keeps empty bins from dominating
        let floor = WHITEN_FLOOR * cross.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if floor <= 0.0 {
            return None;
        }
        let mut r: Vec<Complex64> = cross.iter().map(|z| z / (z.norm() + floor)).collect();
        self.fft.inverse_unnormalized(&mut r);
        let n = (self.w * self.h) as f64;
        let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
        for (i, z) in r.iter().enumerate() {
            if z.re > best {
                best = z.re;
                bi = i;
            }
        }
        let (px, py) = (bi % self.w, bi / self.w);
        let at = |x: usize, y: usize| r[y * self.w + x].re;
        let refine = |m: f64, c: f64, p: f64| -> f64 {
            let den = m - 2.0 * c + p;
            if den.abs() < 1e-15 {
                0.0
            } else {
                (0.5 * (m - p) / den).clamp(-0.5, 0.5)
            }
        };
        let sx = if self.w >= 3 {
            refine(
                at((px + self.w - 1) % self.w, py),
                best,
                at((px + 1) % self.w, py),
            )
        } else {
            0.0
        };
        let sy = if self.h >= 3 {
            refine(
                at(px, (py + self.h - 1) % self.h),
                best,
                at(px, (py + 1) % self.h),
            )
        } else {
            0.0
        };
        let wrap = |p: usize, n: usize| {
            if p > n / 2 {
                p as f64 - n as f64
            } else {
                p as f64
            }
        };
        Some((wrap(px, self.w) + sx, wrap(py, self.h) + sy, best / n))
    }
}

fn block_origins(extent: usize, block: usize) -> Vec<usize> {
    let stride = (block / 2).max(1);
    let mut out: Vec<usize> = (0..=extent - block).step_by(stride).collect();
    if *out.last().unwrap() != extent - block {
        out.push(extent - block);
    }
    out
}

/// `bw x bh` block of `plane` with top-left at the subpixel `(x0, y0)`,
/// edge-replicated outside the frame.
fn extract(plane: &[f64], w: usize, h: usize, x0: f64, y0: f64, bw: usize, bh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bw * bh);
    for y in 0..bh {
        for x in 0..bw {
            out.push(bilinear(plane, w, h, x0 + x as f64, y0 + y as f64));
        }
    }
    out
}

/// Correlates `a` at `(x0, y0)` against `b` displaced by successive
/// estimates until the residual vanishes; windowed correlation is biased
/// toward zero, so this drives the bias down with the residual.
#[allow(clippy::too_many_arguments)]
fn refine_displacement(
    corr: &Correlator,
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    x0: usize,
    y0: usize,
    start: (f64, f64),
) -> Option<(f64, f64)> {
    let (bw, bh) = (corr.w, corr.h);
    let blk_a = extract(a, w, h, x0 as f64, y0 as f64, bw, bh);
    let (mut dx, mut dy) = (start.0.round(), start.1.round());
    for _ in 0..REFINE_ITERS {
        let blk_b = extract(b, w, h, x0 as f64 + dx, y0 as f64 + dy, bw, bh);
        let (rx, ry, _) = corr.correlate(&blk_a, &blk_b)?;
        dx += rx;
        dy += ry;
        if rx.abs() < 1e-3 && ry.abs() < 1e-3 {
            break;
        }
    }
    Some((dx, dy))
}

/// Median of the confident values among the 3x3 block neighbourhood.
fn median_filter(vals: &[(f64, f64, bool)], nx: usize, ny: usize) -> Vec<(f64, f64, bool)> {
    let mut out = vals.to_vec();
    for j in 0..ny {
        for i in 0..nx {
            let here = vals[j * nx + i];
            if !here.2 {
                continue;
            }
            let (mut us, mut vs) = (Vec::with_capacity(9), Vec::with_capacity(9));
            for jj in j.saturating_sub(1)..(j + 2).min(ny) {
                for ii in i.saturating_sub(1)..(i + 2).min(nx) {
                    let (u, v, ok) = vals[jj * nx + ii];
                    if ok {
                        us.push(u);
                        vs.push(v);
                    }
                }
            }
            us.sort_by(f64::total_cmp);
            vs.sort_by(f64::total_cmp);
            out[j * nx + i] = (us[us.len() / 2], vs[vs.len() / 2], true);
        }
    }
    out
}

/// Interpolates block-center values onto every pixel.
fn densify(centers_x: &[f64], centers_y: &[f64], grid: &[f64], w: usize, h: usize) -> Vec<f64> {
    let nx = centers_x.len();
    let locate = |centers: &[f64], p: f64| -> (usize, usize, f64) {
        if centers.len() == 1 || p <= centers[0] {
            return (0, 0, 0.0);
        }
        let last = centers.len() - 1;
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let i = centers.partition_point(|&c| c <= p) - 1;
        (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
    };
    let xs: Vec<_> = (0..w).map(|x| locate(centers_x, x as f64)).collect();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let (j0, j1, fy) = locate(centers_y, y as f64);
        for (x, o) in row.iter_mut().enumerate() {
            let (i0, i1, fx) = xs[x];
            let top = grid[j0 * nx + i0] * (1.0 - fx) + grid[j0 * nx + i1] * fx;
            let bot = grid[j1 * nx + i0] * (1.0 - fx) + grid[j1 * nx + i1] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
    });
    out
}

pub fn estimate_flow(ref_a: &Image, ref_b: &Image) -> Result<FlowField> {
    estimate_flow_with(ref_a, ref_b, &FlowOptions::default())
}

/// Dense flow from `ref_a` to `ref_b`.
pub fn estimate_flow_with(ref_a: &Image, ref_b: &Image, opts: &FlowOptions) -> Result<FlowField> {
    ref_a.check_same_shape(ref_b)?;
    if opts.levels == 0 || opts.block < 4 {
        return Err(Error::invalid(
            "flow needs at least one level and blocks of 4 px",
        ));
    }
    let pa = pyramid(&ref_a.luminance(), opts.levels);
    let pb = pyramid(&ref_b.luminance(), opts.levels);
    // dense (u, v, confidence) at the previous, coarser level
    let mut prev: Option<(usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for lvl in (0..pa.len()).rev() {
        let (w, h) = (pa[lvl].width(), pa[lvl].height());
        let (a, b) = (pa[lvl].plane(0), pb[lvl].plane(0));
        let (bw, bh) = (opts.block.min(w), opts.block.min(h));
        let corr = Correlator::new(bw, bh);
        let (ox, oy) = (block_origins(w, bw), block_origins(h, bh));
        let cx: Vec<f64> = ox
            .iter()
            .map(|&x| x as f64 + (bw as f64 - 1.0) / 2.0)
            .collect();
        let cy: Vec<f64> = oy
            .iter()
            .map(|&y| y as f64 + (bh as f64 - 1.0) / 2.0)
            .collect();
        let jobs: Vec<(usize, usize)> = (0..oy.len())
            .flat_map(|j| (0..ox.len()).map(move |i| (i, j)))
            .collect();
        let est: Vec<(f64, f64, bool)> = jobs
            .par_iter()
            .map(|&(i, j)| {
                let (d0x, d0y) = match &prev {
                    None => (0.0, 0.0),
                    Some((pw, ph, u, v, _)) => (
                        2.0 * bilinear(u, *pw, *ph, (cx[i] - 0.5) / 2.0, (cy[j] - 0.5) / 2.0),
                        2.0 * bilinear(v, *pw, *ph, (cx[i] - 0.5) / 2.0, (cy[j] - 0.5) / 2.0),
                    ),
                };
                match refine_displacement(&corr, a, b, w, h, ox[i], oy[j], (d0x, d0y)) {
                    Some((dx, dy)) => (dx, dy, true),
                    None => (0.0, 0.0, false),
                }
            })
            .collect();
        let filtered = median_filter(&est, ox.len(), oy.len());
        let gu: Vec<f64> = filtered.iter().map(|e| e.0).collect();
        let gv: Vec<f64> = filtered.iter().map(|e| e.1).collect();
        let gc: Vec<f64> = filtered
            .iter()
            .map(|e| if e.2 { 1.0 } else { 0.0 })
            .collect();
        prev = Some((
            w,
            h,
            densify(&cx, &cy, &gu, w, h),
            densify(&cx, &cy, &gv, w, h),
            densify(&cx, &cy, &gc, w, h),
        ));
    }
    let (w, h, mut u, mut v, conf) = prev.expect("at least one level");
    // pyramid levels may drop odd rows; the finest level is full size
    debug_assert_eq!((w, h), (ref_a.width(), ref_a.height()));
    let mut conf: Vec<f64> = conf
        .into_iter()
        .map(|c| if c >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    for i in 0..u.len() {
        let m = u[i].hypot(v[i]);
        if m > opts.max_flow {
            u[i] *= opts.max_flow / m;
            v[i] *= opts.max_flow / m;
            conf[i] = 0.0;
        }
    }
    FlowField::new(w, h, u, v, conf, opts.max_flow)
}

/// Backward-warped image and the mask of pixels sampled inside the frame.
#[derive(Debug, Clone)]
pub struct Warped {
    pub image: Image,
    pub valid: BlurMask,
}

/// `out(x) = img(x + flow(x))` with bilinear sampling; out-of-frame
/// samples use edge replication and are cleared in `valid`.
pub fn warp(img: &Image, flow: &FlowField) -> Result<Warped> {
    if flow.width() != img.width() || flow.height() != img.height() {
        return Err(Error::dims(
            img.dims_string(),
            format!("{}x{} flow", flow.width(), flow.height()),
        ));
    }
    let (w, h) = (img.width(), img.height());
    let (xm, ym) = ((w - 1) as f64 + 1e-9, (h - 1) as f64 + 1e-9);
    let valid = BlurMask::from_predicate(w, h, |x, y| {
        let (u, v) = flow.at(x, y);
        let (sx, sy) = (x as f64 + u, y as f64 + v);
        sx >= -1e-9 && sy >= -1e-9 && sx <= xm && sy <= ym
    });
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.plane(c);
        out.plane_mut(c)
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    let (u, v) = flow.at(x, y);
                    *o = bilinear(src, w, h, x as f64 + u, y as f64 + v);
                }
            });
    }
    Ok(Warped { image: out, valid })
}

/// Global translation `d` with `a(x) ≈ b(x + d)` from whole-frame phase
/// correlation.
pub fn global_translation(a: &Image, b: &Image) -> Result<(f64, f64)> {
    a.check_same_shape(b)?;
    let (ga, gb) = (a.luminance(), b.luminance());
    let corr = Correlator::new(a.width(), a.height());
    refine_displacement(
        &corr,
        ga.plane(0),
        gb.plane(0),
        a.width(),
        a.height(),
        0,
        0,
        (0.0, 0.0),
    )
    .ok_or(Error::NoTexture)
}

/// Magnitude of the global translation between two frames, in pixels.
pub fn geometric_error(a: &Image, b: &Image) -> Result<f64> {
    let (x, y) = global_translation(a, b)?;
    Ok(x.hypot(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::shift;
    use crate::metrics::psnr;

    /// Smooth analytic texture sampled at `(x - dx, y - dy)`.
    fn texture(w: usize, h: usize, dx: f64, dy: f64) -> Image {
        let waves = [
            (0.061, 0.023, 0.3, 0.12),
            (-0.037, 0.071, 1.1, 0.10),
            (0.113, -0.089, 2.0, 0.06),
            (0.019, 0.131, 0.7, 0.07),
            (0.151, 0.047, 2.9, 0.05),
            (-0.083, -0.029, 4.1, 0.08),
        ];
        Image::from_fn(w, h, 3, |x, y, c| {
            let (xf, yf) = (x as f64 - dx, y as f64 - dy);
            let mut v = 0.5;
            for (k, (fx, fy, ph, a)) in waves.iter().enumerate() {
                let s = if (k + c) % 3 == 0 { 1.0 } else { 0.7 };
                v += s * a * (fx * xf + fy * yf + ph).sin();
            }
            v
        })
        .unwrap()
    }

    fn interior_psnr(a: &Image, b: &Image, m: usize) -> f64 {
        let r = a.rect().inset(m);
        psnr(&a.crop(r).unwrap(), &b.crop(r).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(160, 128, 0.0, 0.0);
        let f = estimate_flow(&a, &a).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|d| d.abs() < 0.05));
    }

    #[test]
    fn translation_is_recovered() {
        let a = texture(192, 160, 0.0, 0.0);
        // b(y) = a(y - d) so a(x) = b(x + d)
        let b = texture(192, 160, 3.0, -2.0);
        let (mu, mv) = estimate_flow(&a, &b).unwrap().median();
        assert!(
            (mu - 3.0).abs() < 0.1 && (mv + 2.0).abs() < 0.1,
            "{mu} {mv}"
        );
    }

    #[test]
    fn flat_frames_have_zero_confidence() {
        let a = Image::filled(64, 64, 3, 0.4).unwrap();
        let f = estimate_flow(&a, &a).unwrap();
        assert!(f.u().iter().all(|&u| u == 0.0));
        assert!(f.confidence().iter().all(|&c| c == 0.0));
        assert!(matches!(geometric_error(&a, &a), Err(Error::NoTexture)));
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let a = texture(32, 24, 0.0, 0.0);
        let out = warp(&a, &FlowField::zeros(32, 24)).unwrap();
        assert_eq!(out.image, a);
        assert_eq!(out.valid.count_set(), 32 * 24);
    }

    #[test]
    fn integer_flow_matches_shift() {
        let a = texture(40, 30, 0.0, 0.0);
        let s = shift(&a, 2, -3).unwrap();
        let out = warp(&a, &FlowField::uniform(40, 30, -2.0, 3.0).unwrap()).unwrap();
        let r = s.overlap;
        assert_eq!(out.image.crop(r).unwrap(), s.valid());
        assert_eq!(out.valid.count_set(), r.area());
    }

    #[test]
    fn subpixel_warp_round_trip() {
        let img = texture(96, 80, 0.0, 0.0);
        let moved = texture(96, 80, 2.5, -1.25);
        let out = warp(&moved, &FlowField::uniform(96, 80, 2.5, -1.25).unwrap()).unwrap();
        assert!(interior_psnr(&out.image, &img, 4) >= 40.0);
    }

    #[test]
    fn geometric_error_examples() {
        let a = texture(128, 128, 0.0, 0.0);
        assert!(geometric_error(&a, &a).unwrap() < 1e-9);
        let b = texture(128, 128, 3.0, 0.0);
        assert!((geometric_error(&a, &b).unwrap() - 3.0).abs() < 0.1);
    }

    #[test]
    fn alignment_gains_psnr_and_removes_error() {
        let sharp = texture(256, 192, 0.0, 0.0);
        let moved = texture(256, 192, 3.0, 0.0);
        let flow = estimate_flow(&sharp, &moved).unwrap();
        let aligned = warp(&moved, &flow).unwrap().image;
        let before = interior_psnr(&moved, &sharp, 8);
        let after = interior_psnr(&aligned, &sharp, 8);
        assert!(after >= before + 10.0, "{before} -> {after}");
        assert!(geometric_error(&aligned, &sharp).unwrap() <= 1.0);
    }

    #[test]
    fn flow_is_translation_equivariant() {
        let big_a = texture(200, 170, 0.0, 0.0);
        let big_b = texture(200, 170, 2.0, 1.0);
        let r1 = crate::image::Rect::new(0, 0, 160, 128);
        let r2 = crate::image::Rect::new(8, 12, 160, 128);
        let f1 = estimate_flow(&big_a.crop(r1).unwrap(), &big_b.crop(r1).unwrap()).unwrap();
        let f2 = estimate_flow(&big_a.crop(r2).unwrap(), &big_b.crop(r2).unwrap()).unwrap();
        let (u1, v1) = f1.median();
        let (u2, v2) = f2.median();
        assert!((u1 - u2).abs() < 0.1 && (v1 - v2).abs() < 0.1);
    }
}
