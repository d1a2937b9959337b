//! Independent scalar-loop reference implementations shared by the
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use localblur_core::{BlurMask, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, c, |_, _, _| rng.random::<f64>()).unwrap()
}

pub fn random_binary_mask(w: usize, h: usize, seed: u64) -> BlurMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BlurMask::from_predicate(w, h, |_, _| rng.random_bool(0.4));
    if m.is_empty() {
        m.set(0, 0, 1.0);
    }
    m
}

/// Textured test pattern with content at several scales.
pub fn texture(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random_range(0.02..0.35),
                rng.random_range(0.02..0.35),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.02..0.08),
            )
        })
        .collect();
    Image::from_fn(w, h, 3, |x, y, c| {
        let mut v = 0.5;
        for (i, (fx, fy, ph, a)) in waves.iter().enumerate() {
            let s = if (i + c) % 3 == 0 { 1.0 } else { 0.6 };
            v += s * a * (fx * x as f64 + fy * y as f64 + ph).sin();
        }
        v.clamp(0.0, 1.0)
    })
    .unwrap()
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(x, y, c) - b.get(x, y, c);
                s += d * d;
                n += 1;
            }
        }
    }
    s / n as f64
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m < 1e-10 {
        100.0
    } else {
        (-10.0 * m.log10()).min(100.0)
    }
}

/// SSIM at one pixel from the direct 2-D windowed formula with the window
/// weights renormalized over the in-frame part.
pub fn ssim_at(a: &Image, b: &Image, x: usize, y: usize, c: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut sw, mut mx, mut my) = (0.0, 0.0, 0.0);
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for j in -5i64..=5 {
        for i in -5i64..=5 {
            let (px, py) = (x as i64 + i, y as i64 + j);
            if px < 0 || py < 0 || px >= a.width() as i64 || py >= a.height() as i64 {
                continue;
            }
            let w = (-((i * i + j * j) as f64) / (2.0 * 1.5 * 1.5)).exp();
            let va = a.get(px as usize, py as usize, c);
            let vb = b.get(px as usize, py as usize, c);
            sw += w;
            mx += w * va;
            my += w * vb;
            xx += w * va * va;
            yy += w * vb * vb;
            xy += w * va * vb;
        }
    }
    let (mx, my) = (mx / sw, my / sw);
    let sxx = xx / sw - mx * mx;
    let syy = yy / sw - my * my;
    let sxy = xy / sw - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                s += ssim_at(a, b, x, y, c);
            }
        }
    }
    s / a.data().len() as f64
}

pub fn weighted_psnr(a: &Image, b: &Image, m: &BlurMask) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let mut se = 0.0;
            for c in 0..a.channels() {
                se += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
            }
            se /= a.channels() as f64;
            num += m.get(x, y) * 10.0 * (1.0 / (se + 1e-8)).log10();
            den += m.get(x, y);
        }
    }
    num / den
}

pub fn weighted_ssim(a: &Image, b: &Image, m: &BlurMask) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let mut s = 0.0;
            for c in 0..a.channels() {
                s += ssim_at(a, b, x, y, c);
            }
            num += m.get(x, y) * s / a.channels() as f64;
            den += m.get(x, y);
        }
    }
    num / den
}

/// Exhaustive search over shifts: compares `a(x, y)` with `b(x - dx, y - dy)`.
pub fn aligned_psnr(a: &Image, b: &Image, r: i64) -> (f64, i64, i64) {
    let (w, h) = (a.width() as i64, a.height() as i64);
    let mut best = (f64::NEG_INFINITY, 0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let (mut s, mut n) = (0.0, 0usize);
            for c in 0..a.channels() {
                for y in 0..h {
                    for x in 0..w {
                        let (bx, by) = (x - dx, y - dy);
                        if bx < 0 || by < 0 || bx >= w || by >= h {
                            continue;
                        }
                        let d =
                            a.get(x as usize, y as usize, c) - b.get(bx as usize, by as usize, c);
                        s += d * d;
                        n += 1;
                    }
                }
            }
            let m = s / n as f64;
            let p = if m < 1e-10 {
                100.0
            } else {
                (-10.0 * m.log10()).min(100.0)
            };
            let closer = dx.abs() + dy.abs() < best.1.abs() + best.2.abs();
            if p > best.0 || (p == best.0 && closer) {
                best = (p, dx, dy);
            }
        }
    }
    best
}
