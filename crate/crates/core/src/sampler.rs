//! Blur-aware patch cropping and flip augmentation.
//!
//! Each draw is a pure function of `(seed, draw index)`: the generator is a
//! ChaCha8 stream keyed by the seed with the draw index as stream number,
//! so draws can be taken in any order or from many threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BlurMask, Image};

pub const DEFAULT_PATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub flip_h: bool,
    pub flip_v: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Uniform,
    Blur,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDraw {
    pub spec: PatchSpec,
    pub branch: Branch,
    /// Mask-positive center picked by the blur branch.
    pub center: Option<(usize, usize)>,
}

/// Summed-area table of a binary mask.
#[derive(Debug, Clone)]
pub struct MaskIntegral {
    width: usize,
    sums: Vec<u64>,
}

impl MaskIntegral {
    pub fn new(mask: &BlurMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += mask.is_set(x, y) as u64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, sums }
    }

    /// Set pixels in the `size × size` square at `(x, y)`.
    pub fn count(&self, x: usize, y: usize, size: usize) -> u64 {
        let s = |xx: usize, yy: usize| self.sums[yy * (self.width + 1) + xx];
        s(x + size, y + size) + s(x, y) - s(x + size, y) - s(x, y + size)
    }
}

/// Sampler over one image's mask.
#[derive(Debug, Clone)]
pub struct BapcSampler {
    width: usize,
    height: usize,
    size: usize,
    positives: Vec<(u32, u32)>,
}

impl BapcSampler {
    pub fn new(width: usize, height: usize, mask: &BlurMask, size: usize) -> Result<Self> {
        mask.check_dims(width, height)?;
        if size == 0 || width < size || height < size {
            return Err(Error::invalid(format!(
                "image {width}x{height} is smaller than patch {size}"
            )));
        }
        let mut positives = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if mask.is_set(x, y) {
                    positives.push((x as u32, y as u32));
                }
            }
        }
        Ok(Self {
            width,
            height,
            size,
            positives,
        })
    }

    pub fn rng(seed: u64, draw: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw);
        rng
    }

    /// Draw `draw` of the sequence for `seed`, flips left unset.
    pub fn sample(&self, seed: u64, draw: u64) -> PatchDraw {
        self.sample_with(&mut Self::rng(seed, draw))
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> PatchDraw {
        let blur_branch = rng.random_bool(0.5);
        let s = self.size;
        if blur_branch && !self.positives.is_empty() {
            let (cx, cy) = self.positives[rng.random_range(0..self.positives.len())];
            let (cx, cy) = (cx as usize, cy as usize);
            let x = cx.saturating_sub(s / 2).min(self.width - s);
            let y = cy.saturating_sub(s / 2).min(self.height - s);
            return PatchDraw {
                spec: PatchSpec {
                    x,
                    y,
                    size: s,
                    flip_h: false,
                    flip_v: false,
                },
                branch: Branch::Blur,
                center: Some((cx, cy)),
            };
        }
        PatchDraw {
            spec: PatchSpec {
                x: rng.random_range(0..=self.width - s),
                y: rng.random_range(0..=self.height - s),
                size: s,
                flip_h: false,
                flip_v: false,
            },
            branch: Branch::Uniform,
            center: None,
        }
    }
}

/// One blur-aware draw; see [`BapcSampler`] for repeated sampling.
pub fn bapc_sample(
    dims: (usize, usize),
    mask: &BlurMask,
    size: usize,
    seed: u64,
    draw: u64,
) -> Result<PatchDraw> {
    Ok(BapcSampler::new(dims.0, dims.1, mask, size)?.sample(seed, draw))
}

/// Sets each flip flag independently with probability 0.5.
pub fn augment<R: Rng>(spec: PatchSpec, rng: &mut R) -> PatchSpec {
    PatchSpec {
        flip_h: rng.random_bool(0.5),
        flip_v: rng.random_bool(0.5),
        ..spec
    }
}

pub fn flip(img: &Image, horizontal: bool, vertical: bool) -> Image {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(w, h, img.channels(), |x, y, c| {
        let sx = if horizontal { w - 1 - x } else { x };
        let sy = if vertical { h - 1 - y } else { y };
        img.get(sx, sy, c)
    })
    .expect("same shape")
}

/// Crops the patch and applies its flips.
pub fn extract_patch(img: &Image, spec: &PatchSpec) -> Result<Image> {
    let crop = img.crop(crate::image::Rect::new(
        spec.x, spec.y, spec.size, spec.size,
    ))?;
    Ok(flip(&crop, spec.flip_h, spec.flip_v))
}

pub fn extract_mask_patch(mask: &BlurMask, spec: &PatchSpec) -> Result<BlurMask> {
    let img = extract_patch(&mask.to_image(), spec)?;
    BlurMask::from_image(&img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_mask_patches_always_contain_blur() {
        let m = BlurMask::ones(40, 30);
        let s = BapcSampler::new(40, 30, &m, 16).unwrap();
        let integ = MaskIntegral::new(&m);
        for d in 0..500 {
            let p = s.sample(3, d).spec;
            assert!(integ.count(p.x, p.y, p.size) > 0);
        }
    }

    #[test]
    fn empty_mask_falls_back_to_uniform() {
        let s = BapcSampler::new(40, 30, &BlurMask::zeros(40, 30), 16).unwrap();
        for d in 0..500 {
            let p = s.sample(1, d);
            assert_eq!(p.branch, Branch::Uniform);
            assert!(p.spec.x + 16 <= 40 && p.spec.y + 16 <= 30);
        }
    }

    #[test]
    fn small_image_is_rejected() {
        assert!(BapcSampler::new(10, 10, &BlurMask::zeros(10, 10), 16).is_err());
        assert!(bapc_sample((20, 20), &BlurMask::zeros(20, 21), 16, 0, 0).is_err());
    }

    #[test]
    fn draws_are_stateless_and_seeded() {
        let m = BlurMask::from_predicate(64, 64, |x, y| x > 40 && y < 10);
        let s = BapcSampler::new(64, 64, &m, 16).unwrap();
        let forward: Vec<_> = (0..50).map(|d| s.sample(9, d)).collect();
        let backward: Vec<_> = (0..50).rev().map(|d| s.sample(9, d)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        assert_ne!(
            forward,
            (0..50).map(|d| s.sample(10, d)).collect::<Vec<_>>()
        );
        let mut a = BapcSampler::rng(4, 2);
        let mut b = BapcSampler::rng(4, 2);
        let spec = forward[0].spec;
        assert_eq!(augment(spec, &mut a), augment(spec, &mut b));
    }

    #[test]
    fn flip_frequencies_are_balanced() {
        let spec = PatchSpec {
            x: 0,
            y: 0,
            size: 8,
            flip_h: false,
            flip_v: false,
        };
        let (mut h, mut v) = (0, 0);
        let n = 10_000;
        for d in 0..n {
            let s = augment(spec, &mut BapcSampler::rng(77, d));
            h += s.flip_h as u32;
            v += s.flip_v as u32;
        }
        for k in [h, v] {
            assert!((k as f64 / n as f64 - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn integral_counts_match_direct_sum() {
        let m = BlurMask::from_predicate(23, 17, |x, y| (x * 5 + y * 3) % 7 == 0);
        let integ = MaskIntegral::new(&m);
        for (x, y, s) in [(0, 0, 17), (3, 2, 5), (10, 9, 8), (22, 16, 1)] {
            let direct = (y..y + s)
                .flat_map(|yy| (x..x + s).map(move |xx| (xx, yy)))
                .filter(|&(xx, yy)| m.is_set(xx, yy))
                .count();
            assert_eq!(integ.count(x, y, s), direct as u64);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn blur_branch_contains_positive_center(seed: u64, draw in 0u64..1000, cx in 0usize..50, cy in 0usize..40, size in 1usize..30) {
            let m = BlurMask::from_predicate(50, 40, |x, y| x.abs_diff(cx) <= 2 && y.abs_diff(cy) <= 1);
            let s = BapcSampler::new(50, 40, &m, size).unwrap();
            let d = s.sample(seed, draw);
            let p = d.spec;
            prop_assert!(p.x + size <= 50 && p.y + size <= 40);
            if let Some((x, y)) = d.center {
                prop_assert!(m.is_set(x, y));
                prop_assert!((p.x..p.x + size).contains(&x) && (p.y..p.y + size).contains(&y));
                // clamping moves the patch by at most half its size
                let want = (x as f64 - (size / 2) as f64, y as f64 - (size / 2) as f64);
                prop_assert!((p.x as f64 - want.0).abs() <= (size / 2) as f64 + 0.5);
                prop_assert!((p.y as f64 - want.1).abs() <= (size / 2) as f64 + 0.5);
            }
        }

        #[test]
        fn double_flip_is_identity(h: bool, v: bool, seed: u64) {
            let img = Image::from_fn(12, 12, 3, |x, y, c| ((x * 31 + y * 7 + c) as u64 ^ seed) as f64 % 97.0).unwrap();
            let spec = PatchSpec { x: 2, y: 3, size: 8, flip_h: h, flip_v: v };
            let once = extract_patch(&img, &spec).unwrap();
            prop_assert_eq!(flip(&once, h, v), img.crop(crate::image::Rect::new(2, 3, 8, 8)).unwrap());
        }
    }
}
