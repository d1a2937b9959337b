//! Paired capture simulation and degradation injection.
//!
//! A scene is a backdrop plus one sprite that moves rigidly from frame to
//! frame. The long exposure is the mean of all frame composites; the short
//! exposure is frame 0.

mod scene;

pub use scene::{
    random_color_cast, Degradation, GroundTruth, SceneSpec, SimPair, SimScene, SpriteShape, Wave,
    WaveField, BACKGROUND_RANGE, LIGHTBOX_LEVEL,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{self, ColorCalibration, PhotometricGain};
use crate::error::{Error, Result};
use crate::image::{BayerImage, BlurMask, Image};

/// Threshold on `|blurred - sharp|` that always lands in the mask.
pub const DEFAULT_MASK_EPS: f64 = 2.0 / 255.0;
pub const DEFAULT_FRAMES: usize = 30;
/// Largest misalignment `inject_misalignment` accepts per axis.
pub const MAX_MISALIGNMENT: f64 = 8.0;

/// Optical setup of the two-camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    /// Sensor pixel side length, meters.
    pub c: f64,
    /// Desired blur length, pixels.
    pub n: f64,
    /// Object distance, meters.
    pub d: f64,
    /// Image distance, meters.
    pub l_img: f64,
    /// Object speed, meters per second.
    pub v: f64,
    /// Neutral-density transmittance in `(0, 1]`.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub t_s: f64,
    pub t_l: f64,
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c, self.n, self.d, self.l_img, self.v, self.tau];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid(
                "capture parameters must be finite and positive",
            ));
        }
        if self.tau > 1.0 {
            return Err(Error::invalid(format!(
                "transmittance {} exceeds 1",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `t_S = c·n·d / (l'·v)` and `t_L = t_S / τ`.
pub fn required_short_exposure(cfg: &CaptureConfig) -> Result<Exposure> {
    cfg.validate()?;
    let den = cfg.l_img * cfg.v;
    if den == 0.0 {
        return Err(Error::invalid("zero denominator in exposure rule"));
    }
    let t_s = cfg.c * cfg.n * cfg.d / den;
    Ok(Exposure {
        t_s,
        t_l: long_exposure(t_s, cfg.tau)?,
    })
}

pub fn long_exposure(t_s: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!(
            "transmittance {tau} outside (0, 1]"
        )));
    }
    Ok(t_s / tau)
}

/// Rigid pose of the sprite in one frame, relative to its rest position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub dx: f64,
    pub dy: f64,
    /// Degrees, counter-clockwise in image coordinates, about the sprite center.
    pub rot_deg: f64,
}

impl FrameTransform {
    pub const IDENTITY: FrameTransform = FrameTransform {
        dx: 0.0,
        dy: 0.0,
        rot_deg: 0.0,
    };

    /// `frames` poses evenly spaced from rest to `(dx, dy, rot_deg)`.
    pub fn linear_path(frames: usize, dx: f64, dy: f64, rot_deg: f64) -> Vec<FrameTransform> {
        (0..frames)
            .map(|f| {
                let t = if frames > 1 {
                    f as f64 / (frames - 1) as f64
                } else {
                    0.0
                };
                FrameTransform {
                    dx: t * dx,
                    dy: t * dy,
                    rot_deg: t * rot_deg,
                }
            })
            .collect()
    }
}

/// Parses one `dx dy rot_deg` transform per line; `#` starts a comment.
pub fn parse_transforms(text: &str) -> Result<Vec<FrameTransform>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                format: "motion script",
                reason: format!("line {}: {e}", ln + 1),
            })?;
        let t = match vals.as_slice() {
            [dx, dy] => FrameTransform {
                dx: *dx,
                dy: *dy,
                rot_deg: 0.0,
            },
            [dx, dy, r] => FrameTransform {
                dx: *dx,
                dy: *dy,
                rot_deg: *r,
            },
            _ => {
                return Err(Error::Format {
                    format: "motion script",
                    reason: format!("line {}: expected `dx dy [rot_deg]`", ln + 1),
                })
            }
        };
        if ![t.dx, t.dy, t.rot_deg].iter().all(|v| v.is_finite()) {
            return Err(Error::Format {
                format: "motion script",
                reason: format!("line {}: non-finite value", ln + 1),
            });
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(Error::EmptyScript("no transforms".into()));
    }
    Ok(out)
}

pub fn format_transforms(ts: &[FrameTransform]) -> String {
    let mut s = String::from("# dx dy rot_deg, one frame per line\n");
    for t in ts {
        s.push_str(&format!("{} {} {}\n", t.dx, t.dy, t.rot_deg));
    }
    s
}

/// Foreground layer: straight (non-premultiplied) color plus coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub image: Image,
    pub alpha: BlurMask,
}

impl Sprite {
    pub fn new(image: Image, alpha: BlurMask) -> Result<Self> {
        if image.channels() != 3 {
            return Err(Error::dims("3-channel sprite", image.dims_string()));
        }
        alpha.check_dims(image.width(), image.height())?;
        Ok(Self { image, alpha })
    }

    fn center(&self) -> (f64, f64) {
        (
            (self.image.width() as f64 - 1.0) / 2.0,
            (self.image.height() as f64 - 1.0) / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backdrop {
    Image(Image),
    Waves(WaveField),
}

impl Backdrop {
    pub fn width(&self) -> usize {
        match self {
            Backdrop::Image(i) => i.width(),
            Backdrop::Waves(w) => w.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Backdrop::Image(i) => i.height(),
            Backdrop::Waves(w) => w.height,
        }
    }

    /// Color at a continuous scene position; images replicate edges.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Backdrop::Image(i) => std::array::from_fn(|c| i.sample_bilinear_clamped(c, x, y)),
            Backdrop::Waves(w) => w.sample(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub background: Backdrop,
    pub sprite: Sprite,
    /// Sprite center at rest, scene pixels.
    pub rest_center: (f64, f64),
    pub transforms: Vec<FrameTransform>,
}

impl MotionScript {
    pub fn frames(&self) -> usize {
        self.transforms.len()
    }

    /// Fails unless every pose keeps the sprite's bounding box in frame.
    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::EmptyScript("motion script has no frames".into()));
        }
        if let Backdrop::Image(i) = &self.background {
            if i.channels() != 3 {
                return Err(Error::dims("3-channel background", i.dims_string()));
            }
        }
        let (w, h) = (
            self.background.width() as f64,
            self.background.height() as f64,
        );
        let (hw, hh) = (
            self.sprite.image.width() as f64 / 2.0,
            self.sprite.image.height() as f64 / 2.0,
        );
        for (f, t) in self.transforms.iter().enumerate() {
            let (s, c) = t.rot_deg.to_radians().sin_cos();
            let (cx, cy) = (self.rest_center.0 + t.dx, self.rest_center.1 + t.dy);
            for (px, py) in [(-hw, -hh), (hw, -hh), (-hw, hh), (hw, hh)] {
                let x = cx + c * px - s * py;
                let y = cy + s * px + c * py;
                if x < -0.5 - 1e-9 || y < -0.5 - 1e-9 || x > w - 0.5 + 1e-9 || y > h - 0.5 + 1e-9 {
                    return Err(Error::invalid(format!(
                        "frame {f}: sprite leaves the frame"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sprite coverage and color at scene position `(x, y)` in frame `f`.
    fn sprite_at(&self, f: usize, x: f64, y: f64) -> Option<(f64, [f64; 3])> {
        let t = self.transforms[f];
        let (s, c) = t.rot_deg.to_radians().sin_cos();
        let (rx, ry) = (x - self.rest_center.0 - t.dx, y - self.rest_center.1 - t.dy);
        let (sc_x, sc_y) = self.sprite.center();
        // inverse rotation into sprite coordinates
        let (qx, qy) = (c * rx + s * ry + sc_x, -s * rx + c * ry + sc_y);
        let img = &self.sprite.image;
        let a = alpha_sample(&self.sprite.alpha, qx, qy)?;
        Some((
            a,
            std::array::from_fn(|ch| img.sample_bilinear_clamped(ch, qx, qy)),
        ))
    }

    /// Axis-aligned scene-space box touched by the sprite in frame `f`.
    fn bbox(&self, f: usize) -> (f64, f64, f64, f64) {
        let t = self.transforms[f];
        let r =
            0.5 * (self.sprite.image.width() as f64).hypot(self.sprite.image.height() as f64) + 1.0;
        let (cx, cy) = (self.rest_center.0 + t.dx, self.rest_center.1 + t.dy);
        (cx - r, cy - r, cx + r, cy + r)
    }

    fn composite(&self, f: usize, x: f64, y: f64, bg: [f64; 3]) -> ([f64; 3], bool) {
        let (x0, y0, x1, y1) = self.bbox(f);
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return (bg, false);
        }
        match self.sprite_at(f, x, y) {
            Some((a, col)) if a > 0.0 => (
                std::array::from_fn(|c| a * col[c] + (1.0 - a) * bg[c]),
                true,
            ),
            _ => (bg, false),
        }
    }
}

/// Bilinear coverage; `None` outside the sprite raster.
fn alpha_sample(alpha: &BlurMask, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (alpha.width(), alpha.height());
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return None;
    }
    // coverage falls to zero one pixel outside the raster
    let get = |ix: i64, iy: i64| -> f64 {
        if ix < 0 || iy < 0 || ix >= w as i64 || iy >= h as i64 {
            0.0
        } else {
            alpha.get(ix as usize, iy as usize)
        }
    };
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let top = get(ix, iy) * (1.0 - tx) + get(ix + 1, iy) * tx;
    let bot = get(ix, iy + 1) * (1.0 - tx) + get(ix + 1, iy + 1) * tx;
    Some(top * (1.0 - ty) + bot * ty)
}

/// Long and short exposures of one view of a script.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub blurred: Image,
    pub sharp: Image,
    /// Per frame: does its composite differ anywhere from frame 0's?
    pub differs: Vec<bool>,
}

/// Renders the view whose pixel `(x, y)` sees scene position
/// `(x + offset.0, y + offset.1)`.
pub fn render_view(script: &MotionScript, offset: (f64, f64)) -> Result<RenderedView> {
    script.validate()?;
    let (w, h) = (script.background.width(), script.background.height());
    let nf = script.frames();
    let inv = 1.0 / nf as f64;
    let rows: Vec<([Vec<f64>; 3], [Vec<f64>; 3], Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut blur: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; w]);
            let mut sharp: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; w]);
            let mut differs = vec![false; nf];
            let sy = y as f64 + offset.1;
            for x in 0..w {
                let sx = x as f64 + offset.0;
                let bg = script.background.sample(sx, sy);
                let (first, _) = script.composite(0, sx, sy, bg);
                let mut acc = first;
                for (f, d) in differs.iter_mut().enumerate().skip(1) {
                    let (col, _) = script.composite(f, sx, sy, bg);
                    if col != first {
                        *d = true;
                    }
                    for c in 0..3 {
                        acc[c] += col[c];
                    }
                }
                for c in 0..3 {
                    blur[c][x] = acc[c] * inv;
                    sharp[c][x] = first[c];
                }
            }
            (blur, sharp, differs)
        })
        .collect();
    let mut blurred = vec![0.0; 3 * w * h];
    let mut sharp = vec![0.0; 3 * w * h];
    let mut differs = vec![false; nf];
    for (y, (b, s, d)) in rows.into_iter().enumerate() {
        for c in 0..3 {
            let o = c * w * h + y * w;
            blurred[o..o + w].copy_from_slice(&b[c]);
            sharp[o..o + w].copy_from_slice(&s[c]);
        }
        for (acc, v) in differs.iter_mut().zip(d) {
            *acc |= v;
        }
    }
    Ok(RenderedView {
        blurred: Image::from_planes(w, h, 3, blurred)?,
        sharp: Image::from_planes(w, h, 3, sharp)?,
        differs,
    })
}

#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub blurred: Image,
    pub sharp: Image,
    pub gt_mask: BlurMask,
}

pub fn simulate_pair(script: &MotionScript) -> Result<SimulatedPair> {
    simulate_pair_with(script, DEFAULT_MASK_EPS)
}

/// Blurred/sharp pair from a script plus its binary blur mask: the sprite
/// footprints of frame 0 and of every frame whose composite differs from
/// frame 0, together with every pixel where `|blurred - sharp| > mask_eps`.
pub fn simulate_pair_with(script: &MotionScript, mask_eps: f64) -> Result<SimulatedPair> {
    let view = render_view(script, (0.0, 0.0))?;
    let gt_mask = ground_truth_mask(script, &view, mask_eps)?;
    Ok(SimulatedPair {
        blurred: view.blurred,
        sharp: view.sharp,
        gt_mask,
    })
}

fn ground_truth_mask(
    script: &MotionScript,
    view: &RenderedView,
    mask_eps: f64,
) -> Result<BlurMask> {
    let (w, h) = (view.sharp.width(), view.sharp.height());
    if !view.differs.iter().any(|&d| d) {
        return Ok(BlurMask::zeros(w, h));
    }
    let frames: Vec<usize> = (0..script.frames())
        .filter(|&f| f == 0 || view.differs[f])
        .collect();
    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let frames = &frames;
            (0..w).map(move |x| {
                let (xf, yf) = (x as f64, y as f64);
                let covered = frames.iter().any(|&f| {
                    let (x0, y0, x1, y1) = script.bbox(f);
                    xf >= x0
                        && xf <= x1
                        && yf >= y0
                        && yf <= y1
                        && script.sprite_at(f, xf, yf).is_some_and(|(a, _)| a > 0.0)
                });
                let differs = (0..3).any(|c| {
                    (view.blurred.get(x, y, c) - view.sharp.get(x, y, c)).abs() > mask_eps
                });
                if covered || differs {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    BlurMask::from_vec(w, h, data)
}

/// `P / α(x, y)` per channel: the cast that `color_correct` removes.
pub fn inject_color_cast(img: &Image, cast: &ColorCalibration) -> Result<Image> {
    calib::remove_correction(img, cast)
}

pub fn inject_color_cast_raw(raw: &BayerImage, cast: &ColorCalibration) -> Result<BayerImage> {
    calib::remove_correction_raw(raw, cast)
}

/// Per-channel multiplicative brightness change.
pub fn inject_brightness(img: &Image, gain: [f64; 3]) -> Result<Image> {
    calib::apply_gain(img, &PhotometricGain::new(gain)?)
}

pub fn inject_brightness_raw(raw: &BayerImage, gain: [f64; 3]) -> Result<BayerImage> {
    Ok(calib::apply_gain_raw(raw, &PhotometricGain::new(gain)?))
}

/// Translated copy `out(x) = img(x - d)` with bilinear resampling, plus
/// the mask of pixels whose source lies inside the frame.
pub fn inject_misalignment(img: &Image, dx: f64, dy: f64) -> Result<(Image, BlurMask)> {
    if !(dx.abs() <= MAX_MISALIGNMENT && dy.abs() <= MAX_MISALIGNMENT) {
        return Err(Error::invalid(format!(
            "misalignment ({dx}, {dy}) exceeds {MAX_MISALIGNMENT} px"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let out = Image::from_fn(w, h, img.channels(), |x, y, c| {
        img.sample_bilinear_clamped(c, x as f64 - dx, y as f64 - dy)
    })?;
    let (xm, ym) = ((w - 1) as f64 + 1e-9, (h - 1) as f64 + 1e-9);
    let valid = BlurMask::from_predicate(w, h, |x, y| {
        let (sx, sy) = (x as f64 - dx, y as f64 - dy);
        sx >= -1e-9 && sy >= -1e-9 && sx <= xm && sy <= ym
    });
    Ok((out, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{color_correct, photometric_gain, BASIS_LEN};
    use crate::geoalign::{estimate_flow, geometric_error, warp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square_sprite(side: usize, value: f64) -> Sprite {
        Sprite::new(
            Image::filled(side, side, 3, value).unwrap(),
            BlurMask::ones(side, side),
        )
        .unwrap()
    }

    fn black(w: usize, h: usize) -> Backdrop {
        Backdrop::Image(Image::new(w, h, 3).unwrap())
    }

    #[test]
    fn exposure_rule_examples() {
        let cfg = CaptureConfig {
            c: 1.0,
            n: 10.0,
            d: 100.0,
            l_img: 1.0,
            v: 1000.0,
            tau: 1.0,
        };
        assert_eq!(required_short_exposure(&cfg).unwrap().t_s, 1.0);
        assert_eq!(long_exposure(0.002, 0.5).unwrap(), 0.004);
        let fast = CaptureConfig { v: 2000.0, ..cfg };
        assert_eq!(required_short_exposure(&fast).unwrap().t_s, 0.5);
        let e = required_short_exposure(&CaptureConfig { tau: 0.25, ..cfg }).unwrap();
        assert_eq!(e.t_l, 4.0);
        assert!(required_short_exposure(&CaptureConfig { v: 0.0, ..cfg }).is_err());
        assert!(required_short_exposure(&CaptureConfig { tau: 1.5, ..cfg }).is_err());
    }

    #[test]
    fn script_text_round_trip() {
        let ts = FrameTransform::linear_path(4, 6.0, -3.0, 12.0);
        assert_eq!(parse_transforms(&format_transforms(&ts)).unwrap(), ts);
        assert!(matches!(
            parse_transforms("# nothing\n\n"),
            Err(Error::EmptyScript(_))
        ));
        assert!(parse_transforms("1 2 3 4").is_err());
        assert!(parse_transforms("1 x").is_err());
        assert_eq!(parse_transforms("1 2").unwrap()[0].rot_deg, 0.0);
    }

    #[test]
    fn single_frame_or_static_gives_identical_pair() {
        for ts in [
            vec![FrameTransform::IDENTITY],
            vec![FrameTransform::IDENTITY; 5],
        ] {
            let script = MotionScript {
                background: black(32, 32),
                sprite: square_sprite(8, 0.8),
                rest_center: (15.5, 15.5),
                transforms: ts,
            };
            let p = simulate_pair(&script).unwrap();
            assert_eq!(p.blurred, p.sharp);
            assert!(p.gt_mask.is_empty());
        }
    }

    #[test]
    fn two_frame_translation_matches_direct_average() {
        let (w, h) = (24, 16);
        let script = MotionScript {
            background: black(w, h),
            sprite: square_sprite(6, 1.0),
            rest_center: (8.5, 7.5),
            transforms: FrameTransform::linear_path(2, 1.0, 0.0, 0.0),
        };
        let p = simulate_pair(&script).unwrap();
        // square covers x in 6..=11, y in 5..=10, then x in 7..=12
        let frame = |shift: usize| {
            Image::from_fn(w, h, 3, |x, y, _| {
                if (6 + shift..=11 + shift).contains(&x) && (5..=10).contains(&y) {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap()
        };
        let (f0, f1) = (frame(0), frame(1));
        for i in 0..p.blurred.data().len() {
            assert_eq!(p.blurred.data()[i], 0.5 * (f0.data()[i] + f1.data()[i]));
        }
        assert_eq!(p.sharp, f0);
        assert_eq!(p.blurred.get(6, 7, 0), 0.5);
        assert_eq!(p.blurred.get(12, 7, 0), 0.5);
        assert_eq!(p.blurred.get(9, 7, 0), 1.0);
        assert_eq!(p.gt_mask.count_set(), 7 * 6);
    }

    #[test]
    fn mask_area_matches_footprint_union() {
        let script = MotionScript {
            background: Backdrop::Image(Image::filled(512, 512, 3, 0.2).unwrap()),
            sprite: square_sprite(64, 0.9),
            rest_center: (200.5, 250.5),
            transforms: FrameTransform::linear_path(33, 32.0, 0.0, 0.0),
        };
        let p = simulate_pair(&script).unwrap();
        let want = (64.0 * 96.0) / (512.0 * 512.0);
        assert!((p.gt_mask.area_fraction() - want).abs() < 1e-12);
        assert!(p.gt_mask.is_binary());
        for y in 0..512 {
            for x in 0..512 {
                let d = (0..3).any(|c| {
                    (p.blurred.get(x, y, c) - p.sharp.get(x, y, c)).abs() > DEFAULT_MASK_EPS
                });
                assert!(!d || p.gt_mask.is_set(x, y));
            }
        }
    }

    #[test]
    fn rotation_and_bounds() {
        let script = MotionScript {
            background: black(64, 64),
            sprite: square_sprite(16, 0.7),
            rest_center: (31.5, 31.5),
            transforms: FrameTransform::linear_path(10, 0.0, 0.0, 45.0),
        };
        let p = simulate_pair(&script).unwrap();
        assert!(!p.gt_mask.is_empty());
        let escaping = MotionScript {
            rest_center: (6.0, 31.5),
            ..script
        };
        assert!(simulate_pair(&escaping).is_err());
    }

    #[test]
    fn frame_averaging_is_linear() {
        let mk = |v: f64, dx: f64| MotionScript {
            background: Backdrop::Image(Image::filled(40, 30, 3, 0.1).unwrap()),
            sprite: square_sprite(6, v),
            rest_center: (12.5, 14.5),
            transforms: FrameTransform::linear_path(5, dx, 2.0, 0.0),
        };
        let (a, b) = (mk(0.9, 10.0), mk(0.9, -6.0));
        let pa = simulate_pair(&a).unwrap();
        let pb = simulate_pair(&b).unwrap();
        // averaging frames of two scripts = averaging their blurred images
        let mut both = a.clone();
        both.transforms.extend(b.transforms.iter().copied());
        let pab = render_view(&both, (0.0, 0.0)).unwrap();
        for i in 0..pa.blurred.data().len() {
            let want = 0.5 * (pa.blurred.data()[i] + pb.blurred.data()[i]);
            assert!((pab.blurred.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cast_injection_examples() {
        let img =
            Image::from_fn(16, 12, 3, |x, y, c| 0.1 + 0.03 * (x + y + c) as f64 / 10.0).unwrap();
        let id = ColorCalibration::identity(16, 12);
        assert_eq!(inject_color_cast(&img, &id).unwrap(), img);
        let mut k = id.constants;
        k[0][BASIS_LEN - 1] = 2.0;
        let red2 = ColorCalibration::from_constants(16, 12, k);
        let d = inject_color_cast(&img, &red2).unwrap();
        for i in 0..img.pixel_count() {
            assert_eq!(d.plane(0)[i], img.plane(0)[i] / 2.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cast = random_color_cast(&mut rng, 16, 12, [(7.0, 5.0); 3]).unwrap();
        let back = color_correct(&inject_color_cast(&img, &cast).unwrap(), &cast).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut bad = id.constants;
        bad[1][BASIS_LEN - 1] = -1.0;
        assert!(inject_color_cast(&img, &ColorCalibration::from_constants(16, 12, bad)).is_err());
    }

    #[test]
    fn brightness_and_shift_examples() {
        let img = Image::from_fn(20, 20, 3, |x, y, c| {
            0.2 + 0.01 * ((x * 3 + y * 5 + c) % 17) as f64
        })
        .unwrap();
        assert_eq!(inject_brightness(&img, [1.0; 3]).unwrap(), img);
        let (same, valid) = inject_misalignment(&img, 0.0, 0.0).unwrap();
        assert_eq!(same, img);
        assert_eq!(valid.count_set(), 400);
        let g = photometric_gain(&inject_brightness(&img, [2.0, 1.0, 1.0]).unwrap(), &img).unwrap();
        assert!((g.beta[0] - 0.5).abs() < 1e-12 && (g.beta[1] - 1.0).abs() < 1e-12);
        assert!(inject_misalignment(&img, 9.0, 0.0).is_err());
        assert!(inject_brightness(&img, [0.0, 1.0, 1.0]).is_err());
        let (_, valid) = inject_misalignment(&img, 3.0, 0.0).unwrap();
        assert_eq!(valid.count_set(), 17 * 20);
    }

    #[test]
    fn injected_shift_is_undone_by_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let field = WaveField::random(&mut rng, 192, 160, 10);
        let img =
            Image::from_fn(192, 160, 3, |x, y, c| field.sample(x as f64, y as f64)[c]).unwrap();
        let (moved, _) = inject_misalignment(&img, 3.0, 0.0).unwrap();
        let flow = estimate_flow(&img, &moved).unwrap();
        let aligned = warp(&moved, &flow).unwrap().image;
        assert!(geometric_error(&aligned, &img).unwrap() <= 1.0);
    }
}
