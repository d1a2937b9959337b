//! Randomized multi-pair scenes with known degradations.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ground_truth_mask, inject_brightness, inject_brightness_raw, inject_color_cast,
    inject_color_cast_raw, render_view, Backdrop, FrameTransform, MotionScript, Sprite,
    DEFAULT_FRAMES, DEFAULT_MASK_EPS,
};
use crate::calib::{self, ColorCalibration, PatchGrid, BASIS_LEN};
use crate::error::{Error, Result};
use crate::image::{BayerPattern, BlurMask, Frame, Image};

/// Background values stay in this band so casts and gains never clip.
pub const BACKGROUND_RANGE: (f64, f64) = (0.2, 0.45);
/// Uniform radiance of the calibration lightbox.
pub const LIGHTBOX_LEVEL: f64 = 0.4;
const CAST_COEFF: f64 = 0.05;
const CAST_ALPHA_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kx: i32,
    pub ky: i32,
    pub amp: [f64; 3],
    pub phase: [f64; 3],
}

/// Sum of plane waves with whole cycle counts across the frame, so the
/// field tiles the frame exactly and any integer shift keeps channel means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    pub width: usize,
    pub height: usize,
    pub waves: Vec<Wave>,
}

impl WaveField {
    pub fn random<R: Rng>(rng: &mut R, width: usize, height: usize, count: usize) -> Self {
        let kmax_x = (width / 12).max(1) as i32;
        let kmax_y = (height / 12).max(1) as i32;
        let mut waves: Vec<Wave> = (0..count.max(1))
            .map(|_| {
                let (kx, ky) = loop {
                    let k = (
                        rng.random_range(-kmax_x..=kmax_x),
                        rng.random_range(-kmax_y..=kmax_y),
                    );
                    if k != (0, 0) {
                        break k;
                    }
                };
                Wave {
                    kx,
                    ky,
                    amp: std::array::from_fn(|_| rng.random_range(0.3..1.0)),
                    phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
                }
            })
            .collect();
        for c in 0..3 {
            let total: f64 = waves.iter().map(|w| w.amp[c]).sum();
            for w in &mut waves {
                w.amp[c] /= total;
            }
        }
        Self {
            width,
            height,
            waves,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mid = 0.5 * (BACKGROUND_RANGE.0 + BACKGROUND_RANGE.1);
        let half = 0.5 * (BACKGROUND_RANGE.1 - BACKGROUND_RANGE.0);
        let mut out = [mid; 3];
        for w in &self.waves {
            let arg =
                TAU * (w.kx as f64 * x / self.width as f64 + w.ky as f64 * y / self.height as f64);
            for c in 0..3 {
                out[c] += half * w.amp[c] * (arg + w.phase[c]).sin();
            }
        }
        out
    }

    pub fn render(&self) -> Image {
        Image::from_fn(self.width, self.height, 3, |x, y, c| {
            self.sample(x as f64, y as f64)[c]
        })
        .expect("nonzero frame")
    }
}

/// Smooth cubic cast with `α = 1` at `refs[c]` and `α ∈ [0.5, 2]` over
/// the frame.
pub fn random_color_cast<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
    refs: [(f64, f64); 3],
) -> Result<ColorCalibration> {
    for _ in 0..1000 {
        let raw: [[f64; BASIS_LEN]; 3] = std::array::from_fn(|_| {
            std::array::from_fn(|i| {
                if i == BASIS_LEN - 1 {
                    1.0
                } else {
                    rng.random_range(-CAST_COEFF..CAST_COEFF)
                }
            })
        });
        let k = calib::normalize_constants(raw, width, height, refs)?;
        let cast = ColorCalibration::from_constants(width, height, k);
        let (lo, hi) = cast.alpha_range();
        if lo >= CAST_ALPHA_RANGE.0 && hi <= CAST_ALPHA_RANGE.1 {
            return Ok(cast);
        }
    }
    Err(Error::invalid("could not draw a bounded color cast"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteShape {
    Square,
    Disc,
}

fn random_sprite<R: Rng>(rng: &mut R, shape: SpriteShape, side: usize) -> Result<Sprite> {
    // dark or bright against the background band
    let base = if rng.random_bool(0.5) {
        rng.random_range(0.03..0.08)
    } else {
        rng.random_range(0.58..0.66)
    };
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.02..0.02));
    let (fx, fy, ph) = (
        rng.random_range(0.15..0.6),
        rng.random_range(0.15..0.6),
        rng.random_range(0.0..TAU),
    );
    let image = Image::from_fn(side, side, 3, |x, y, c| {
        base + tint[c] + 0.02 * (fx * x as f64 + ph).sin() * (fy * y as f64).cos()
    })?;
    let r = side as f64 / 2.0;
    let ctr = (side as f64 - 1.0) / 2.0;
    let alpha = match shape {
        SpriteShape::Square => BlurMask::ones(side, side),
        SpriteShape::Disc => BlurMask::from_predicate(side, side, |x, y| {
            (x as f64 - ctr).hypot(y as f64 - ctr) <= r
        }),
    };
    Sprite::new(image, alpha)
}

/// Zero-coverage sprite for background-only captures.
fn empty_sprite() -> Sprite {
    Sprite {
        image: Image::new(1, 1, 3).expect("1x1"),
        alpha: BlurMask::zeros(1, 1),
    }
}

/// Degradations applied between the two cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Degradation {
    /// Independent random casts on both cameras.
    pub color_cast: bool,
    /// Random per-channel gain in `[0.85, 1.1]` on the long-exposure camera.
    pub brightness: bool,
    /// Blurred camera content displacement: `blur(x) = truth(x - d)`.
    pub misalignment: (f64, f64),
}

impl Default for Degradation {
    fn default() -> Self {
        Self::none()
    }
}

impl Degradation {
    pub fn none() -> Self {
        Self {
            color_cast: false,
            brightness: false,
            misalignment: (0.0, 0.0),
        }
    }

    pub fn full() -> Self {
        Self {
            color_cast: true,
            brightness: true,
            misalignment: (3.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Number of pairs containing a moving sprite.
    pub targets: usize,
    pub frames: usize,
    /// Fixed sprite shape, or random per pair when absent.
    pub shape: Option<SpriteShape>,
    pub sprite_side: (usize, usize),
    /// Sprite travel during one long exposure, pixels.
    pub motion: (f64, f64),
    pub max_rotation_deg: f64,
    pub waves: usize,
    /// Emit RAW mosaics in this pattern instead of RGB frames.
    pub raw: Option<BayerPattern>,
    pub degradation: Degradation,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub mask_eps: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            targets: 5,
            frames: DEFAULT_FRAMES,
            shape: None,
            sprite_side: (48, 96),
            motion: (15.0, 60.0),
            max_rotation_deg: 10.0,
            waves: 12,
            raw: None,
            degradation: Degradation::none(),
            grid_cols: 10,
            grid_rows: 8,
            mask_eps: DEFAULT_MASK_EPS,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::invalid("scene must be at least 64x64"));
        }
        if self.raw.is_some() && (!self.width.is_multiple_of(2) || !self.height.is_multiple_of(2)) {
            return Err(Error::invalid("RAW scenes need even dimensions"));
        }
        if self.frames == 0 {
            return Err(Error::EmptyScript("frame count is zero".into()));
        }
        if self.sprite_side.0 < 2 || self.sprite_side.0 > self.sprite_side.1 {
            return Err(Error::invalid(
                "sprite side range must be ordered and at least 2",
            ));
        }
        if !(self.motion.0 >= 0.0 && self.motion.0 <= self.motion.1) {
            return Err(Error::invalid(
                "motion range must be ordered and non-negative",
            ));
        }
        if !(self.max_rotation_deg >= 0.0 && self.mask_eps >= 0.0) {
            return Err(Error::invalid("rotation and mask_eps must be non-negative"));
        }
        let (dx, dy) = self.degradation.misalignment;
        if !(dx.abs() <= super::MAX_MISALIGNMENT && dy.abs() <= super::MAX_MISALIGNMENT) {
            return Err(Error::invalid("misalignment exceeds 8 px"));
        }
        Ok(())
    }

    /// Lightbox patch grid: single pixels for RGB, one CFA quad for RAW.
    pub fn grid(&self) -> PatchGrid {
        PatchGrid::centered(
            self.grid_cols,
            self.grid_rows,
            if self.raw.is_some() { 2 } else { 1 },
        )
    }
}

fn cast_frame(f: &Frame, cast: &ColorCalibration) -> Result<Frame> {
    Ok(match f {
        Frame::Rgb(i) => Frame::Rgb(inject_color_cast(i, cast)?),
        Frame::Raw(r) => Frame::Raw(inject_color_cast_raw(r, cast)?),
    })
}

fn gain_frame(f: &Frame, g: [f64; 3]) -> Result<Frame> {
    Ok(match f {
        Frame::Rgb(i) => Frame::Rgb(inject_brightness(i, g)?),
        Frame::Raw(r) => Frame::Raw(inject_brightness_raw(r, g)?),
    })
}

#[derive(Debug, Clone)]
pub struct SimPair {
    pub blurred: Frame,
    pub sharp: Frame,
    /// Blur mask in the sharp camera's coordinates.
    pub gt_mask: BlurMask,
    pub rest_center: (f64, f64),
    pub transforms: Vec<FrameTransform>,
}

/// Everything injected into a scene, for closed-loop checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cast_blur: Option<ColorCalibration>,
    pub cast_sharp: Option<ColorCalibration>,
    pub gain: [f64; 3],
    /// `1 / gain`: the photometric gain that undoes `gain`.
    pub expected_beta: [f64; 3],
    pub misalignment: (f64, f64),
    pub grid: PatchGrid,
}

#[derive(Debug, Clone)]
pub struct SimScene {
    pub spec: SceneSpec,
    pub truth: GroundTruth,
    pub background: WaveField,
    /// Background-only pair; also serves as the alignment reference.
    pub static_pair: SimPair,
    pub targets: Vec<SimPair>,
    pub lightbox_blur: Frame,
    pub lightbox_sharp: Frame,
}

impl SimScene {
    pub fn generate(spec: &SceneSpec) -> Result<SimScene> {
        spec.validate()?;
        let (w, h) = (spec.width, spec.height);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let background = WaveField::random(&mut rng, w, h, spec.waves);
        let grid = spec.grid();
        let refs = calib::reference_points(&grid, w, h, spec.raw)?;
        let deg = spec.degradation;
        let (cast_blur, cast_sharp) = if deg.color_cast {
            (
                Some(random_color_cast(&mut rng, w, h, refs)?),
                Some(random_color_cast(&mut rng, w, h, refs)?),
            )
        } else {
            (None, None)
        };
        let gain: [f64; 3] = if deg.brightness {
            std::array::from_fn(|_| rng.random_range(0.85..1.1))
        } else {
            [1.0; 3]
        };
        let truth = GroundTruth {
            cast_blur,
            cast_sharp,
            gain,
            expected_beta: gain.map(|g| 1.0 / g),
            misalignment: deg.misalignment,
            grid,
        };

        let static_script = MotionScript {
            background: Backdrop::Waves(background.clone()),
            sprite: empty_sprite(),
            rest_center: ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            transforms: vec![FrameTransform::IDENTITY],
        };
        let static_pair = render_pair(spec, &truth, &static_script)?;
        let mut targets = Vec::with_capacity(spec.targets);
        for _ in 0..spec.targets {
            let shape = spec.shape.unwrap_or(if rng.random_bool(0.5) {
                SpriteShape::Square
            } else {
                SpriteShape::Disc
            });
            let side = rng.random_range(spec.sprite_side.0..=spec.sprite_side.1);
            let sprite = random_sprite(&mut rng, shape, side)?;
            let script =
                random_script(&mut rng, spec, Backdrop::Waves(background.clone()), sprite)?;
            targets.push(render_pair(spec, &truth, &script)?);
        }

        let lightbox = Frame::from_linear(Image::filled(w, h, 3, LIGHTBOX_LEVEL)?, spec.raw)?;
        let lightbox_blur = match &truth.cast_blur {
            Some(c) => cast_frame(&lightbox, c)?,
            None => lightbox.clone(),
        };
        let lightbox_sharp = match &truth.cast_sharp {
            Some(c) => cast_frame(&lightbox, c)?,
            None => lightbox,
        };
        Ok(SimScene {
            spec: spec.clone(),
            truth,
            background,
            static_pair,
            targets,
            lightbox_blur,
            lightbox_sharp,
        })
    }
}

fn random_script<R: Rng>(
    rng: &mut R,
    spec: &SceneSpec,
    background: Backdrop,
    sprite: Sprite,
) -> Result<MotionScript> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let reach = 0.5 * (sprite.image.width() as f64).hypot(sprite.image.height() as f64) + 1.0;
    let len = if spec.motion.1 > spec.motion.0 {
        rng.random_range(spec.motion.0..=spec.motion.1)
    } else {
        spec.motion.0
    };
    let dir = rng.random_range(0.0..TAU);
    let (dx, dy) = (len * dir.cos(), len * dir.sin());
    let rot = if spec.max_rotation_deg > 0.0 {
        rng.random_range(-spec.max_rotation_deg..=spec.max_rotation_deg)
    } else {
        0.0
    };
    let span = |extent: f64, d: f64| -> Result<(f64, f64)> {
        let lo = reach + (-d).max(0.0);
        let hi = extent - 1.0 - reach - d.max(0.0);
        if lo > hi {
            return Err(Error::invalid("sprite and motion do not fit in the frame"));
        }
        Ok((lo, hi))
    };
    let (x0, x1) = span(w, dx)?;
    let (y0, y1) = span(h, dy)?;
    let cx = if x1 > x0 {
        rng.random_range(x0..=x1)
    } else {
        x0
    };
    let cy = if y1 > y0 {
        rng.random_range(y0..=y1)
    } else {
        y0
    };
    Ok(MotionScript {
        background,
        sprite,
        rest_center: (cx, cy),
        transforms: FrameTransform::linear_path(spec.frames, dx, dy, rot),
    })
}

fn render_pair(spec: &SceneSpec, truth: &GroundTruth, script: &MotionScript) -> Result<SimPair> {
    let sharp_view = render_view(script, (0.0, 0.0))?;
    let gt_mask = ground_truth_mask(script, &sharp_view, spec.mask_eps)?;
    let (mx, my) = truth.misalignment;
    let blurred = if (mx, my) == (0.0, 0.0) {
        sharp_view.blurred
    } else {
        render_view(script, (-mx, -my))?.blurred
    };
    let mut blurred = Frame::from_linear(blurred, spec.raw)?;
    let mut sharp = Frame::from_linear(sharp_view.sharp, spec.raw)?;
    if let Some(c) = &truth.cast_blur {
        blurred = cast_frame(&blurred, c)?;
    }
    if let Some(c) = &truth.cast_sharp {
        sharp = cast_frame(&sharp, c)?;
    }
    if truth.gain != [1.0; 3] {
        blurred = gain_frame(&blurred, truth.gain)?;
    }
    Ok(SimPair {
        blurred,
        sharp,
        gt_mask,
        rest_center: script.rest_center,
        transforms: script.transforms.clone(),
    })
}
