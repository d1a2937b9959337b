//! Paired-capture post-processing: color correction, photometric gain,
//! RAW processing and geometric alignment, in that order.
//!
//! The photometric gain is measured once on the static (background-only)
//! pair and applied to every blurred frame. The flow is measured once on
//! the reference pair and every blurred frame is warped onto its sharp
//! partner with it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{self, ColorCalibration, PatchGrid, PhotometricGain};
use crate::capture_sim::SimScene;
use crate::error::{Error, Result};
use crate::geoalign::{self, FlowOptions};
use crate::image::{BlurMask, FlowField, Frame, Image, Rect};
use crate::isp::{IspConfig, IspPipeline};
use crate::metrics;

#[derive(Debug, Clone, PartialEq)]
pub struct PairFrames {
    pub blurred: Frame,
    pub sharp: Frame,
}

#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub calib_blur: Option<ColorCalibration>,
    pub calib_sharp: Option<ColorCalibration>,
    pub static_pair: PairFrames,
    /// Alignment reference; the static pair when absent.
    pub reference: Option<PairFrames>,
    pub targets: Vec<PairFrames>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub isp: IspConfig,
    pub flow: FlowOptions,
}

/// Fits a color calibration to a lightbox capture.
pub fn calibrate_frame(lightbox: &Frame, grid: &PatchGrid) -> Result<ColorCalibration> {
    let m = match lightbox {
        Frame::Rgb(i) => calib::measure_patches(i, grid)?,
        Frame::Raw(r) => calib::measure_patches_raw(r, grid)?,
    };
    calib::fit_color_constants(&m)
}

impl PipelineInput {
    /// Pipeline input for a simulated scene, calibrating both cameras from
    /// the scene's lightbox frames.
    pub fn from_scene(scene: &SimScene) -> Result<Self> {
        let pair = |p: &crate::capture_sim::SimPair| PairFrames {
            blurred: p.blurred.clone(),
            sharp: p.sharp.clone(),
        };
        Ok(Self {
            calib_blur: Some(calibrate_frame(&scene.lightbox_blur, &scene.truth.grid)?),
            calib_sharp: Some(calibrate_frame(&scene.lightbox_sharp, &scene.truth.grid)?),
            static_pair: pair(&scene.static_pair),
            reference: None,
            targets: scene.targets.iter().map(pair).collect(),
        })
    }

    fn pairs(&self) -> impl Iterator<Item = &PairFrames> {
        std::iter::once(&self.static_pair)
            .chain(self.reference.iter())
            .chain(self.targets.iter())
    }

    fn validate(&self) -> Result<()> {
        let first = &self.static_pair.sharp;
        let raw = matches!(first, Frame::Raw(_));
        for p in self.pairs() {
            for f in [&p.blurred, &p.sharp] {
                if f.width() != first.width() || f.height() != first.height() {
                    return Err(Error::dims(
                        format!("{}x{}", first.width(), first.height()),
                        format!("{}x{}", f.width(), f.height()),
                    ));
                }
                if matches!(f, Frame::Raw(_)) != raw {
                    return Err(Error::invalid("pipeline frames must be all RAW or all RGB"));
                }
            }
        }
        for cal in [&self.calib_blur, &self.calib_sharp].into_iter().flatten() {
            if cal.width != first.width() || cal.height != first.height() {
                return Err(Error::dims(
                    format!("{}x{} calibration", first.width(), first.height()),
                    format!("{}x{}", cal.width, cal.height),
                ));
            }
        }
        Ok(())
    }
}

pub fn correct_frame(f: &Frame, cal: Option<&ColorCalibration>) -> Result<Frame> {
    Ok(match (f, cal) {
        (_, None) => f.clone(),
        (Frame::Rgb(i), Some(c)) => Frame::Rgb(calib::color_correct(i, c)?),
        (Frame::Raw(r), Some(c)) => Frame::Raw(calib::color_correct_raw(r, c)?),
    })
}

pub fn frame_gain(blurred: &Frame, sharp: &Frame) -> Result<PhotometricGain> {
    match (blurred, sharp) {
        (Frame::Rgb(b), Frame::Rgb(s)) => calib::photometric_gain(b, s),
        (Frame::Raw(b), Frame::Raw(s)) => calib::photometric_gain_raw(b, s),
        _ => Err(Error::invalid("gain needs two frames of the same kind")),
    }
}

pub fn apply_frame_gain(f: &Frame, g: &PhotometricGain) -> Result<Frame> {
    Ok(match f {
        Frame::Rgb(i) => Frame::Rgb(calib::apply_gain(i, g)?),
        Frame::Raw(r) => Frame::Raw(calib::apply_gain_raw(r, g)),
    })
}

/// RAW frames go through the ISP; RGB frames pass unchanged.
pub fn develop(f: &Frame, isp: &IspPipeline) -> Result<Image> {
    match f {
        Frame::Rgb(i) => Ok(i.clone()),
        Frame::Raw(r) => isp.run(r),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub residual_rms: [f64; 3],
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl CalibrationSummary {
    fn of(c: &ColorCalibration) -> Self {
        let (alpha_min, alpha_max) = c.alpha_range();
        Self {
            residual_rms: c.residual_rms,
            alpha_min,
            alpha_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    /// Gain this pair alone would call for after color correction.
    pub beta: [f64; 3],
    /// On the developed but otherwise uncorrected pair.
    pub delta_l_before: f64,
    pub delta_l_after: f64,
    /// `None` when the pair has too little texture to measure.
    pub geometric_error_before: Option<f64>,
    pub geometric_error_after: Option<f64>,
    pub psnr_before: f64,
    pub psnr_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<String>,
    pub calibration_blur: Option<CalibrationSummary>,
    pub calibration_sharp: Option<CalibrationSummary>,
    /// Gain applied to every blurred frame.
    pub beta: [f64; 3],
    pub flow_median: [f64; 2],
    /// Region where every warped frame is valid; before/after figures are
    /// computed here.
    pub evaluation_rect: Rect,
    pub static_pair: PairReport,
    pub reference: Option<PairReport>,
    pub targets: Vec<PairReport>,
}

impl PipelineReport {
    pub fn all_pairs(&self) -> impl Iterator<Item = &PairReport> {
        std::iter::once(&self.static_pair)
            .chain(self.reference.iter())
            .chain(self.targets.iter())
    }

    /// The pair whose flow drove alignment.
    pub fn alignment_pair(&self) -> &PairReport {
        self.reference.as_ref().unwrap_or(&self.static_pair)
    }
}

#[derive(Debug, Clone)]
pub struct ProcessedPair {
    /// Blurred frame after all stages, warped onto the sharp frame.
    pub blurred: Image,
    pub sharp: Image,
    pub valid: BlurMask,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub flow: FlowField,
    pub static_pair: ProcessedPair,
    pub reference: Option<ProcessedPair>,
    pub targets: Vec<ProcessedPair>,
}

struct Developed {
    blurred: Image,
    sharp: Image,
    raw_blurred: Image,
    raw_sharp: Image,
    beta: [f64; 3],
}

fn evaluation_rect(flow: &FlowField) -> Rect {
    let m = flow
        .u()
        .iter()
        .chain(flow.v())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let full = Rect::full(flow.width(), flow.height());
    let inset = full.inset(m.ceil() as usize + 1);
    if inset.is_empty() {
        full
    } else {
        inset
    }
}

fn crop_pair(a: &Image, b: &Image, r: Rect) -> Result<(Image, Image)> {
    Ok((a.crop(r)?, b.crop(r)?))
}

fn geometric_error_opt(a: &Image, b: &Image) -> Result<Option<f64>> {
    match geoalign::geometric_error(a, b) {
        Ok(e) => Ok(Some(e)),
        Err(Error::NoTexture) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn run_pipeline(input: &PipelineInput, config: &PipelineConfig) -> Result<PipelineOutput> {
    input.validate()?;
    let isp = config.isp.pipeline()?;
    let (cb, cs) = (input.calib_blur.as_ref(), input.calib_sharp.as_ref());

    let st_b = correct_frame(&input.static_pair.blurred, cb)?;
    let st_s = correct_frame(&input.static_pair.sharp, cs)?;
    let gain = frame_gain(&st_b, &st_s)?;

    let pairs: Vec<&PairFrames> = input.pairs().collect();
    let developed: Vec<Developed> = pairs
        .par_iter()
        .map(|p| {
            let b = correct_frame(&p.blurred, cb)?;
            let s = correct_frame(&p.sharp, cs)?;
            let beta = frame_gain(&b, &s)?.beta;
            let b = apply_frame_gain(&b, &gain)?;
            Ok(Developed {
                blurred: develop(&b, &isp)?,
                sharp: develop(&s, &isp)?,
                raw_blurred: develop(&p.blurred, &isp)?,
                raw_sharp: develop(&p.sharp, &isp)?,
                beta,
            })
        })
        .collect::<Result<_>>()?;

    let ref_idx = if input.reference.is_some() { 1 } else { 0 };
    let flow = geoalign::estimate_flow_with(
        &developed[ref_idx].sharp,
        &developed[ref_idx].blurred,
        &config.flow,
    )?;
    let rect = evaluation_rect(&flow);

    let results: Vec<(ProcessedPair, PairReport)> = developed
        .into_par_iter()
        .map(|d| {
            let warped = geoalign::warp(&d.blurred, &flow)?;
            let (rb, rs) = crop_pair(&d.raw_blurred, &d.raw_sharp, rect)?;
            let (cb, cs) = crop_pair(&d.blurred, &d.sharp, rect)?;
            let (wb, ws) = crop_pair(&warped.image, &d.sharp, rect)?;
            let report = PairReport {
                beta: d.beta,
                delta_l_before: calib::delta_l(&rb, &rs)?,
                delta_l_after: calib::delta_l(&wb, &ws)?,
                geometric_error_before: geometric_error_opt(&cb, &cs)?,
                geometric_error_after: geometric_error_opt(&wb, &ws)?,
                psnr_before: metrics::psnr(&rb, &rs, 1.0)?,
                psnr_after: metrics::psnr(&wb, &ws, 1.0)?,
            };
            Ok((
                ProcessedPair {
                    blurred: warped.image,
                    sharp: d.sharp,
                    valid: warped.valid,
                },
                report,
            ))
        })
        .collect::<Result<_>>()?;

    let mut it = results.into_iter();
    let (static_out, static_rep) = it.next().expect("static pair");
    let reference = if input.reference.is_some() {
        it.next()
    } else {
        None
    };
    let (targets, target_reps): (Vec<_>, Vec<_>) = it.unzip();
    let (reference_out, reference_rep) = match reference {
        Some((o, r)) => (Some(o), Some(r)),
        None => (None, None),
    };

    let mut stages = vec!["color-correct".to_string(), "photometric-align".to_string()];
    if matches!(input.static_pair.sharp, Frame::Raw(_)) {
        stages.extend(isp.stage_names());
    }
    stages.push("geometric-align".to_string());
    let (mu, mv) = flow.median();
    let report = PipelineReport {
        stages,
        calibration_blur: cb.map(CalibrationSummary::of),
        calibration_sharp: cs.map(CalibrationSummary::of),
        beta: gain.beta,
        flow_median: [mu, mv],
        evaluation_rect: rect,
        static_pair: static_rep,
        reference: reference_rep,
        targets: target_reps,
    };
    Ok(PipelineOutput {
        report,
        flow,
        static_pair: static_out,
        reference: reference_out,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture_sim::{Degradation, SceneSpec};
    use crate::image::BayerPattern;

    fn spec(raw: Option<BayerPattern>, deg: Degradation) -> SceneSpec {
        SceneSpec {
            width: 256,
            height: 192,
            targets: 2,
            frames: 10,
            sprite_side: (24, 40),
            motion: (15.0, 30.0),
            raw,
            degradation: deg,
            seed: 12,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn full_round_trip_on_rgb_and_raw_scenes() {
        for raw in [None, Some(BayerPattern::Rggb), Some(BayerPattern::Gbrg)] {
            let scene = SimScene::generate(&spec(raw, Degradation::full())).unwrap();
            let out = run_pipeline(
                &PipelineInput::from_scene(&scene).unwrap(),
                &PipelineConfig::default(),
            )
            .unwrap();
            let r = &out.report;
            for c in 0..3 {
                assert!(
                    (r.beta[c] - scene.truth.expected_beta[c]).abs()
                        <= 1e-6 * scene.truth.expected_beta[c]
                );
            }
            for p in r.all_pairs() {
                assert!(p.delta_l_after <= p.delta_l_before, "{raw:?}: {p:?}");
            }
            let a = r.alignment_pair();
            assert!(a.geometric_error_before.unwrap() > 2.5);
            assert!(a.geometric_error_after.unwrap() <= 1.0, "{raw:?}: {a:?}");
            assert!(a.psnr_after - a.psnr_before >= 10.0, "{raw:?}: {a:?}");
            assert!((r.flow_median[0] - 3.0).abs() < 0.25 && r.flow_median[1].abs() < 0.25);
            assert_eq!(r.stages.first().map(String::as_str), Some("color-correct"));
            assert_eq!(r.stages.last().map(String::as_str), Some("geometric-align"));
        }
    }

    #[test]
    fn clean_scene_passes_through() {
        let scene = SimScene::generate(&spec(None, Degradation::none())).unwrap();
        let input = PipelineInput {
            calib_blur: None,
            calib_sharp: None,
            ..PipelineInput::from_scene(&scene).unwrap()
        };
        let out = run_pipeline(&input, &PipelineConfig::default()).unwrap();
        assert_eq!(out.report.beta, [1.0; 3]);
        assert!(out.report.static_pair.delta_l_after < 1e-9);
        assert_eq!(
            &out.static_pair.blurred,
            scene.static_pair.blurred.as_rgb().unwrap()
        );
    }

    #[test]
    fn mixed_inputs_are_rejected() {
        let rgb = SimScene::generate(&spec(None, Degradation::none())).unwrap();
        let raw = SimScene::generate(&spec(Some(BayerPattern::Rggb), Degradation::none())).unwrap();
        let mut input = PipelineInput::from_scene(&rgb).unwrap();
        input.targets[0].blurred = raw.targets[0].blurred.clone();
        assert!(run_pipeline(&input, &PipelineConfig::default()).is_err());
    }
}
