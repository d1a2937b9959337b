//! Ground-truth blur masks from per-pixel Gaussian-mixture background
//! subtraction.
//!
//! Two mixture models are trained on one scene: one on the sharp stream,
//! one on the blurred stream. Both are initialized from the background-only
//! pair and then fed the remaining pairs in order. The target pair is then
//! labelled against each model and the two label maps are combined:
//! `M = (fg_sharp > 1) OR (fg_blur > 1)`, followed by an opening.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BlurMask, Image};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_SHADOW: u8 = 127;
pub const LABEL_FOREGROUND: u8 = 255;
/// Capacity of the per-pixel component list.
pub const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub k_max: usize,
    /// Learning rate ρ.
    pub rho: f64,
    /// Cumulative weight of the components treated as background.
    pub t_bg: f64,
    /// Match distance in standard deviations.
    pub match_sigma: f64,
    pub var_floor: f64,
    pub var_init: f64,
    pub detect_shadows: bool,
    /// Lowest brightness ratio accepted as shadow.
    pub shadow_ratio: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k_max: 5,
            rho: 0.05,
            t_bg: 0.9,
            match_sigma: 2.5,
            var_floor: (4.0f64 / 255.0).powi(2),
            var_init: (8.0f64 / 255.0).powi(2),
            detect_shadows: true,
            shadow_ratio: 0.5,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.k_max > MAX_COMPONENTS {
            return Err(Error::invalid(format!(
                "k_max must be in 1..={MAX_COMPONENTS}"
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid("rho must be in (0, 1]"));
        }
        if !(self.t_bg > 0.0 && self.t_bg <= 1.0) {
            return Err(Error::invalid("t_bg must be in (0, 1]"));
        }
        if !(self.match_sigma > 0.0 && self.var_floor > 0.0 && self.var_init >= self.var_floor) {
            return Err(Error::invalid(
                "match_sigma, var_floor must be positive and var_init >= var_floor",
            ));
        }
        if !(self.shadow_ratio > 0.0 && self.shadow_ratio < 1.0) {
            return Err(Error::invalid("shadow_ratio must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Component {
    w: f32,
    mu: [f32; 3],
    /// Per-channel variance.
    var: f32,
}

impl Component {
    fn score(&self) -> f32 {
        self.w / self.var.sqrt()
    }
}

/// Per-pixel mixture of isotropic RGB Gaussians, components kept sorted
/// by `w / σ`.
#[derive(Debug, Clone)]
pub struct GmmBackgroundModel {
    width: usize,
    height: usize,
    params: GmmParams,
    comps: Vec<Component>,
    counts: Vec<u8>,
    initialized: bool,
}

/// Per-pixel labels: 0 background, 127 shadow, 255 foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FgLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl FgLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::dims(
                (width * height).to_string(),
                labels.len().to_string(),
            ));
        }
        if let Some(v) = labels
            .iter()
            .find(|&&v| v != LABEL_BACKGROUND && v != LABEL_SHADOW && v != LABEL_FOREGROUND)
        {
            return Err(Error::invalid(format!("label {v} is not 0, 127 or 255")));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&v| v == label).count()
    }

    /// `label > threshold` as a binary mask.
    pub fn above(&self, threshold: u8) -> BlurMask {
        let data = self
            .labels
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect();
        BlurMask::from_vec(self.width, self.height, data).expect("same shape")
    }
}

fn pixel(img: &Image, i: usize) -> [f64; 3] {
    let n = img.pixel_count();
    let d = img.data();
    [d[i], d[n + i], d[2 * n + i]]
}

impl GmmBackgroundModel {
    pub fn new(width: usize, height: usize, params: GmmParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("model needs a nonempty frame"));
        }
        Ok(Self {
            width,
            height,
            params,
            comps: vec![Component::default(); width * height * params.k_max],
            counts: vec![0; width * height],
            initialized: false,
        })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.width() != self.width || img.height() != self.height || img.channels() != 3 {
            return Err(Error::dims(
                format!("{}x{}x3", self.width, self.height),
                img.dims_string(),
            ));
        }
        Ok(())
    }

    /// Sum of component weights at pixel `(x, y)`.
    pub fn weight_sum(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        let k = self.params.k_max;
        self.comps[i * k..i * k + self.counts[i] as usize]
            .iter()
            .map(|c| c.w as f64)
            .sum()
    }

    /// Smallest variance over all live components.
    pub fn min_variance(&self) -> f64 {
        let k = self.params.k_max;
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| self.comps[i * k..i * k + n as usize].iter())
            .map(|c| c.var as f64)
            .fold(f64::INFINITY, f64::min)
    }

    /// Labels a frame without changing the model.
    pub fn classify(&self, img: &Image) -> Result<FgLabelMap> {
        self.check(img)?;
        self.require_init()?;
        let k = self.params.k_max;
        let p = self.params;
        let labels = (0..self.width * self.height)
            .into_par_iter()
            .map(|i| {
                let n = self.counts[i] as usize;
                label_pixel(&self.comps[i * k..i * k + n], pixel(img, i), &p).0
            })
            .collect();
        FgLabelMap::new(self.width, self.height, labels)
    }

    fn require_init(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::invalid("background model is not initialized"));
        }
        Ok(())
    }
}

/// Label and index of the matched component, if any.
fn label_pixel(comps: &[Component], x: [f64; 3], p: &GmmParams) -> (u8, Option<usize>) {
    let t2 = p.match_sigma * p.match_sigma;
    let mut cum = 0.0;
    let mut matched = None;
    let mut background = false;
    for (j, c) in comps.iter().enumerate() {
        let d2: f64 = (0..3).map(|ch| (x[ch] - c.mu[ch] as f64).powi(2)).sum();
        if d2 <= t2 * 3.0 * c.var as f64 {
            matched = Some(j);
            background = cum < p.t_bg;
            break;
        }
        cum += c.w as f64;
    }
    if background {
        return (LABEL_BACKGROUND, matched);
    }
    if p.detect_shadows && is_shadow(comps, x, p) {
        return (LABEL_SHADOW, matched);
    }
    (LABEL_FOREGROUND, matched)
}

/// Darker version of a background component with little color distortion.
fn is_shadow(comps: &[Component], x: [f64; 3], p: &GmmParams) -> bool {
    let t2 = p.match_sigma * p.match_sigma;
    let mut cum = 0.0;
    for c in comps {
        if cum >= p.t_bg {
            break;
        }
        let mu = c.mu.map(|v| v as f64);
        let mm: f64 = mu.iter().map(|m| m * m).sum();
        if mm > 0.0 {
            let a = (0..3).map(|ch| x[ch] * mu[ch]).sum::<f64>() / mm;
            if a >= p.shadow_ratio && a < 1.0 {
                let dist: f64 = (0..3).map(|ch| (x[ch] - a * mu[ch]).powi(2)).sum();
                if dist <= t2 * 3.0 * c.var as f64 * a * a {
                    return true;
                }
            }
        }
        cum += c.w as f64;
    }
    false
}

fn update_pixel(
    comps: &mut [Component],
    n: &mut u8,
    x: [f64; 3],
    matched: Option<usize>,
    p: &GmmParams,
) {
    let live = *n as usize;
    let rho = p.rho;
    for c in comps[..live].iter_mut() {
        c.w = ((1.0 - rho) * c.w as f64) as f32;
    }
    match matched {
        Some(j) => {
            let c = &mut comps[j];
            let w = c.w as f64 + rho;
            c.w = w as f32;
            let k = (rho / w).min(1.0);
            let mut d2 = 0.0;
            for ch in 0..3 {
                let mu = c.mu[ch] as f64;
                let nm = mu + k * (x[ch] - mu);
                d2 += (x[ch] - mu).powi(2);
                c.mu[ch] = nm as f32;
            }
            let var = c.var as f64 + k * (d2 / 3.0 - c.var as f64);
            c.var = var.max(p.var_floor) as f32;
        }
        None => {
            let fresh = Component {
                w: rho as f32,
                mu: x.map(|v| v as f32),
                var: p.var_init as f32,
            };
            if live < p.k_max {
                comps[live] = fresh;
                *n += 1;
            } else {
                // list is sorted, so the last component is the weakest
                comps[live - 1] = fresh;
            }
        }
    }
    let live = *n as usize;
    let total: f64 = comps[..live].iter().map(|c| c.w as f64).sum();
    if total > 0.0 {
        for c in comps[..live].iter_mut() {
            c.w = (c.w as f64 / total) as f32;
        }
    }
    comps[..live].sort_by(|a, b| b.score().total_cmp(&a.score()));
}

/// Resets `model` to a single unit-weight component per pixel at `img`.
pub fn gmm_init(model: &mut GmmBackgroundModel, img: &Image) -> Result<()> {
    model.check(img)?;
    let k = model.params.k_max;
    let var = model.params.var_init as f32;
    model
        .comps
        .par_chunks_mut(k)
        .zip(model.counts.par_iter_mut())
        .enumerate()
        .for_each(|(i, (comps, n))| {
            comps.fill(Component::default());
            comps[0] = Component {
                w: 1.0,
                mu: pixel(img, i).map(|v| v as f32),
                var,
            };
            *n = 1;
        });
    model.initialized = true;
    Ok(())
}

/// Labels `img` against the current model, then learns it.
pub fn gmm_update(model: &mut GmmBackgroundModel, img: &Image) -> Result<FgLabelMap> {
    model.check(img)?;
    model.require_init()?;
    let k = model.params.k_max;
    let p = model.params;
    let labels: Vec<u8> = model
        .comps
        .par_chunks_mut(k)
        .zip(model.counts.par_iter_mut())
        .enumerate()
        .map(|(i, (comps, n))| {
            let x = pixel(img, i);
            let (label, matched) = label_pixel(&comps[..*n as usize], x, &p);
            update_pixel(comps, n, x, matched, &p);
            label
        })
        .collect();
    FgLabelMap::new(model.width, model.height, labels)
}

/// Sharp and blurred exposure of one pair.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub sharp: &'a Image,
    pub blurred: &'a Image,
}

#[derive(Debug, Clone)]
pub struct MaskScene<'a> {
    /// Background-only pair used to initialize both models.
    pub static_pair: Option<PairView<'a>>,
    pub target: PairView<'a>,
    /// Remaining pairs, fed to the models in order.
    pub others: Vec<PairView<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfmgParams {
    pub gmm: GmmParams,
    /// Square structuring element radius for the opening; 2 gives 5×5.
    pub morph_radius: usize,
}

impl Default for LbfmgParams {
    fn default() -> Self {
        Self {
            gmm: GmmParams::default(),
            morph_radius: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfmgOutput {
    pub mask: BlurMask,
    pub fg_sharp: FgLabelMap,
    pub fg_blur: FgLabelMap,
}

/// Erosion then dilation.
pub fn open_mask(mask: &BlurMask, radius: usize) -> BlurMask {
    if radius == 0 {
        return mask.clone();
    }
    mask.erode(radius).dilate(radius)
}

pub fn lbfmg_generate(scene: &MaskScene<'_>, params: &LbfmgParams) -> Result<LbfmgOutput> {
    let st = scene
        .static_pair
        .ok_or_else(|| Error::invalid("scene has no static pair"))?;
    let (w, h) = (st.sharp.width(), st.sharp.height());
    let mut g_sharp = GmmBackgroundModel::new(w, h, params.gmm)?;
    let mut g_blur = GmmBackgroundModel::new(w, h, params.gmm)?;
    gmm_init(&mut g_sharp, st.sharp)?;
    gmm_init(&mut g_blur, st.blurred)?;
    for p in &scene.others {
        gmm_update(&mut g_sharp, p.sharp)?;
        gmm_update(&mut g_blur, p.blurred)?;
    }
    let fg_sharp = g_sharp.classify(scene.target.sharp)?;
    let fg_blur = g_blur.classify(scene.target.blurred)?;
    let mask = fg_sharp.above(1).or(&fg_blur.above(1))?;
    Ok(LbfmgOutput {
        mask: open_mask(&mask, params.morph_radius),
        fg_sharp,
        fg_blur,
    })
}
