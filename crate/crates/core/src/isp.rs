//! RAW to RGB conversion: demosaic, white balance, color mapping, gamma.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BayerImage, Image};

pub const DEFAULT_GAMMA: f64 = 2.2;

/// Turns a mosaic into a 3-channel image. Implementations must reproduce
/// the native channel of every site exactly.
pub trait Demosaic: Send + Sync {
    fn name(&self) -> &'static str;
    fn demosaic(&self, raw: &BayerImage) -> Result<Image>;
}

/// Gradient-corrected bilinear interpolation with 5x5 kernels.
#[derive(Debug, Clone, Copy, Default)]
pub struct Malvar;

// Kernels scaled by 8, indexed [dy + 2][dx + 2].
const G_AT_RB: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [-1.0, 2.0, 4.0, 2.0, -1.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
];
/// Red/blue at a green site whose row holds that color.
const RB_AT_G_ROW: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.5, 0.0, 0.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [-1.0, 4.0, 5.0, 4.0, -1.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.5, 0.0, 0.0],
];
/// Red/blue at a green site whose column holds that color.
const RB_AT_G_COL: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, -1.0, 4.0, -1.0, 0.0],
    [0.5, 0.0, 5.0, 0.0, 0.5],
    [0.0, -1.0, 4.0, -1.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
];
/// Red at blue sites and blue at red sites.
const RB_AT_BR: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.5, 0.0, 0.0],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [-1.5, 0.0, 6.0, 0.0, -1.5],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [0.0, 0.0, -1.5, 0.0, 0.0],
];

/// Mirror index without repeating the edge sample; keeps CFA parity.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

impl Demosaic for Malvar {
    fn name(&self) -> &'static str {
        "malvar"
    }

    fn demosaic(&self, raw: &BayerImage) -> Result<Image> {
        let (w, h) = (raw.width(), raw.height());
        if w < 2 || h < 2 {
            return Err(Error::invalid("mosaic too small to demosaic"));
        }
        let pat = raw.pattern();
        let apply = |k: &[[f64; 5]; 5], x: usize, y: usize| -> f64 {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                let yy = reflect(y as isize + dy as isize - 2, h);
                for (dx, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        acc += kv * raw.get(reflect(x as isize + dx as isize - 2, w), yy);
                    }
                }
            }
            acc / 8.0
        };
        let rows: Vec<[Vec<f64>; 3]> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; w]);
                for x in 0..w {
                    let native = pat.channel_at(x, y);
                    let v = raw.get(x, y);
                    out[native][x] = v;
                    match native {
                        1 => {
                            // the row neighbour tells which color shares this row
                            let row_color = pat.channel_at(x ^ 1, y);
                            let col_color = 2 - row_color;
                            out[row_color][x] = apply(&RB_AT_G_ROW, x, y);
                            out[col_color][x] = apply(&RB_AT_G_COL, x, y);
                        }
                        c => {
                            out[1][x] = apply(&G_AT_RB, x, y);
                            out[2 - c][x] = apply(&RB_AT_BR, x, y);
                        }
                    }
                }
                out
            })
            .collect();
        let mut data = vec![0.0; 3 * w * h];
        for (y, row) in rows.into_iter().enumerate() {
            for (c, r) in row.into_iter().enumerate() {
                data[c * w * h + y * w..c * w * h + (y + 1) * w].copy_from_slice(&r);
            }
        }
        Image::from_planes(w, h, 3, data)
    }
}

pub fn demosaic(raw: &BayerImage) -> Result<Image> {
    Malvar.demosaic(raw)
}

fn check_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::dims("3 channels", img.dims_string()));
    }
    Ok(())
}

pub fn white_balance(img: &Image, gains: [f64; 3]) -> Result<Image> {
    check_rgb(img)?;
    if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::invalid(format!(
            "white-balance gains must be positive, got {gains:?}"
        )));
    }
    let mut out = img.clone();
    for (c, g) in gains.iter().enumerate() {
        for v in out.plane_mut(c) {
            *v *= g;
        }
    }
    Ok(out)
}

/// Per-pixel `out = M · rgb`, clamped to `[0, 1]`.
pub fn color_map(img: &Image, m: [[f64; 3]; 3]) -> Result<Image> {
    check_rgb(img)?;
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("color matrix must be finite"));
    }
    let n = img.pixel_count();
    let mut out = img.clone();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    for (c, row) in m.iter().enumerate() {
        let plane = out.plane_mut(c);
        for i in 0..n {
            plane[i] = (row[0] * r[i] + row[1] * g[i] + row[2] * b[i]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Power law `x^(1/γ)`; negative inputs map to 0.
pub fn gamma(img: &Image, g: f64) -> Result<Image> {
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {g}")));
    }
    let e = 1.0 / g;
    Ok(img.map(|v| v.max(0.0).powf(e)))
}

pub const IDENTITY_MATRIX: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// ISP parameters as they appear in the toolkit config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IspConfig {
    pub wb_gains: [f64; 3],
    pub color_matrix: [[f64; 3]; 3],
    pub gamma: f64,
}

impl Default for IspConfig {
    fn default() -> Self {
        Self {
            wb_gains: [1.0; 3],
            color_matrix: IDENTITY_MATRIX,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl IspConfig {
    pub fn pipeline(&self) -> Result<IspPipeline> {
        IspPipeline::builder()
            .demosaic(Box::new(Malvar))?
            .white_balance(self.wb_gains)?
            .color_map(self.color_matrix)?
            .gamma(self.gamma)?
            .build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageKind {
    Demosaic,
    WhiteBalance,
    ColorMap,
    Gamma,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Demosaic => "demosaic",
            StageKind::WhiteBalance => "white-balance",
            StageKind::ColorMap => "color-map",
            StageKind::Gamma => "gamma",
        })
    }
}

enum Stage {
    Demosaic(Box<dyn Demosaic>),
    WhiteBalance([f64; 3]),
    ColorMap([[f64; 3]; 3]),
    Gamma(f64),
}

impl Stage {
    fn kind(&self) -> StageKind {
        match self {
            Stage::Demosaic(_) => StageKind::Demosaic,
            Stage::WhiteBalance(_) => StageKind::WhiteBalance,
            Stage::ColorMap(_) => StageKind::ColorMap,
            Stage::Gamma(_) => StageKind::Gamma,
        }
    }
}

/// Builder that only accepts stages in demosaic, white balance, color map,
/// gamma order. Later stages may be omitted; demosaic may not.
#[derive(Default)]
pub struct IspBuilder {
    stages: Vec<Stage>,
}

impl IspBuilder {
    fn push(mut self, stage: Stage) -> Result<Self> {
        let kind = stage.kind();
        if let Some(last) = self.stages.last() {
            if last.kind() >= kind {
                return Err(Error::invalid(format!(
                    "ISP stage {kind} cannot follow {}",
                    last.kind()
                )));
            }
        } else if kind != StageKind::Demosaic {
            return Err(Error::invalid(format!(
                "ISP must start with demosaic, not {kind}"
            )));
        }
        self.stages.push(stage);
        Ok(self)
    }

    pub fn demosaic(self, d: Box<dyn Demosaic>) -> Result<Self> {
        self.push(Stage::Demosaic(d))
    }

    pub fn white_balance(self, gains: [f64; 3]) -> Result<Self> {
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid(format!(
                "white-balance gains must be positive, got {gains:?}"
            )));
        }
        self.push(Stage::WhiteBalance(gains))
    }

    pub fn color_map(self, m: [[f64; 3]; 3]) -> Result<Self> {
        self.push(Stage::ColorMap(m))
    }

    pub fn gamma(self, g: f64) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {g}")));
        }
        self.push(Stage::Gamma(g))
    }

    pub fn build(self) -> Result<IspPipeline> {
        if self.stages.is_empty() {
            return Err(Error::invalid("ISP must start with demosaic"));
        }
        Ok(IspPipeline {
            stages: self.stages,
        })
    }
}

pub struct IspPipeline {
    stages: Vec<Stage>,
}

impl IspPipeline {
    pub fn builder() -> IspBuilder {
        IspBuilder::default()
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.kind().to_string()).collect()
    }

    pub fn run(&self, raw: &BayerImage) -> Result<Image> {
        let mut img: Option<Image> = None;
        for s in &self.stages {
            img = Some(match (s, img) {
                (Stage::Demosaic(d), _) => d.demosaic(raw)?,
                (Stage::WhiteBalance(g), Some(i)) => white_balance(&i, *g)?,
                (Stage::ColorMap(m), Some(i)) => color_map(&i, *m)?,
                (Stage::Gamma(g), Some(i)) => gamma(&i, *g)?,
                (_, None) => unreachable!("builder enforces demosaic first"),
            });
        }
        Ok(img.expect("pipeline has a demosaic stage"))
    }
}
