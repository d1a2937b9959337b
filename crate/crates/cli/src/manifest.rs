//! Scene manifests: JSON files listing a scene's captures by role.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "lightbox": { "blurred": "lightbox_blurred.pfm", "sharp": "lightbox_sharp.pfm" },
//!   "grid": { "cols": 10, "rows": 8, "size": 1, "target": 45 },
//!   "static_pair": { "blurred": "static_blurred.pfm", "sharp": "static_sharp.pfm" },
//!   "target_pairs": [
//!     { "id": "t00", "blurred": "t00_blurred.pfm", "sharp": "t00_sharp.pfm", "gt_mask": "t00_mask.png" }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. RAW frames are
//! recognized by their `.meta` sidecar. `calibration` may name fitted
//! calibration JSON files instead of lightbox captures; `reference_pair`
//! overrides the static pair as alignment reference.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use localblur_core::calib::{ColorCalibration, PatchGrid};
use localblur_core::io;
use localblur_core::pipeline::{calibrate_frame, PairFrames, PipelineInput};
use localblur_core::{BlurMask, Frame};
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_GRID: (usize, usize) = (10, 8);

/// Centered 10×8 grid of single pixels (RGB) or CFA quads (RAW).
pub fn default_grid(f: &Frame) -> PatchGrid {
    let size = if matches!(f, Frame::Raw(_)) { 2 } else { 1 };
    PatchGrid::centered(DEFAULT_GRID.0, DEFAULT_GRID.1, size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPaths {
    pub blurred: PathBuf,
    pub sharp: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub blurred: PathBuf,
    pub sharp: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lightbox: Option<CameraPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CameraPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PatchGrid>,
    pub static_pair: PairPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_pair: Option<PairPaths>,
    pub target_pairs: Vec<PairPaths>,
}

/// A manifest together with the directory its paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: SceneManifest,
    pub base: PathBuf,
}

pub struct LoadedPair {
    pub id: String,
    pub frames: PairFrames,
    pub gt_mask: Option<BlurMask>,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read manifest {}", path.display()))?;
        let manifest: SceneManifest = serde_json::from_str(&text)
            .with_context(|| format!("malformed manifest {}", path.display()))?;
        if manifest.schema_version != MANIFEST_VERSION {
            bail!(
                "manifest schema_version {} is not supported (expected {MANIFEST_VERSION})",
                manifest.schema_version
            );
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn frame(&self, p: &Path) -> anyhow::Result<Frame> {
        let path = self.resolve(p);
        io::load_frame(&path).with_context(|| format!("cannot load frame {}", path.display()))
    }

    fn pair(&self, p: &PairPaths, fallback_id: &str) -> anyhow::Result<LoadedPair> {
        let gt_mask = match &p.gt_mask {
            Some(m) => {
                let path = self.resolve(m);
                Some(
                    io::load_mask(&path)
                        .with_context(|| format!("cannot load mask {}", path.display()))?,
                )
            }
            None => None,
        };
        Ok(LoadedPair {
            id: p.id.clone().unwrap_or_else(|| fallback_id.to_string()),
            frames: PairFrames {
                blurred: self.frame(&p.blurred)?,
                sharp: self.frame(&p.sharp)?,
            },
            gt_mask,
        })
    }

    pub fn static_pair(&self) -> anyhow::Result<LoadedPair> {
        self.pair(&self.manifest.static_pair, "static")
    }

    pub fn reference_pair(&self) -> anyhow::Result<Option<LoadedPair>> {
        self.manifest
            .reference_pair
            .as_ref()
            .map(|p| self.pair(p, "reference"))
            .transpose()
    }

    pub fn targets(&self) -> anyhow::Result<Vec<LoadedPair>> {
        self.manifest
            .target_pairs
            .iter()
            .enumerate()
            .map(|(i, p)| self.pair(p, &format!("target_{i:02}")))
            .collect()
    }

    /// Calibrations from fitted JSON files, else fitted to the lightbox
    /// captures, else none.
    pub fn calibrations(
        &self,
    ) -> anyhow::Result<(Option<ColorCalibration>, Option<ColorCalibration>)> {
        if let Some(c) = &self.manifest.calibration {
            let load = |p: &Path| -> anyhow::Result<ColorCalibration> {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("cannot read calibration {}", path.display()))?;
                Ok(ColorCalibration::from_json(&text)?)
            };
            return Ok((Some(load(&c.blurred)?), Some(load(&c.sharp)?)));
        }
        if let Some(l) = &self.manifest.lightbox {
            let fit = |p: &Path| -> anyhow::Result<ColorCalibration> {
                let f = self.frame(p)?;
                let grid = self.manifest.grid.unwrap_or_else(|| default_grid(&f));
                Ok(calibrate_frame(&f, &grid)?)
            };
            return Ok((Some(fit(&l.blurred)?), Some(fit(&l.sharp)?)));
        }
        Ok((None, None))
    }

    pub fn pipeline_input(&self) -> anyhow::Result<(PipelineInput, Vec<String>)> {
        let (calib_blur, calib_sharp) = self.calibrations()?;
        let targets = self.targets()?;
        let ids = targets.iter().map(|t| t.id.clone()).collect();
        Ok((
            PipelineInput {
                calib_blur,
                calib_sharp,
                static_pair: self.static_pair()?.frames,
                reference: self.reference_pair()?.map(|p| p.frames),
                targets: targets.into_iter().map(|t| t.frames).collect(),
            },
            ids,
        ))
    }
}
