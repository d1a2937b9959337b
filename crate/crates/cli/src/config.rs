//! Toolkit configuration file.
//!
//! ```toml
//! [isp]
//! wb_gains = [1.0, 1.0, 1.0]
//! gamma = 2.2
//!
//! [flow]
//! levels = 3
//! block = 64
//! max_flow = 32.0
//!
//! [lbfmg]
//! morph_radius = 2
//! [lbfmg.gmm]
//! k_max = 5
//! rho = 0.05
//!
//! [losses]
//! mask = 0.01
//! msfr = 0.1
//!
//! [sampler]
//! patch_size = 256
//!
//! [simulate]
//! width = 1024
//! height = 768
//! ```
//!
//! Every section and key is optional; missing values take their defaults
//! and unknown keys are rejected.

use std::path::Path;

use localblur_core::capture_sim::SceneSpec;
use localblur_core::geoalign::FlowOptions;
use localblur_core::isp::IspConfig;
use localblur_core::lbfmg::LbfmgParams;
use localblur_core::losses::LossWeights;
use localblur_core::sampler::DEFAULT_PATCH_SIZE;
use serde::{Deserialize, Serialize};

use crate::report::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub patch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub isp: IspConfig,
    pub flow: FlowOptions,
    pub lbfmg: LbfmgParams,
    pub losses: LossWeights,
    pub sampler: SamplerConfig,
    pub simulate: SceneSpec,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, Failure> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
            .map_err(|m| Failure::usage(format!("bad config {}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Config, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.isp.pipeline().map_err(|e| e.to_string())?;
        cfg.lbfmg.gmm.validate().map_err(|e| e.to_string())?;
        cfg.losses.validate().map_err(|e| e.to_string())?;
        if cfg.sampler.patch_size == 0 {
            return Err("sampler.patch_size must be positive".into());
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_override_defaults() {
        let c =
            Config::parse("[isp]\ngamma = 1.0\n[lbfmg.gmm]\nrho = 0.1\n[simulate]\nwidth = 640\n")
                .unwrap();
        assert_eq!(c.isp.gamma, 1.0);
        assert_eq!(c.lbfmg.gmm.rho, 0.1);
        assert_eq!(c.simulate.width, 640);
        assert_eq!(c.flow, FlowOptions::default());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::parse("[isp]\ngama = 1.0\n").is_err());
        assert!(Config::parse("[isp]\ngamma = -1.0\n").is_err());
        assert!(Config::parse("[losses]\nmae = -1.0\n").is_err());
        assert!(Config::parse("[lbfmg.gmm]\nk_max = 0\n").is_err());
        assert!(Config::parse("nonsense").is_err());
    }
}
