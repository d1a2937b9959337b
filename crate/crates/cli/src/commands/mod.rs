pub mod align;
pub mod calibrate;
pub mod correct;
pub mod crop;
pub mod evaluate;
pub mod gen_mask;
pub mod loss_check;
pub mod pipeline;
pub mod simulate;
pub mod synth_blur;

use std::path::Path;

use anyhow::Context;
use localblur_core::io;
use localblur_core::isp::IspConfig;
use localblur_core::pipeline::develop;
use localblur_core::{BlurMask, Frame, Image};

use crate::report::Failure;

/// Parses `a,b`.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = parse_list(s)?;
    match v.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

/// Parses `a,b,c`.
pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v = parse_list(s)?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected three comma-separated numbers, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// Parses `COLSxROWS`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((p(a)?, p(b)?))
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Data)
}

pub fn load_frame(path: &Path) -> anyhow::Result<Frame> {
    io::load_frame(path).with_context(|| format!("cannot load {}", path.display()))
}

pub fn load_image(path: &Path) -> anyhow::Result<Image> {
    io::load_image_auto(path).with_context(|| format!("cannot load {}", path.display()))
}

pub fn load_mask(path: &Path) -> anyhow::Result<BlurMask> {
    io::load_mask(path).with_context(|| format!("cannot load mask {}", path.display()))
}

pub fn save_image(img: &Image, path: &Path) -> anyhow::Result<()> {
    io::save_image_auto(img, path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn save_mask(mask: &BlurMask, path: &Path) -> anyhow::Result<()> {
    io::save_mask(mask, path).with_context(|| format!("cannot write {}", path.display()))
}

/// RGB view of a frame; RAW frames go through the configured ISP.
pub fn to_rgb(f: &Frame, isp: &IspConfig) -> anyhow::Result<Image> {
    Ok(develop(f, &isp.pipeline()?)?)
}
