//! File formats: 16-bit PNG, little-endian PFM, Bayer sidecar metadata,
//! 8-bit mask PNGs and flow fields stored as 3-plane PFM.
//!
//! Everything is converted to `f64` in `[0, 1]` at this boundary. PNG
//! round trips are exact to 1/65535 per sample; PFM stores `f32`, so it is
//! lossless for any value representable in single precision.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{BayerImage, BayerPattern, BlurMask, FlowField, Frame, Image, DEFAULT_MAX_FLOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png16,
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("png") => Ok(ImageFormat::Png16),
            Some("pfm") => Ok(ImageFormat::Pfm),
            _ => Err(Error::invalid(format!(
                "cannot infer image format from {}",
                path.display()
            ))),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        format: "png",
        reason: e.to_string(),
    }
}

fn pfm_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "pfm",
        reason: reason.into(),
    }
}

pub fn load_image(path: &Path, format: ImageFormat) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    match format {
        ImageFormat::Png16 => decode_png(&bytes),
        ImageFormat::Pfm => read_pfm(&mut bytes.as_slice()),
    }
}

pub fn save_image(img: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        ImageFormat::Png16 => encode_png16(img, &mut w)?,
        ImageFormat::Pfm => write_pfm(img, &mut w)?,
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads by extension (`.png` or `.pfm`).
pub fn load_image_auto(path: &Path) -> Result<Image> {
    load_image(path, ImageFormat::from_path(path)?)
}

pub fn save_image_auto(img: &Image, path: &Path) -> Result<()> {
    save_image(img, path, ImageFormat::from_path(path)?)
}

/// Decodes an 8- or 16-bit grayscale / RGB / RGBA PNG.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_channels, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 4),
        png::ColorType::Indexed => return Err(png_err("unexpanded palette image")),
    };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let max = if sixteen { 65535.0 } else { 255.0 };
    let mut img = Image::new(w, h, channels)?;
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..channels {
                let i = x * src_channels + c;
                let v = if sixteen {
                    u16::from_be_bytes([row[2 * i], row[2 * i + 1]]) as f64
                } else {
                    row[i] as f64
                };
                img.set(x, y, c, v / max);
            }
        }
    }
    Ok(img)
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_png16(img: &Image, w: &mut impl Write) -> Result<()> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::invalid(format!("cannot write {c}-channel png"))),
    };
    let mut data = Vec::with_capacity(img.data().len() * 2);
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                data.extend_from_slice(&quantize16(img.get(x, y, c)).to_be_bytes());
            }
        }
    }
    write_png(
        w,
        img.width(),
        img.height(),
        color,
        png::BitDepth::Sixteen,
        &data,
    )
}

fn write_png(
    w: &mut impl Write,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Writes a 1- or 3-channel PFM (little-endian, bottom-to-top rows).
pub fn write_pfm(img: &Image, w: &mut impl Write) -> Result<()> {
    let tag = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(pfm_err(format!("pfm holds 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    out.reserve(img.data().len() * 4);
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                out.extend_from_slice(&(img.get(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&out).map_err(|e| pfm_err(e.to_string()))
}

pub fn read_pfm(r: &mut impl Read) -> Result<Image> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| pfm_err(e.to_string()))?;
    // header: three whitespace-separated tokens followed by one whitespace byte
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pfm_err("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(pfm_err(format!("bad magic {t:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| pfm_err("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| pfm_err("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| pfm_err("bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(pfm_err("zero dimension or scale"));
    }
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(pfm_err(format!(
            "truncated data: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let body = &bytes[pos..pos + need];
    let mut img = Image::new(width, height, channels)?;
    let mut i = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                let b = [body[i], body[i + 1], body[i + 2], body[i + 3]];
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                if !v.is_finite() {
                    return Err(pfm_err("non-finite sample"));
                }
                img.set(x, y, c, v as f64);
                i += 4;
            }
        }
    }
    Ok(img)
}

/// Sidecar metadata for a Bayer frame, stored next to it as `<file>.meta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayerMeta {
    pub pattern: BayerPattern,
    /// Code values; only meaningful for integer (PNG) storage.
    pub black_level: f64,
    pub white_level: f64,
}

impl BayerMeta {
    pub fn new(pattern: BayerPattern) -> Self {
        Self {
            pattern,
            black_level: 0.0,
            white_level: 65535.0,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "pattern = {}\nblack_level = {}\nwhite_level = {}\n",
            self.pattern, self.black_level, self.white_level
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            format: "bayer sidecar",
            reason,
        };
        let mut pattern = None;
        let mut meta = BayerMeta::new(BayerPattern::Rggb);
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let v = v.trim();
            match k.trim() {
                "pattern" => pattern = Some(v.parse::<BayerPattern>()?),
                "black_level" => {
                    meta.black_level = v
                        .parse()
                        .map_err(|_| bad(format!("bad black_level {v:?}")))?
                }
                "white_level" => {
                    meta.white_level = v
                        .parse()
                        .map_err(|_| bad(format!("bad white_level {v:?}")))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        meta.pattern = pattern.ok_or_else(|| bad("missing pattern".into()))?;
        if meta.white_level <= meta.black_level {
            return Err(bad("white_level must exceed black_level".into()));
        }
        Ok(meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn has_bayer_sidecar(path: &Path) -> bool {
    sidecar_path(path).is_file()
}

pub fn load_bayer(path: &Path) -> Result<BayerImage> {
    let meta_path = sidecar_path(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta = BayerMeta::parse(&text)?;
    let img = load_image_auto(path)?;
    if img.channels() != 1 {
        return Err(Error::dims("1-channel bayer frame", img.dims_string()));
    }
    let (w, h) = (img.width(), img.height());
    let data = match ImageFormat::from_path(path)? {
        ImageFormat::Pfm => img.into_data(),
        ImageFormat::Png16 => {
            let range = meta.white_level - meta.black_level;
            img.data()
                .iter()
                .map(|v| ((v * 65535.0 - meta.black_level) / range).clamp(0.0, 1.0))
                .collect()
        }
    };
    BayerImage::new(w, h, meta.pattern, data)
}

pub fn save_bayer(raw: &BayerImage, path: &Path) -> Result<()> {
    save_bayer_with(raw, path, BayerMeta::new(raw.pattern()))
}

pub fn save_bayer_with(raw: &BayerImage, path: &Path, meta: BayerMeta) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    let data: Vec<f64> = match format {
        ImageFormat::Pfm => raw.data().to_vec(),
        ImageFormat::Png16 => {
            let range = meta.white_level - meta.black_level;
            raw.data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * range + meta.black_level) / 65535.0)
                .collect()
        }
    };
    let img = Image::from_planes(raw.width(), raw.height(), 1, data)?;
    save_image(&img, path, format)?;
    let meta_path = sidecar_path(path);
    fs::write(&meta_path, meta.to_text()).map_err(|e| io_err(&meta_path, e))
}

/// Loads a RAW frame when a Bayer sidecar exists, else an RGB image.
pub fn load_frame(path: &Path) -> Result<Frame> {
    if has_bayer_sidecar(path) {
        return Ok(Frame::Raw(load_bayer(path)?));
    }
    let img = load_image_auto(path)?;
    if img.channels() != 3 {
        return Err(Error::dims("3-channel frame", img.dims_string()));
    }
    Ok(Frame::Rgb(img))
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    match frame {
        Frame::Rgb(i) => save_image_auto(i, path),
        Frame::Raw(r) => save_bayer(r, path),
    }
}

/// Writes a mask as an 8-bit grayscale PNG (binary masks become {0, 255}).
pub fn save_mask(mask: &BlurMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_png(
        &mut w,
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &data,
    )?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Loads a mask from channel 0 of any supported image file.
pub fn load_mask(path: &Path) -> Result<BlurMask> {
    BlurMask::from_image(&load_image_auto(path)?)
}

/// Flow is stored as a 3-plane PFM: u, v, confidence.
pub fn save_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let n = flow.width() * flow.height();
    let mut data = Vec::with_capacity(3 * n);
    data.extend_from_slice(flow.u());
    data.extend_from_slice(flow.v());
    data.extend_from_slice(flow.confidence());
    let img = Image::from_planes(flow.width(), flow.height(), 3, data)?;
    save_image(&img, path, ImageFormat::Pfm)
}

pub fn load_flow(path: &Path) -> Result<FlowField> {
    let img = load_image(path, ImageFormat::Pfm)?;
    if img.channels() != 3 {
        return Err(Error::dims("3-plane flow", img.dims_string()));
    }
    FlowField::new(
        img.width(),
        img.height(),
        img.plane(0).to_vec(),
        img.plane(1).to_vec(),
        img.plane(2).to_vec(),
        DEFAULT_MAX_FLOW,
    )
}

/// Reads the whole file into memory through a buffered reader.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut v = Vec::new();
    r.read_to_end(&mut v).map_err(|e| io_err(path, e))?;
    Ok(v)
}
