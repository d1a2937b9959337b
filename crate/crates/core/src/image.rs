//! Raster types shared by every stage: planar float images, Bayer mosaics,
//! blur masks and dense flow fields, plus the integer shift with explicit
//! overlap domains and the 2x2 box downsampler.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default full-frame size of the beam-splitter rig.
pub const DEFAULT_FRAME_WIDTH: usize = 2152;
pub const DEFAULT_FRAME_HEIGHT: usize = 1436;

/// Axis-aligned pixel rectangle, half-open on the right/bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 <= x0 || y1 <= y0 {
            return Rect::new(x0, y0, 0, 0);
        }
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Shrinks the rectangle by `margin` pixels on every side.
    pub fn inset(&self, margin: usize) -> Rect {
        if self.width <= 2 * margin || self.height <= 2 * margin {
            return Rect::new(self.x + margin, self.y + margin, 0, 0);
        }
        Rect::new(
            self.x + margin,
            self.y + margin,
            self.width - 2 * margin,
            self.height - 2 * margin,
        )
    }
}

/// Planar float raster with 1, 3 or 4 channels. Sample `(x, y, c)` lives at
/// `data[c * width * height + y * width + x]`; nominal range is `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

fn check_channels(channels: usize) -> Result<()> {
    match channels {
        1 | 3 | 4 => Ok(()),
        _ => Err(Error::invalid(format!(
            "channel count must be 1, 3 or 4, got {channels}"
        ))),
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_channels(channels)?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_channels(channels)?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(
                format!("{} samples", width * height * channels),
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image data must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let v = f(x, y, c);
                    img.set(x, y, c, v);
                }
            }
        }
        Ok(img)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = c * self.width * self.height + y * self.width + x;
        self.data[i] = v;
    }

    pub fn rect(&self) -> Rect {
        Rect::full(self.width, self.height)
    }

    pub fn dims_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Errors unless both images have identical width, height and channels.
    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.channels != other.channels
        {
            return Err(Error::dims(self.dims_string(), other.dims_string()));
        }
        Ok(())
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let p = self.plane(c);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels).map(|c| self.channel_mean(c)).collect()
    }

    /// Per-pixel channel mean as a single-channel image.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixel_count();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        let k = self.channels as f64;
        out.iter_mut().for_each(|v| *v /= k);
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn crop(&self, r: Rect) -> Result<Image> {
        if r.is_empty() || r.x + r.width > self.width || r.y + r.height > self.height {
            return Err(Error::invalid(format!(
                "crop {r:?} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(r.area() * self.channels);
        for c in 0..self.channels {
            let p = self.plane(c);
            for y in r.y..r.y + r.height {
                let row = y * self.width;
                data.extend_from_slice(&p[row + r.x..row + r.x + r.width]);
            }
        }
        Ok(Image {
            width: r.width,
            height: r.height,
            channels: self.channels,
            data,
        })
    }

    /// Copies one channel into a single-channel image.
    pub fn extract_channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    /// Bilinear sample at a subpixel position. Returns `None` outside
    /// `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> Option<f64> {
        let tol = 1e-9;
        if !(x >= -tol
            && y >= -tol
            && x <= (self.width - 1) as f64 + tol
            && y <= (self.height - 1) as f64 + tol)
        {
            return None;
        }
        Some(self.sample_bilinear_clamped(c, x, y))
    }

    /// Bilinear sample with edge replication outside the frame.
    pub fn sample_bilinear_clamped(&self, c: usize, x: f64, y: f64) -> f64 {
        let p = self.plane(c);
        bilinear(p, self.width, self.height, x, y)
    }
}

/// Bilinear lookup into one plane with edge replication.
pub(crate) fn bilinear(p: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let xm = (width - 1) as f64;
    let ym = (height - 1) as f64;
    let x = x.clamp(0.0, xm);
    let y = y.clamp(0.0, ym);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let a = p[y0 * width + x0];
    let b = p[y0 * width + x1];
    let c = p[y1 * width + x0];
    let d = p[y1 * width + x1];
    if fx == 0.0 && fy == 0.0 {
        return a;
    }
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

/// Result of [`shift`]: the translated raster and the rectangle on which it
/// holds real (non-replicated) data.
#[derive(Debug, Clone)]
pub struct Shifted {
    pub image: Image,
    pub overlap: Rect,
}

impl Shifted {
    /// The shifted image restricted to its overlap.
    pub fn valid(&self) -> Image {
        self.image
            .crop(self.overlap)
            .expect("overlap lies inside the frame")
    }
}

/// Overlap rectangle of a frame translated by `(dx, dy)`.
pub fn shift_overlap(width: usize, height: usize, dx: i64, dy: i64) -> Result<Rect> {
    let (w, h) = (width as i64, height as i64);
    let x0 = dx.max(0);
    let x1 = (w + dx).min(w);
    let y0 = dy.max(0);
    let y1 = (h + dy).min(h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::DegenerateShift {
            dx,
            dy,
            width,
            height,
        });
    }
    Ok(Rect::new(
        x0 as usize,
        y0 as usize,
        (x1 - x0) as usize,
        (y1 - y0) as usize,
    ))
}

/// Translates `img` by `(dx, dy)`: `out(x, y) = img(x - dx, y - dy)`.
///
/// Pixels outside the returned overlap carry edge-replicated values and must
/// be treated as invalid by callers.
pub fn shift(img: &Image, dx: i64, dy: i64) -> Result<Shifted> {
    let overlap = shift_overlap(img.width, img.height, dx, dy)?;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = (y - dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let sx = (x - dx).clamp(0, w - 1) as usize;
                dst[(y * w + x) as usize] = src[sy * img.width + sx];
            }
        }
    }
    Ok(Shifted {
        image: out,
        overlap,
    })
}

/// Crops two same-shaped images to the overlap of `pred` translated by
/// `(dx, dy)` against a fixed `reference`. Returns `(pred_crop, ref_crop)`.
pub fn overlap_pair(pred: &Image, reference: &Image, dx: i64, dy: i64) -> Result<(Image, Image)> {
    pred.check_same_shape(reference)?;
    let shifted = shift(pred, dx, dy)?;
    Ok((shifted.valid(), reference.crop(shifted.overlap)?))
}

/// 2x2 box average; odd trailing rows/columns are dropped.
pub fn downsample2(img: &Image) -> Result<Image> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::invalid(format!(
            "downsample2 needs at least 2x2, got {}x{}",
            img.width, img.height
        )));
    }
    let (ow, oh) = (img.width / 2, img.height / 2);
    let mut out = Image::new(ow, oh, img.channels)?;
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            let r0 = 2 * y * img.width;
            let r1 = r0 + img.width;
            for x in 0..ow {
                let s =
                    src[r0 + 2 * x] + src[r0 + 2 * x + 1] + src[r1 + 2 * x] + src[r1 + 2 * x + 1];
                dst[y * ow + x] = 0.25 * s;
            }
        }
    }
    Ok(out)
}

/// Builds an image pyramid of at most `levels` levels; stops early once a
/// dimension would drop below 1.
pub fn pyramid(img: &Image, levels: usize) -> Vec<Image> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        match downsample2(last) {
            Ok(next) => out.push(next),
            Err(_) => break,
        }
    }
    out
}

/// Color filter array layout, named by the 2x2 tile read row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BayerPattern {
    #[serde(rename = "RGGB")]
    Rggb,
    #[serde(rename = "BGGR")]
    Bggr,
    #[serde(rename = "GRBG")]
    Grbg,
    #[serde(rename = "GBRG")]
    Gbrg,
}

impl BayerPattern {
    /// Channel index (0 = R, 1 = G, 2 = B) sampled at `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let tile = match self {
            BayerPattern::Rggb => [0, 1, 1, 2],
            BayerPattern::Bggr => [2, 1, 1, 0],
            BayerPattern::Grbg => [1, 0, 2, 1],
            BayerPattern::Gbrg => [1, 2, 0, 1],
        };
        tile[(y & 1) * 2 + (x & 1)]
    }

    pub fn name(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        }
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            "BGGR" => Ok(BayerPattern::Bggr),
            "GRBG" => Ok(BayerPattern::Grbg),
            "GBRG" => Ok(BayerPattern::Gbrg),
            other => Err(Error::invalid(format!("unknown bayer pattern {other:?}"))),
        }
    }
}

/// Single-plane RAW mosaic with linear normalized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerImage {
    width: usize,
    height: usize,
    pattern: BayerPattern,
    data: Vec<f64>,
}

impl BayerImage {
    pub fn new(width: usize, height: usize, pattern: BayerPattern, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "bayer dimensions must be positive and even, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::dims(
                format!("{} samples", width * height),
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bayer data must be finite"));
        }
        Ok(Self {
            width,
            height,
            pattern,
            data,
        })
    }

    /// Samples the native channel of every site from an RGB image.
    pub fn from_rgb(img: &Image, pattern: BayerPattern) -> Result<Self> {
        if img.channels() < 3 {
            return Err(Error::invalid("mosaicing needs an RGB image"));
        }
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = img.get(x, y, pattern.channel_at(x, y));
            }
        }
        Self::new(w, h, pattern, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn channel_at(&self, x: usize, y: usize) -> usize {
        self.pattern.channel_at(x, y)
    }

    pub fn check_same_shape(&self, other: &BayerImage) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.pattern != other.pattern
        {
            return Err(Error::dims(
                format!("{}x{} {}", self.width, self.height, self.pattern),
                format!("{}x{} {}", other.width, other.height, other.pattern),
            ));
        }
        Ok(())
    }

    /// Mean over the sites of each color channel.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut count = [0usize; 3];
        for y in 0..self.height {
            for x in 0..self.width {
                let c = self.channel_at(x, y);
                sum[c] += self.data[y * self.width + x];
                count[c] += 1;
            }
        }
        [
            sum[0] / count[0] as f64,
            sum[1] / count[1] as f64,
            sum[2] / count[2] as f64,
        ]
    }

    pub fn map_sites(&self, f: impl Fn(usize, usize, usize, f64) -> f64) -> BayerImage {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                out.data[i] = f(x, y, self.channel_at(x, y), self.data[i]);
            }
        }
        out
    }
}

/// A captured frame, either demosaicked RGB or a RAW mosaic.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Rgb(Image),
    Raw(BayerImage),
}

impl Frame {
    pub fn width(&self) -> usize {
        match self {
            Frame::Rgb(i) => i.width(),
            Frame::Raw(r) => r.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Frame::Rgb(i) => i.height(),
            Frame::Raw(r) => r.height(),
        }
    }

    pub fn as_rgb(&self) -> Option<&Image> {
        match self {
            Frame::Rgb(i) => Some(i),
            Frame::Raw(_) => None,
        }
    }

    pub fn as_raw(&self) -> Option<&BayerImage> {
        match self {
            Frame::Raw(r) => Some(r),
            Frame::Rgb(_) => None,
        }
    }

    /// Wraps a linear RGB frame, mosaicking it when `pattern` is given.
    pub fn from_linear(img: Image, pattern: Option<BayerPattern>) -> Result<Frame> {
        Ok(match pattern {
            Some(p) => Frame::Raw(BayerImage::from_rgb(&img, p)?),
            None => Frame::Rgb(img),
        })
    }
}

/// Per-pixel blur likelihood in `[0, 1]`. Values are clamped on write.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl BlurMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(
                format!("{} samples", width * height),
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mask data must be finite"));
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    /// Binary mask from a predicate.
    pub fn from_predicate(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        Self::from_fn(width, height, |x, y| if f(x, y) { 1.0 } else { 0.0 })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.5
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::dims(
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Number of pixels above 0.5.
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count_set() as f64 / self.data.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.count_set() == 0
    }

    pub fn binarize(&self, threshold: f64) -> BlurMask {
        BlurMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn or(&self, other: &BlurMask) -> Result<BlurMask> {
        other.check_dims(self.width, self.height)?;
        Ok(BlurMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| if a > 0.5 || b > 0.5 { 1.0 } else { 0.0 })
                .collect(),
        })
    }

    /// Intersection over union of the two binarized masks; 1 when both are empty.
    pub fn iou(&self, other: &BlurMask) -> Result<f64> {
        other.check_dims(self.width, self.height)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a > 0.5, b > 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Binary dilation with a `(2r+1)^2` square element.
    pub fn dilate(&self, radius: usize) -> BlurMask {
        self.morph(radius, true)
    }

    /// Binary erosion with a `(2r+1)^2` square element; out-of-frame
    /// neighbours are ignored.
    pub fn erode(&self, radius: usize) -> BlurMask {
        self.morph(radius, false)
    }

    fn morph(&self, radius: usize, dilate: bool) -> BlurMask {
        let (w, h) = (self.width, self.height);
        let src: Vec<bool> = self.data.iter().map(|&v| v > 0.5).collect();
        // separable: rows then columns
        let mut tmp = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                let row = &src[y * w + lo..=y * w + hi];
                tmp[y * w + x] = if dilate {
                    row.iter().any(|&b| b)
                } else {
                    row.iter().all(|&b| b)
                };
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                let mut acc = !dilate;
                for yy in lo..=hi {
                    let b = tmp[yy * w + x];
                    if dilate && b {
                        acc = true;
                        break;
                    }
                    if !dilate && !b {
                        acc = false;
                        break;
                    }
                }
                out[y * w + x] = if acc { 1.0 } else { 0.0 };
            }
        }
        BlurMask {
            width: w,
            height: h,
            data: out,
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_planes(self.width, self.height, 1, self.data.clone())
            .expect("mask shape is valid")
    }

    /// Builds a mask from channel 0 of an image.
    pub fn from_image(img: &Image) -> Result<BlurMask> {
        BlurMask::from_vec(img.width(), img.height(), img.plane(0).to_vec())
    }

    pub fn crop(&self, r: Rect) -> Result<BlurMask> {
        let img = self.to_image().crop(r)?;
        BlurMask::from_image(&img)
    }
}

/// Default bound on flow magnitude in pixels.
pub const DEFAULT_MAX_FLOW: f64 = 32.0;

/// Dense displacement field. `(u, v)` at a pixel of the reference frame
/// points to the matching location in the moving frame. `confidence` is 1
/// for estimated vectors and 0 where the estimator had no texture.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    confidence: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            confidence: vec![1.0; n],
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Result<Self> {
        let n = width * height;
        Self::new(
            width,
            height,
            vec![u; n],
            vec![v; n],
            vec![1.0; n],
            DEFAULT_MAX_FLOW,
        )
    }

    pub fn new(
        width: usize,
        height: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        confidence: Vec<f64>,
        max_magnitude: f64,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || confidence.len() != n {
            return Err(Error::dims(
                format!("{n} vectors"),
                format!("{}/{}/{}", u.len(), v.len(), confidence.len()),
            ));
        }
        for (a, b) in u.iter().zip(&v) {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::invalid("flow must be finite"));
            }
            if a.hypot(*b) > max_magnitude + 1e-9 {
                return Err(Error::invalid(format!(
                    "flow magnitude {} exceeds bound {max_magnitude}",
                    a.hypot(*b)
                )));
            }
        }
        Ok(Self {
            width,
            height,
            u,
            v,
            confidence,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn confidence_at(&self, x: usize, y: usize) -> f64 {
        self.confidence[y * self.width + x]
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    /// Component-wise median over confident vectors (all vectors when none are).
    pub fn median(&self) -> (f64, f64) {
        let pick = |src: &[f64]| {
            let mut vals: Vec<f64> = src
                .iter()
                .zip(&self.confidence)
                .filter(|(_, &c)| c > 0.5)
                .map(|(&v, _)| v)
                .collect();
            if vals.is_empty() {
                vals = src.to_vec();
            }
            vals.sort_by(|a, b| a.total_cmp(b));
            vals[vals.len() / 2]
        };
        (pick(&self.u), pick(&self.v))
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn image_strategy() -> impl Strategy<Value = Image> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..1.0, w * h * 3)
                .prop_map(move |d| Image::from_planes(w, h, 3, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn shift_roundtrip_exact_on_overlap(img in image_strategy(), k in -8i64..=8, l in -8i64..=8) {
            prop_assume!(k.unsigned_abs() < img.width() as u64 && l.unsigned_abs() < img.height() as u64);
            let fwd = shift(&img, k, l).unwrap();
            let back = shift(&fwd.image, -k, -l).unwrap();
            // only pixels whose source lies in both overlaps are real data
            let r = back.overlap.intersect(&shift_overlap(img.width(), img.height(), 0, 0).unwrap());
            for c in 0..3 {
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        let src_x = x as i64 + k;
                        let src_y = y as i64 + l;
                        if fwd.overlap.contains(src_x as usize, src_y as usize) {
                            prop_assert_eq!(back.image.get(x, y, c), img.get(x, y, c));
                        }
                    }
                }
            }
        }

        #[test]
        fn downsample_preserves_mean(half_w in 1usize..8, half_h in 1usize..8, seed in any::<u64>()) {
            let (w, h) = (2 * half_w, 2 * half_h);
            let mut s = seed;
            let img = Image::from_fn(w, h, 1, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).unwrap();
            let d = downsample2(&img).unwrap();
            prop_assert!((d.channel_mean(0) - img.channel_mean(0)).abs() < 1e-6);
        }
    }
}
