//! Location-dependent color calibration, photometric gain and the
//! luminance error `ΔL`.
//!
//! The color cast of each channel is modelled as a gain field
//! `α(x, y) = Σ a_i b_i(u, v)` over the bivariate cubic basis
//! `{u³, u²v, uv², v³, u², uv, v², u, v, 1}`, where `u = 2x/(W-1) - 1` and
//! `v = 2y/(H-1) - 1` are pixel coordinates normalized to `[-1, 1]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BayerImage, BayerPattern, Image};

pub const BASIS_LEN: usize = 10;
pub const BASIS_NAMES: [&str; BASIS_LEN] = [
    "x^3", "x^2y", "xy^2", "y^3", "x^2", "xy", "y^2", "x", "y", "1",
];
pub const COORDINATE_CONVENTION: &str =
    "u = 2x/(W-1) - 1, v = 2y/(H-1) - 1, pixel centers at integer x, y";

/// Normal equations are used while `cond(ZᵀZ)` stays below this.
const NORMAL_EQ_MAX_COND: f64 = 1e10;
const RANK_TOL: f64 = 1e-12;

pub fn normalize_coord(v: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * v / (extent - 1) as f64 - 1.0
    }
}

#[inline]
pub fn basis(u: f64, v: f64) -> [f64; BASIS_LEN] {
    [
        u * u * u,
        u * u * v,
        u * v * v,
        v * v * v,
        u * u,
        u * v,
        v * v,
        u,
        v,
        1.0,
    ]
}

#[inline]
fn eval(a: &[f64; BASIS_LEN], u: f64, v: f64) -> f64 {
    basis(u, v).iter().zip(a).map(|(b, c)| b * c).sum()
}

/// Regular grid of square calibration patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub cols: usize,
    pub rows: usize,
    /// Patch side in pixels; must be even for RAW frames.
    pub size: usize,
    /// Row-major index of the reference (target) patch.
    pub target: usize,
}

impl PatchGrid {
    /// Grid with the target patch at the center.
    pub fn centered(cols: usize, rows: usize, size: usize) -> Self {
        Self {
            cols,
            rows,
            size,
            target: (rows / 2) * cols + cols / 2,
        }
    }

    pub fn count(&self) -> usize {
        self.cols * self.rows
    }

    /// Top-left corners of all patches, spread evenly over the frame. RAW
    /// grids snap corners to even coordinates.
    pub fn origins(&self, width: usize, height: usize, even: bool) -> Result<Vec<(usize, usize)>> {
        if self.cols == 0 || self.rows == 0 || self.size == 0 {
            return Err(Error::invalid("patch grid must be non-empty"));
        }
        if self.target >= self.count() {
            return Err(Error::invalid(format!(
                "target patch {} outside {}-patch grid",
                self.target,
                self.count()
            )));
        }
        if self.size > width || self.size > height {
            return Err(Error::invalid("patch larger than frame"));
        }
        if even && !self.size.is_multiple_of(2) {
            return Err(Error::invalid("RAW patches need an even size"));
        }
        let place = |i: usize, n: usize, extent: usize| -> usize {
            let span = extent - self.size;
            let p = if n == 1 {
                span / 2
            } else {
                (i * span + (n - 1) / 2) / (n - 1)
            };
            if even {
                p & !1
            } else {
                p
            }
        };
        let mut out = Vec::with_capacity(self.count());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push((place(c, self.cols, width), place(r, self.rows, height)));
            }
        }
        Ok(out)
    }
}

/// Patch means of one channel and the pixel-space centroid each mean was
/// taken over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSamples {
    pub points: Vec<(f64, f64)>,
    pub means: Vec<f64>,
    /// Index into `means` of the reference sample.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeasurements {
    pub width: usize,
    pub height: usize,
    pub channels: [ChannelSamples; 3],
}

/// Per-channel patch means of an RGB calibration frame.
pub fn measure_patches(img: &Image, grid: &PatchGrid) -> Result<PatchMeasurements> {
    if img.channels() != 3 {
        return Err(Error::dims("3 channels", img.dims_string()));
    }
    let origins = grid.origins(img.width(), img.height(), false)?;
    let s = grid.size;
    let half = (s as f64 - 1.0) / 2.0;
    let channels = std::array::from_fn(|c| {
        let mut points = Vec::with_capacity(origins.len());
        let mut means = Vec::with_capacity(origins.len());
        for &(x0, y0) in &origins {
            let mut acc = 0.0;
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    acc += img.get(x, y, c);
                }
            }
            means.push(acc / (s * s) as f64);
            points.push((x0 as f64 + half, y0 as f64 + half));
        }
        ChannelSamples {
            points,
            means,
            target: grid.target,
        }
    });
    Ok(PatchMeasurements {
        width: img.width(),
        height: img.height(),
        channels,
    })
}

/// Patch means of a RAW calibration frame. Each of the four CFA phases is
/// measured separately, so both green phases contribute their own samples;
/// a channel's reference is its first phase (raster order) in the target
/// patch. With `size == 2` every sample is a single site.
pub fn measure_patches_raw(raw: &BayerImage, grid: &PatchGrid) -> Result<PatchMeasurements> {
    let origins = grid.origins(raw.width(), raw.height(), true)?;
    let s = grid.size;
    let per_phase = ((s / 2) * (s / 2)) as f64;
    let mut channels: [ChannelSamples; 3] = std::array::from_fn(|_| ChannelSamples {
        points: Vec::new(),
        means: Vec::new(),
        target: usize::MAX,
    });
    for (k, &(x0, y0)) in origins.iter().enumerate() {
        for (py, px) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let c = raw.channel_at(x0 + px, y0 + py);
            let (mut acc, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for y in (y0 + py..y0 + s).step_by(2) {
                for x in (x0 + px..x0 + s).step_by(2) {
                    acc += raw.get(x, y);
                    sx += x as f64;
                    sy += y as f64;
                }
            }
            let ch = &mut channels[c];
            if k == grid.target && ch.target == usize::MAX {
                ch.target = ch.means.len();
            }
            ch.means.push(acc / per_phase);
            ch.points.push((sx / per_phase, sy / per_phase));
        }
    }
    Ok(PatchMeasurements {
        width: raw.width(),
        height: raw.height(),
        channels,
    })
}

/// Pixel position each channel's reference sample is taken at: the target
/// patch centroid for RGB frames, or the channel's first site in the
/// target patch for RAW frames measured with `size == 2`.
pub fn reference_points(
    grid: &PatchGrid,
    width: usize,
    height: usize,
    pattern: Option<BayerPattern>,
) -> Result<[(f64, f64); 3]> {
    let origins = grid.origins(width, height, pattern.is_some())?;
    let (x0, y0) = origins[grid.target];
    match pattern {
        None => {
            let half = (grid.size as f64 - 1.0) / 2.0;
            Ok([(x0 as f64 + half, y0 as f64 + half); 3])
        }
        Some(p) => {
            let mut out = [(f64::NAN, f64::NAN); 3];
            for (py, px) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let c = p.channel_at(x0 + px, y0 + py);
                if out[c].0.is_nan() {
                    out[c] = ((x0 + px) as f64, (y0 + py) as f64);
                }
            }
            Ok(out)
        }
    }
}

/// Rescales each channel's constants so that `α = 1` at `refs[c]`.
pub fn normalize_constants(
    constants: [[f64; BASIS_LEN]; 3],
    width: usize,
    height: usize,
    refs: [(f64, f64); 3],
) -> Result<[[f64; BASIS_LEN]; 3]> {
    let mut k = constants;
    for c in 0..3 {
        let (x, y) = refs[c];
        let s = eval(&k[c], normalize_coord(x, width), normalize_coord(y, height));
        if !(s > 0.0) {
            return Err(Error::NonPositiveAlpha {
                value: s,
                x: x as usize,
                y: y as usize,
                channel: c,
            });
        }
        for v in &mut k[c] {
            *v /= s;
        }
    }
    Ok(k)
}

/// Per-channel cubic gain fields over one calibrated frame size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorCalibration {
    pub width: usize,
    pub height: usize,
    pub coordinates: String,
    pub basis: Vec<String>,
    /// `constants[c][i]` multiplies `basis[i]` for channel `c` (R, G, B).
    pub constants: [[f64; BASIS_LEN]; 3],
    pub residual_rms: [f64; 3],
    pub samples: [usize; 3],
}

impl ColorCalibration {
    pub fn from_constants(width: usize, height: usize, constants: [[f64; BASIS_LEN]; 3]) -> Self {
        Self {
            width,
            height,
            coordinates: COORDINATE_CONVENTION.to_string(),
            basis: BASIS_NAMES.iter().map(|s| s.to_string()).collect(),
            constants,
            residual_rms: [0.0; 3],
            samples: [0; 3],
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let mut a = [0.0; BASIS_LEN];
        a[BASIS_LEN - 1] = 1.0;
        Self::from_constants(width, height, [a; 3])
    }

    /// `α` of channel `c` at pixel `(x, y)`.
    pub fn alpha(&self, c: usize, x: f64, y: f64) -> f64 {
        eval(
            &self.constants[c],
            normalize_coord(x, self.width),
            normalize_coord(y, self.height),
        )
    }

    /// Dense `α` plane of one channel, validated to be positive.
    pub fn alpha_field(&self, c: usize) -> Result<Vec<f64>> {
        let (w, h) = (self.width, self.height);
        let us: Vec<f64> = (0..w).map(|x| normalize_coord(x as f64, w)).collect();
        let rows: Vec<Result<Vec<f64>>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let v = normalize_coord(y as f64, h);
                us.iter()
                    .enumerate()
                    .map(|(x, &u)| {
                        let a = eval(&self.constants[c], u, v);
                        if a > 0.0 && a.is_finite() {
                            Ok(a)
                        } else {
                            Err(Error::NonPositiveAlpha {
                                value: a,
                                x,
                                y,
                                channel: c,
                            })
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(w * h);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Fails if `α ≤ 0` anywhere on the calibrated frame.
    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            self.alpha_field(c)?;
        }
        Ok(())
    }

    /// Minimum and maximum of `α` over the frame and all channels.
    pub fn alpha_range(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    let a = self.alpha(c, x as f64, y as f64);
                    lo = lo.min(a);
                    hi = hi.max(a);
                }
            }
        }
        (lo, hi)
    }

    fn check_frame(&self, width: usize, height: usize) -> Result<()> {
        if width != self.width || height != self.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{width}x{height}"),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Format {
            format: "calibration",
            reason: e.to_string(),
        })?;
        if c.width == 0 || c.height == 0 {
            return Err(Error::invalid("calibration frame must be non-empty"));
        }
        Ok(c)
    }
}

/// Fits the per-channel cubic to `α_k = mean(target) / mean(k)`.
pub fn fit_color_constants(m: &PatchMeasurements) -> Result<ColorCalibration> {
    let mut cal = ColorCalibration::identity(m.width, m.height);
    for (c, ch) in m.channels.iter().enumerate() {
        let k = ch.means.len();
        if k < BASIS_LEN {
            return Err(Error::DegeneratePatchLayout(format!(
                "channel {c} has {k} patches, at least {BASIS_LEN} are needed"
            )));
        }
        if ch.points.len() != k || ch.target >= k {
            return Err(Error::invalid(format!(
                "channel {c} samples are inconsistent"
            )));
        }
        let t = ch.means[ch.target];
        if !(t > 0.0) {
            return Err(Error::ZeroMeanChannel(c));
        }
        let mut z = DMatrix::zeros(k, BASIS_LEN);
        let mut alpha = DVector::zeros(k);
        for (i, (&(x, y), &mean)) in ch.points.iter().zip(&ch.means).enumerate() {
            if !(mean > 0.0) {
                return Err(Error::ZeroMeanChannel(c));
            }
            let b = basis(normalize_coord(x, m.width), normalize_coord(y, m.height));
            for (j, v) in b.iter().enumerate() {
                z[(i, j)] = *v;
            }
            alpha[i] = t / mean;
        }
        let a = least_squares(&z, &alpha)?;
        let resid = &z * &a - &alpha;
        cal.residual_rms[c] = (resid.norm_squared() / k as f64).sqrt();
        cal.samples[c] = k;
        for j in 0..BASIS_LEN {
            cal.constants[c][j] = a[j];
        }
    }
    Ok(cal)
}

/// Normal equations with a conditioning guard, falling back to a
/// column-pivoted QR.
fn least_squares(z: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let ztz = z.transpose() * z;
    let eig = SymmetricEigen::new(ztz.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= max * RANK_TOL * RANK_TOL.sqrt() {
        return Err(Error::DegeneratePatchLayout(
            "patch centers do not determine a cubic".into(),
        ));
    }
    let ztb = z.transpose() * rhs;
    if max / min <= NORMAL_EQ_MAX_COND {
        if let Some(ch) = ztz.cholesky() {
            return Ok(ch.solve(&ztb));
        }
    }
    let qr = z.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    if (0..BASIS_LEN).any(|i| r[(i, i)].abs() <= r00 * RANK_TOL) {
        return Err(Error::DegeneratePatchLayout(
            "rank-deficient basis matrix".into(),
        ));
    }
    let mut sol = qr.q().transpose() * rhs;
    if !r.solve_upper_triangular_mut(&mut sol) {
        return Err(Error::DegeneratePatchLayout(
            "singular triangular factor".into(),
        ));
    }
    qr.p().inv_permute_rows(&mut sol);
    Ok(sol)
}

/// `P' = α(x, y) · P` per channel.
pub fn color_correct(img: &Image, cal: &ColorCalibration) -> Result<Image> {
    scale_rgb(img, cal, false)
}

/// Inverse of [`color_correct`]: `P / α(x, y)`.
pub fn remove_correction(img: &Image, cal: &ColorCalibration) -> Result<Image> {
    scale_rgb(img, cal, true)
}

fn scale_rgb(img: &Image, cal: &ColorCalibration, divide: bool) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::dims("3 channels", img.dims_string()));
    }
    cal.check_frame(img.width(), img.height())?;
    let mut out = img.clone();
    for c in 0..3 {
        let field = cal.alpha_field(c)?;
        for (p, a) in out.plane_mut(c).iter_mut().zip(&field) {
            *p = if divide { *p / a } else { *p * a };
        }
    }
    Ok(out)
}

/// RAW variant of [`color_correct`]: each site uses its own channel's field.
pub fn color_correct_raw(raw: &BayerImage, cal: &ColorCalibration) -> Result<BayerImage> {
    scale_raw(raw, cal, false)
}

pub fn remove_correction_raw(raw: &BayerImage, cal: &ColorCalibration) -> Result<BayerImage> {
    scale_raw(raw, cal, true)
}

fn scale_raw(raw: &BayerImage, cal: &ColorCalibration, divide: bool) -> Result<BayerImage> {
    cal.check_frame(raw.width(), raw.height())?;
    let fields = [
        cal.alpha_field(0)?,
        cal.alpha_field(1)?,
        cal.alpha_field(2)?,
    ];
    let w = raw.width();
    Ok(raw.map_sites(|x, y, c, v| {
        let a = fields[c][y * w + x];
        if divide {
            v / a
        } else {
            v * a
        }
    }))
}

/// Per-channel global gains `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricGain {
    pub beta: [f64; 3],
}

impl PhotometricGain {
    pub fn new(beta: [f64; 3]) -> Result<Self> {
        if beta.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::invalid(format!(
                "gains must be positive, got {beta:?}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn identity() -> Self {
        Self { beta: [1.0; 3] }
    }

    pub fn inverse(&self) -> Self {
        Self {
            beta: self.beta.map(|b| 1.0 / b),
        }
    }
}

fn gain_from_means(blur: [f64; 3], sharp: [f64; 3]) -> Result<PhotometricGain> {
    for (c, m) in blur.iter().enumerate() {
        if !(*m > 0.0) {
            return Err(Error::ZeroMeanChannel(c));
        }
    }
    PhotometricGain::new(std::array::from_fn(|c| sharp[c] / blur[c]))
}

fn rgb_means(img: &Image) -> Result<[f64; 3]> {
    if img.channels() != 3 {
        return Err(Error::dims("3 channels", img.dims_string()));
    }
    Ok(std::array::from_fn(|c| img.channel_mean(c)))
}

/// `β_c = mean_c(sharp) / mean_c(blur)`.
pub fn photometric_gain(blur: &Image, sharp: &Image) -> Result<PhotometricGain> {
    blur.check_same_shape(sharp)?;
    gain_from_means(rgb_means(blur)?, rgb_means(sharp)?)
}

pub fn photometric_gain_raw(blur: &BayerImage, sharp: &BayerImage) -> Result<PhotometricGain> {
    blur.check_same_shape(sharp)?;
    gain_from_means(blur.channel_means(), sharp.channel_means())
}

pub fn apply_gain(img: &Image, gain: &PhotometricGain) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::dims("3 channels", img.dims_string()));
    }
    let mut out = img.clone();
    for c in 0..3 {
        for v in out.plane_mut(c) {
            *v *= gain.beta[c];
        }
    }
    Ok(out)
}

pub fn apply_gain_raw(raw: &BayerImage, gain: &PhotometricGain) -> BayerImage {
    raw.map_sites(|_, _, c, v| v * gain.beta[c])
}

/// `ΔL = Σ|l_a - l_b| / Σ l_b` on per-pixel channel means.
pub fn delta_l(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (la, lb) = (a.luminance(), b.luminance());
    let den: f64 = lb.data().iter().sum();
    if den == 0.0 {
        return Err(Error::invalid("reference luminance is all zero"));
    }
    let num: f64 = la
        .data()
        .iter()
        .zip(lb.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(num / den)
}

/// `ΔL` on the channel-mean of a RAW frame pair (each site counts once).
pub fn delta_l_raw(a: &BayerImage, b: &BayerImage) -> Result<f64> {
    a.check_same_shape(b)?;
    let den: f64 = b.data().iter().sum();
    if den == 0.0 {
        return Err(Error::invalid("reference luminance is all zero"));
    }
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_constants(seed: u64) -> [[f64; BASIS_LEN]; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        std::array::from_fn(|_| {
            let mut a: [f64; BASIS_LEN] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
            a[BASIS_LEN - 1] = 1.0;
            a
        })
    }

    /// Scales each channel so `α` is 1 at that channel's reference point.
    fn normalized_at(
        mut k: [[f64; BASIS_LEN]; 3],
        w: usize,
        h: usize,
        refs: [(f64, f64); 3],
    ) -> [[f64; BASIS_LEN]; 3] {
        for c in 0..3 {
            let (x, y) = refs[c];
            let s = eval(&k[c], normalize_coord(x, w), normalize_coord(y, h));
            for v in &mut k[c] {
                *v /= s;
            }
        }
        k
    }

    fn rel_err(a: &[[f64; BASIS_LEN]; 3], b: &[[f64; BASIS_LEN]; 3]) -> f64 {
        let (mut d, mut n) = (0.0f64, 0.0f64);
        for c in 0..3 {
            for i in 0..BASIS_LEN {
                d = d.max((a[c][i] - b[c][i]).abs());
                n = n.max(b[c][i].abs());
            }
        }
        d / n
    }

    #[test]
    fn basis_order() {
        assert_eq!(
            basis(2.0, 3.0),
            [8.0, 12.0, 18.0, 27.0, 4.0, 6.0, 9.0, 2.0, 3.0, 1.0]
        );
        assert_eq!(normalize_coord(0.0, 512), -1.0);
        assert_eq!(normalize_coord(511.0, 512), 1.0);
    }

    #[test]
    fn equal_patches_give_constant_field() {
        let img = Image::filled(64, 48, 3, 0.6).unwrap();
        let m = measure_patches(&img, &PatchGrid::centered(5, 4, 3)).unwrap();
        let cal = fit_color_constants(&m).unwrap();
        for c in 0..3 {
            for (i, v) in cal.constants[c].iter().enumerate() {
                let want = if i == BASIS_LEN - 1 { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_patches_error() {
        let img = Image::filled(64, 48, 3, 0.6).unwrap();
        let m = measure_patches(&img, &PatchGrid::centered(3, 3, 3)).unwrap();
        assert!(matches!(
            fit_color_constants(&m),
            Err(Error::DegeneratePatchLayout(_))
        ));
    }

    #[test]
    fn collinear_patches_error() {
        let img = Image::filled(64, 48, 3, 0.6).unwrap();
        let m = measure_patches(&img, &PatchGrid::centered(12, 1, 3)).unwrap();
        assert!(matches!(
            fit_color_constants(&m),
            Err(Error::DegeneratePatchLayout(_))
        ));
    }

    #[test]
    fn rgb_round_trip_recovers_constants() {
        let (w, h) = (128, 96);
        let grid = PatchGrid::centered(10, 8, 1);
        let origins = grid.origins(w, h, false).unwrap();
        let (tx, ty) = origins[grid.target];
        let truth = normalized_at(random_constants(1), w, h, [(tx as f64, ty as f64); 3]);
        let cast = ColorCalibration::from_constants(w, h, truth);
        let board = Image::filled(w, h, 3, 0.8).unwrap();
        let degraded = remove_correction(&board, &cast).unwrap();
        let cal = fit_color_constants(&measure_patches(&degraded, &grid).unwrap()).unwrap();
        assert!(rel_err(&cal.constants, &truth) < 1e-9);
        let fixed = color_correct(&degraded, &cal).unwrap();
        for (a, b) in fixed.data().iter().zip(board.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn raw_round_trip_recovers_constants() {
        let (w, h) = (96, 64);
        let grid = PatchGrid::centered(10, 8, 2);
        let origins = grid.origins(w, h, true).unwrap();
        let (tx, ty) = origins[grid.target];
        let pat = BayerPattern::Grbg;
        let mut refs = [(0.0, 0.0); 3];
        let mut seen = [false; 3];
        for (py, px) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let c = pat.channel_at(tx + px, ty + py);
            if !seen[c] {
                seen[c] = true;
                refs[c] = ((tx + px) as f64, (ty + py) as f64);
            }
        }
        assert_eq!(reference_points(&grid, w, h, Some(pat)).unwrap(), refs);
        let truth = normalized_at(random_constants(2), w, h, refs);
        let cast = ColorCalibration::from_constants(w, h, truth);
        let board = BayerImage::new(w, h, pat, vec![0.7; w * h]).unwrap();
        let degraded = remove_correction_raw(&board, &cast).unwrap();
        let m = measure_patches_raw(&degraded, &grid).unwrap();
        assert_eq!(m.channels[1].means.len(), 160);
        let cal = fit_color_constants(&m).unwrap();
        assert!(rel_err(&cal.constants, &truth) < 1e-9);
        let fixed = color_correct_raw(&degraded, &cal).unwrap();
        for (a, b) in fixed.data().iter().zip(board.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn radial_cast_spread_shrinks() {
        let (w, h) = (160, 120);
        let board = Image::filled(w, h, 3, 0.9).unwrap();
        let radial = Image::from_fn(w, h, 3, |x, y, c| {
            let u = normalize_coord(x as f64, w);
            let v = normalize_coord(y as f64, h);
            0.9 * (1.0 - (0.06 + 0.02 * c as f64) * (u * u + v * v))
        })
        .unwrap();
        let grid = PatchGrid::centered(10, 8, 4);
        let cal = fit_color_constants(&measure_patches(&radial, &grid).unwrap()).unwrap();
        let fixed = color_correct(&radial, &cal).unwrap();
        let std = |img: &Image, c: usize| {
            let m = img.channel_mean(c);
            (img.plane(c).iter().map(|v| (v - m).powi(2)).sum::<f64>() / img.pixel_count() as f64)
                .sqrt()
        };
        for c in 0..3 {
            assert!(
                std(&fixed, c) * 5.0 <= std(&radial, c),
                "channel {c}: {} vs {}",
                std(&fixed, c),
                std(&radial, c)
            );
        }
        assert!(delta_l(&fixed, &board).unwrap() < delta_l(&radial, &board).unwrap());
    }

    #[test]
    fn identity_calibration_is_noop() {
        let img = Image::from_fn(8, 6, 3, |x, y, c| (x + y + c) as f64 / 20.0).unwrap();
        assert_eq!(
            color_correct(&img, &ColorCalibration::identity(8, 6)).unwrap(),
            img
        );
        assert!(color_correct(&img, &ColorCalibration::identity(8, 7)).is_err());
    }

    #[test]
    fn nonpositive_alpha_rejected() {
        let mut k = [[0.0; BASIS_LEN]; 3];
        for c in 0..3 {
            k[c][BASIS_LEN - 1] = 1.0;
        }
        k[2][7] = 2.0;
        let cal = ColorCalibration::from_constants(8, 8, k);
        let img = Image::filled(8, 8, 3, 0.5).unwrap();
        assert!(matches!(
            color_correct(&img, &cal),
            Err(Error::NonPositiveAlpha { channel: 2, .. })
        ));
    }

    #[test]
    fn scalar_red_field_halves_red() {
        let mut k = ColorCalibration::identity(4, 4).constants;
        k[0][BASIS_LEN - 1] = 2.0;
        let cal = ColorCalibration::from_constants(4, 4, k);
        let img = Image::filled(4, 4, 3, 0.5).unwrap();
        let d = remove_correction(&img, &cal).unwrap();
        assert!(d.plane(0).iter().all(|&v| v == 0.25));
        assert!(d.plane(1).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn calibration_json_round_trip() {
        let cal = ColorCalibration::from_constants(10, 20, random_constants(3));
        let back = ColorCalibration::from_json(&cal.to_json().unwrap()).unwrap();
        assert_eq!(back, cal);
    }

    #[test]
    fn gain_examples() {
        let sharp = Image::from_fn(8, 8, 3, |x, y, c| 0.2 + 0.01 * (x + y + c) as f64).unwrap();
        let half = sharp.map(|v| 0.5 * v);
        let g = photometric_gain(&half, &sharp).unwrap();
        for b in g.beta {
            assert!((b - 2.0).abs() < 1e-12);
        }
        assert_eq!(photometric_gain(&sharp, &sharp).unwrap().beta, [1.0; 3]);
        let zero = Image::new(8, 8, 3).unwrap();
        assert!(matches!(
            photometric_gain(&zero, &sharp),
            Err(Error::ZeroMeanChannel(0))
        ));
    }

    #[test]
    fn delta_l_examples() {
        let b = Image::from_fn(6, 6, 3, |x, y, _| 0.1 + 0.02 * (x * y) as f64).unwrap();
        assert_eq!(delta_l(&b, &b).unwrap(), 0.0);
        let a = b.map(|v| 1.1 * v);
        assert!((delta_l(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!(delta_l(&a, &Image::new(6, 5, 3).unwrap()).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn img(seed: u64) -> Image {
        Image::from_fn(12, 10, 3, |x, y, c| {
            0.05 + ((x * 31 + y * 17 + c * 7 + seed as usize) % 97) as f64 / 100.0
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn gain_round_trip(b0 in 0.2f64..5.0, b1 in 0.2f64..5.0, b2 in 0.2f64..5.0, seed in 0u64..50) {
            let x = img(seed);
            let g = PhotometricGain::new([b0, b1, b2]).unwrap();
            let est = photometric_gain(&apply_gain(&x, &g).unwrap(), &x).unwrap();
            for c in 0..3 {
                prop_assert!((est.beta[c] - 1.0 / g.beta[c]).abs() < 1e-9);
            }
        }

        #[test]
        fn delta_l_scale_invariant(gamma in 0.1f64..10.0, s1 in 0u64..50, s2 in 0u64..50) {
            let (a, b) = (img(s1), img(s2));
            let d = delta_l(&a, &b).unwrap();
            prop_assert!(d >= 0.0);
            let ds = delta_l(&a.map(|v| gamma * v), &b.map(|v| gamma * v)).unwrap();
            prop_assert!((d - ds).abs() < 1e-9);
        }

        #[test]
        fn fit_recovers_bounded_fields(coefs in proptest::array::uniform9(-0.05f64..0.05)) {
            let (w, h) = (64, 48);
            let grid = PatchGrid::centered(10, 8, 1);
            let (tx, ty) = grid.origins(w, h, false).unwrap()[grid.target];
            let mut a = [0.0; BASIS_LEN];
            a[..9].copy_from_slice(&coefs);
            a[9] = 1.0;
            let s = eval(&a, normalize_coord(tx as f64, w), normalize_coord(ty as f64, h));
            let a = a.map(|v| v / s);
            let cast = ColorCalibration::from_constants(w, h, [a; 3]);
            let (lo, hi) = cast.alpha_range();
            prop_assume!(lo >= 0.5 && hi <= 2.0);
            let degraded = remove_correction(&Image::filled(w, h, 3, 0.5).unwrap(), &cast).unwrap();
            let fit = fit_color_constants(&measure_patches(&degraded, &grid).unwrap()).unwrap();
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..BASIS_LEN {
                prop_assert!((fit.constants[1][i] - a[i]).abs() <= 1e-6 * scale);
            }
        }
    }
}
