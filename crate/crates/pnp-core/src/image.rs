//! Planar multi-channel image container plus the pixel-level utilities
//! (metrics, noise synthesis, clamping) shared by every other module.
//!
//! Samples are `f64` and nominally live in `[0,1]`, but nothing here clamps:
//! solver iterates routinely leave that range and clamping is an explicit
//! final step ([`clamp01`]).

use crate::error::{Error, Result};

/// Seed for the deterministic counter-based noise generator.
///
/// The generator is keyed by `(seed, sample index)`, so streams are
/// reproducible bit-for-bit regardless of evaluation order or thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Derive an independent stream for a sub-purpose (noise vs. start
    /// vectors vs. scene synthesis) without correlating the streams.
    pub fn derive(self, tag: u64) -> RngSeed {
        RngSeed(mix(self.0, tag ^ 0xA5A5_5A5A_0F0F_F0F0))
    }
}

/// splitmix64-style finalizer over (seed, index); full-avalanche, stateless.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map 64 random bits to the open interval (0,1); never returns 0 or 1,
/// which keeps `ln` finite in the Box-Muller transform.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard-normal variate for sample `index` of stream `seed`.
pub(crate) fn standard_normal(seed: RngSeed, index: u64) -> f64 {
    let u1 = unit_open(mix(seed.0, 2 * index));
    let u2 = unit_open(mix(seed.0, 2 * index + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform variate in [0,1) for sample `index` of stream `seed`.
pub(crate) fn uniform(seed: RngSeed, index: u64) -> f64 {
    (mix(seed.0, index) >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Planar real-valued raster: all of channel 0 row-major, then channel 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Image {
        Image::constant(width, height, channels, 0.0)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Image {
        assert!(width >= 1 && height >= 1 && channels >= 1, "degenerate image shape");
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    /// Wrap an existing planar buffer; errors if the length does not match.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Image> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
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
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape images.
    pub fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| s * v)
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Drop a border of `border` pixels on every side (all channels).
    pub fn crop_border(&self, border: usize) -> Result<Image> {
        if 2 * border >= self.width.min(self.height) {
            return Err(Error::InvalidArgument(format!(
                "crop border {} too large for {}x{}",
                border, self.width, self.height
            )));
        }
        let (w, h) = (self.width - 2 * border, self.height - 2 * border);
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                let row = self.idx(c, y + border, border);
                data.extend_from_slice(&self.data[row..row + w]);
            }
        }
        Image::from_data(w, h, self.channels, data)
    }
}

/// Mean squared difference over all samples of all channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in decibels; `+inf` when the images coincide.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be > 0, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// PSNR of each channel plane separately.
pub fn psnr_per_channel(a: &Image, b: &Image, peak: f64) -> Result<Vec<f64>> {
    a.check_same_shape(b)?;
    (0..a.channels())
        .map(|c| {
            let pa = Image::from_data(a.width, a.height, 1, a.plane(c).to_vec())?;
            let pb = Image::from_data(b.width, b.height, 1, b.plane(c).to_vec())?;
            psnr(&pa, &pb, peak)
        })
        .collect()
}

/// Add i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
///
/// Output is deliberately not clamped. Sample `i` of the stream depends only
/// on `(seed, i)`, so the result is identical however the loop is scheduled.
pub fn add_gaussian_noise(x: &Image, sigma: f64, seed: RngSeed) -> Result<Image> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += sigma * standard_normal(seed, i as u64);
    }
    Ok(out)
}

/// Clip every sample to [0,1]; the explicit final quantization step.
pub fn clamp01(x: &Image) -> Image {
    x.map(|v| v.clamp(0.0, 1.0))
}
