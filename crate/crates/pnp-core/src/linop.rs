//! Linear forward operators and their exact adjoints: circular convolution,
//! Bayer (CFA) sampling, forward-difference gradient, pairwise channel
//! gradient differences, plus power-iteration norm estimation.
//!
//! Convolution uses periodic boundaries (so the data-term prox is a closed
//! Fourier solve); the gradient uses the usual replicate/Neumann convention
//! with its adjoint derived from the forward stencil, not assumed.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::image::{uniform, Image, RngSeed};

/// Centered convolution kernel with odd dimensions, row-major taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    kwidth: usize,
    kheight: usize,
    taps: Vec<f64>,
}

impl ConvKernel {
    pub fn new(kwidth: usize, kheight: usize, taps: Vec<f64>) -> Result<ConvKernel> {
        if kwidth % 2 == 0 || kheight % 2 == 0 || kwidth == 0 || kheight == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel dimensions must be odd, got {kwidth}x{kheight}"
            )));
        }
        if taps.len() != kwidth * kheight {
            return Err(Error::ShapeMismatch(format!(
                "kernel taps {} != {kwidth}x{kheight}",
                taps.len()
            )));
        }
        if !taps.iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite("kernel taps".into()));
        }
        Ok(ConvKernel { kwidth, kheight, taps })
    }

    /// Like [`ConvKernel::new`] but rescales the taps to sum to one.
    pub fn normalized(kwidth: usize, kheight: usize, taps: Vec<f64>) -> Result<ConvKernel> {
        let mut k = ConvKernel::new(kwidth, kheight, taps)?;
        let sum: f64 = k.taps.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(Error::InvalidArgument(
                "kernel sum too close to zero to normalize".into(),
            ));
        }
        for t in &mut k.taps {
            *t /= sum;
        }
        Ok(k)
    }

    /// 1x1 identity kernel.
    pub fn delta() -> ConvKernel {
        ConvKernel { kwidth: 1, kheight: 1, taps: vec![1.0] }
    }

    /// Normalized truncated Gaussian of the given odd size.
    pub fn gaussian(size: usize, std: f64) -> Result<ConvKernel> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InvalidArgument(format!("gaussian std must be > 0, got {std}")));
        }
        let r = (size / 2) as isize;
        let mut taps = Vec::with_capacity(size * size);
        for dy in -r..=r {
            for dx in -r..=r {
                taps.push((-((dx * dx + dy * dy) as f64) / (2.0 * std * std)).exp());
            }
        }
        ConvKernel::normalized(size, size, taps)
    }

    /// Gaussian with support radius 3*std.
    pub fn gaussian_auto(std: f64) -> Result<ConvKernel> {
        let r = (3.0 * std).ceil().max(1.0) as usize;
        ConvKernel::gaussian(2 * r + 1, std)
    }

    /// Uniform square (moving-average) kernel.
    pub fn boxcar(size: usize) -> Result<ConvKernel> {
        ConvKernel::normalized(size, size, vec![1.0; size * size])
    }

    /// Linear motion-blur kernel: a line of the given length (pixels) at
    /// `angle_deg`, rasterized by bilinear splatting and normalized.
    pub fn motion(length: usize, angle_deg: f64) -> Result<ConvKernel> {
        if length == 0 {
            return Err(Error::InvalidArgument("motion length must be >= 1".into()));
        }
        let half = (length as f64 - 1.0) / 2.0;
        let r = half.ceil() as usize + 1;
        let size = 2 * r + 1;
        let mut taps = vec![0.0; size * size];
        let (s, c) = angle_deg.to_radians().sin_cos();
        let steps = (length * 8).max(8);
        for i in 0..steps {
            let t = -half + (i as f64 + 0.5) / steps as f64 * (length as f64 - 1.0).max(1e-9);
            let (x, y) = (r as f64 + t * c, r as f64 + t * s);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            taps[y0 * size + x0] += (1.0 - fx) * (1.0 - fy);
            taps[y0 * size + x0 + 1] += fx * (1.0 - fy);
            taps[(y0 + 1) * size + x0] += (1.0 - fx) * fy;
            taps[(y0 + 1) * size + x0 + 1] += fx * fy;
        }
        ConvKernel::normalized(size, size, taps)
    }

    /// 180-degree rotation; convolving with it is the adjoint of convolving
    /// with `self` under periodic boundaries.
    pub fn flipped(&self) -> ConvKernel {
        let taps = self.taps.iter().rev().copied().collect();
        ConvKernel { kwidth: self.kwidth, kheight: self.kheight, taps }
    }

    pub fn kwidth(&self) -> usize {
        self.kwidth
    }

    pub fn kheight(&self) -> usize {
        self.kheight
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.kwidth <= width && self.kheight <= height
    }

    /// Parse the plain-text kernel format: first line `KERNEL w h`, then
    /// `w*h` whitespace-separated taps, row-major.
    pub fn from_text(path: &std::path::Path, normalize: bool) -> Result<ConvKernel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("KERNEL") {
            return Err(Error::format(path, "expected KERNEL header"));
        }
        let mut dim = |what: &str| -> Result<usize> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad {what}")))
        };
        let w = dim("width")?;
        let h = dim("height")?;
        let taps: Vec<f64> = text
            .split_whitespace()
            .skip(3)
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad tap {t:?}"))))
            .collect::<Result<_>>()?;
        if taps.len() != w * h {
            return Err(Error::format(path, format!("expected {} taps, found {}", w * h, taps.len())));
        }
        if normalize {
            ConvKernel::normalized(w, h, taps)
        } else {
            ConvKernel::new(w, h, taps)
        }
    }

    pub fn to_text(&self, path: &std::path::Path) -> Result<()> {
        let mut out = format!("KERNEL {} {}\n", self.kwidth, self.kheight);
        for row in self.taps.chunks(self.kwidth) {
            let line: Vec<String> = row.iter().map(|t| format!("{t}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Spectrum of the kernel zero-embedded into a w x h plane with its center
/// tap at the origin (so multiplication in Fourier space is centered
/// circular convolution).
pub(crate) fn kernel_spectrum(k: &ConvKernel, width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut plane = vec![0.0; width * height];
    let (cy, cx) = (k.kheight as isize / 2, k.kwidth as isize / 2);
    for r in 0..k.kheight as isize {
        for c in 0..k.kwidth as isize {
            let y = (r - cy).rem_euclid(height as isize) as usize;
            let x = (c - cx).rem_euclid(width as isize) as usize;
            plane[y * width + x] += k.taps[(r * k.kwidth as isize + c) as usize];
        }
    }
    fft2(width, height, &plane)
}

fn conv_apply_spectrum(spec: &[Complex<f64>], x: &Image, conjugate: bool) -> Image {
    let (w, h, c) = x.shape();
    let mut out = Image::zeros(w, h, c);
    for ch in 0..c {
        let mut xs = fft2(w, h, x.plane(ch));
        for (v, k) in xs.iter_mut().zip(spec) {
            *v *= if conjugate { k.conj() } else { *k };
        }
        out.plane_mut(ch).copy_from_slice(&ifft2_real(w, h, &xs));
    }
    out
}

/// Circular (periodic) convolution of every channel with `k`.
pub fn conv_forward(k: &ConvKernel, x: &Image) -> Result<Image> {
    if !k.fits(x.width(), x.height()) {
        return Err(Error::ShapeMismatch(format!(
            "kernel {}x{} larger than image {}x{}",
            k.kwidth,
            k.kheight,
            x.width(),
            x.height()
        )));
    }
    let spec = kernel_spectrum(k, x.width(), x.height());
    Ok(conv_apply_spectrum(&spec, x, false))
}

/// Adjoint of [`conv_forward`]: circular convolution with the flipped kernel.
pub fn conv_adjoint(k: &ConvKernel, y: &Image) -> Result<Image> {
    if !k.fits(y.width(), y.height()) {
        return Err(Error::ShapeMismatch(format!(
            "kernel {}x{} larger than image {}x{}",
            k.kwidth,
            k.kheight,
            y.width(),
            y.height()
        )));
    }
    let spec = kernel_spectrum(k, y.width(), y.height());
    Ok(conv_apply_spectrum(&spec, y, true))
}

/// 2x2 color filter array layout of channel indices; RGGB by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BayerPattern {
    layout: [[usize; 2]; 2],
}

impl BayerPattern {
    pub fn new(layout: [[usize; 2]; 2]) -> Result<BayerPattern> {
        for row in &layout {
            for &c in row {
                if c > 2 {
                    return Err(Error::InvalidArgument(format!("bayer channel index {c} > 2")));
                }
            }
        }
        Ok(BayerPattern { layout })
    }

    pub fn rggb() -> BayerPattern {
        BayerPattern { layout: [[0, 1], [1, 2]] }
    }

    #[inline]
    pub fn channel_at(&self, y: usize, x: usize) -> usize {
        self.layout[y % 2][x % 2]
    }

    pub fn layout(&self) -> [[usize; 2]; 2] {
        self.layout
    }
}

impl Default for BayerPattern {
    fn default() -> Self {
        BayerPattern::rggb()
    }
}

fn check_even_dims(w: usize, h: usize) -> Result<()> {
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("bayer requires even dimensions, got {w}x{h}")));
    }
    Ok(())
}

/// Sample a 3-channel image through the CFA into a single-channel mosaic.
pub fn bayer_forward(p: &BayerPattern, x: &Image) -> Result<Image> {
    if x.channels() != 3 {
        return Err(Error::ChannelMismatch(format!(
            "bayer forward needs 3 channels, got {}",
            x.channels()
        )));
    }
    check_even_dims(x.width(), x.height())?;
    let (w, h, _) = x.shape();
    let mut m = Image::zeros(w, h, 1);
    for y in 0..h {
        for xx in 0..w {
            m.set(0, y, xx, x.get(p.channel_at(y, xx), y, xx));
        }
    }
    Ok(m)
}

/// Scatter a mosaic back into a 3-channel image (zeros off-pattern); the
/// exact adjoint of [`bayer_forward`].
pub fn bayer_adjoint(p: &BayerPattern, m: &Image) -> Result<Image> {
    if m.channels() != 1 {
        return Err(Error::ChannelMismatch(format!(
            "bayer adjoint needs 1 channel, got {}",
            m.channels()
        )));
    }
    check_even_dims(m.width(), m.height())?;
    let (w, h, _) = m.shape();
    let mut x = Image::zeros(w, h, 3);
    for y in 0..h {
        for xx in 0..w {
            x.set(p.channel_at(y, xx), y, xx, m.get(0, y, xx));
        }
    }
    Ok(x)
}

/// Forward differences of one plane; differences crossing the last column/row are zero.
fn grad_plane(src: &[f64], w: usize, h: usize, dx: &mut [f64], dy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            dx[i] = if x + 1 < w { src[i + 1] - src[i] } else { 0.0 };
            dy[i] = if y + 1 < h { src[i + w] - src[i] } else { 0.0 };
        }
    }
}

/// Exact adjoint of [`grad_plane`] (negative divergence with matching boundary).
fn grad_adjoint_plane(dx: &[f64], dy: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if x >= 1 {
                v += dx[i - 1];
            }
            if x + 1 < w {
                v -= dx[i];
            }
            if y >= 1 {
                v += dy[i - w];
            }
            if y + 1 < h {
                v -= dy[i];
            }
            out[i] = v;
        }
    }
}

/// Per-channel forward-difference gradient; channel `c` of the input yields
/// planes `2c` (horizontal) and `2c+1` (vertical) of the output.
pub fn grad_forward(x: &Image) -> Image {
    let (w, h, c) = x.shape();
    let mut g = Image::zeros(w, h, 2 * c);
    for ch in 0..c {
        let src = x.plane(ch).to_vec();
        let (dx, dy) = {
            let mut dx = vec![0.0; w * h];
            let mut dy = vec![0.0; w * h];
            grad_plane(&src, w, h, &mut dx, &mut dy);
            (dx, dy)
        };
        g.plane_mut(2 * ch).copy_from_slice(&dx);
        g.plane_mut(2 * ch + 1).copy_from_slice(&dy);
    }
    g
}

/// Adjoint of [`grad_forward`]; requires an even channel count.
pub fn grad_adjoint(g: &Image) -> Result<Image> {
    let (w, h, c2) = g.shape();
    if c2 % 2 != 0 {
        return Err(Error::ChannelMismatch(format!(
            "gradient adjoint needs an even channel count, got {c2}"
        )));
    }
    let c = c2 / 2;
    let mut x = Image::zeros(w, h, c);
    let mut buf = vec![0.0; w * h];
    for ch in 0..c {
        grad_adjoint_plane(g.plane(2 * ch), g.plane(2 * ch + 1), w, h, &mut buf);
        x.plane_mut(ch).copy_from_slice(&buf);
    }
    Ok(x)
}

/// Ordered channel pairs of the cross-channel difference operator. Every
/// unordered pair appears in both orientations, so the operator output has
/// 6 pairs x 2 derivative planes = 12 planes and the attached L1 penalty
/// weights each pairwise difference twice.
pub const CROSS_CHANNEL_PAIRS: [(usize, usize); 6] =
    [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];

/// Gradient-difference fields grad(x_a) - grad(x_b) for each ordered channel
/// pair; plane `2p` holds the horizontal and `2p+1` the vertical component of
/// pair `p` in [`CROSS_CHANNEL_PAIRS`] order.
pub fn channel_grad_diff_forward(x: &Image) -> Result<Image> {
    if x.channels() != 3 {
        return Err(Error::ChannelMismatch(format!(
            "cross-channel operator needs 3 channels, got {}",
            x.channels()
        )));
    }
    let (w, h, _) = x.shape();
    let mut out = Image::zeros(w, h, 12);
    let mut diff = vec![0.0; w * h];
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for (p, &(a, b)) in CROSS_CHANNEL_PAIRS.iter().enumerate() {
        for (d, (va, vb)) in diff.iter_mut().zip(x.plane(a).iter().zip(x.plane(b))) {
            *d = va - vb;
        }
        grad_plane(&diff, w, h, &mut dx, &mut dy);
        out.plane_mut(2 * p).copy_from_slice(&dx);
        out.plane_mut(2 * p + 1).copy_from_slice(&dy);
    }
    Ok(out)
}

/// Exact adjoint of [`channel_grad_diff_forward`].
pub fn channel_grad_diff_adjoint(g: &Image) -> Result<Image> {
    if g.channels() != 12 {
        return Err(Error::ChannelMismatch(format!(
            "cross-channel adjoint needs 12 channels, got {}",
            g.channels()
        )));
    }
    let (w, h, _) = g.shape();
    let mut x = Image::zeros(w, h, 3);
    let mut buf = vec![0.0; w * h];
    for (p, &(a, b)) in CROSS_CHANNEL_PAIRS.iter().enumerate() {
        grad_adjoint_plane(g.plane(2 * p), g.plane(2 * p + 1), w, h, &mut buf);
        for (i, v) in buf.iter().enumerate() {
            x.plane_mut(a)[i] += v;
        }
        for (i, v) in buf.iter().enumerate() {
            x.plane_mut(b)[i] -= v;
        }
    }
    Ok(x)
}

/// A forward/adjoint operator pair with fixed input and output shapes.
#[derive(Debug, Clone)]
pub enum LinearOperator {
    Identity {
        width: usize,
        height: usize,
        channels: usize,
    },
    CircularConv {
        kernel: ConvKernel,
        width: usize,
        height: usize,
        channels: usize,
        spectrum: Vec<Complex<f64>>,
    },
    BayerMask {
        pattern: BayerPattern,
        width: usize,
        height: usize,
    },
    Gradient {
        width: usize,
        height: usize,
        channels: usize,
    },
    ChannelGradDiff {
        width: usize,
        height: usize,
    },
}

impl LinearOperator {
    pub fn identity(width: usize, height: usize, channels: usize) -> LinearOperator {
        LinearOperator::Identity { width, height, channels }
    }

    pub fn circular_conv(
        kernel: ConvKernel,
        width: usize,
        height: usize,
        channels: usize,
    ) -> Result<LinearOperator> {
        if !kernel.fits(width, height) {
            return Err(Error::ShapeMismatch(format!(
                "kernel {}x{} larger than image {width}x{height}",
                kernel.kwidth(),
                kernel.kheight()
            )));
        }
        let spectrum = kernel_spectrum(&kernel, width, height);
        Ok(LinearOperator::CircularConv { kernel, width, height, channels, spectrum })
    }

    pub fn bayer_mask(pattern: BayerPattern, width: usize, height: usize) -> Result<LinearOperator> {
        check_even_dims(width, height)?;
        Ok(LinearOperator::BayerMask { pattern, width, height })
    }

    pub fn gradient(width: usize, height: usize, channels: usize) -> LinearOperator {
        LinearOperator::Gradient { width, height, channels }
    }

    pub fn channel_grad_diff(width: usize, height: usize) -> LinearOperator {
        LinearOperator::ChannelGradDiff { width, height }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match *self {
            LinearOperator::Identity { width, height, channels } => (width, height, channels),
            LinearOperator::CircularConv { width, height, channels, .. } => (width, height, channels),
            LinearOperator::BayerMask { width, height, .. } => (width, height, 3),
            LinearOperator::Gradient { width, height, channels } => (width, height, channels),
            LinearOperator::ChannelGradDiff { width, height } => (width, height, 3),
        }
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        match *self {
            LinearOperator::Identity { width, height, channels } => (width, height, channels),
            LinearOperator::CircularConv { width, height, channels, .. } => (width, height, channels),
            LinearOperator::BayerMask { width, height, .. } => (width, height, 1),
            LinearOperator::Gradient { width, height, channels } => (width, height, 2 * channels),
            LinearOperator::ChannelGradDiff { width, height } => (width, height, 12),
        }
    }

    fn check_shape(img: &Image, shape: (usize, usize, usize), what: &str) -> Result<()> {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: image {:?} vs operator {:?}",
                img.shape(),
                shape
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Image) -> Result<Image> {
        Self::check_shape(x, self.input_shape(), "forward")?;
        match self {
            LinearOperator::Identity { .. } => Ok(x.clone()),
            LinearOperator::CircularConv { spectrum, .. } => {
                Ok(conv_apply_spectrum(spectrum, x, false))
            }
            LinearOperator::BayerMask { pattern, .. } => bayer_forward(pattern, x),
            LinearOperator::Gradient { .. } => Ok(grad_forward(x)),
            LinearOperator::ChannelGradDiff { .. } => channel_grad_diff_forward(x),
        }
    }

    pub fn adjoint(&self, y: &Image) -> Result<Image> {
        Self::check_shape(y, self.output_shape(), "adjoint")?;
        match self {
            LinearOperator::Identity { .. } => Ok(y.clone()),
            LinearOperator::CircularConv { spectrum, .. } => {
                Ok(conv_apply_spectrum(spectrum, y, true))
            }
            LinearOperator::BayerMask { pattern, .. } => bayer_adjoint(pattern, y),
            LinearOperator::Gradient { .. } => grad_adjoint(y),
            LinearOperator::ChannelGradDiff { .. } => channel_grad_diff_adjoint(y),
        }
    }
}

/// Deterministic pseudo-random image with samples uniform in [-0.5, 0.5).
pub fn random_centered_image(width: usize, height: usize, channels: usize, seed: RngSeed) -> Image {
    let mut img = Image::zeros(width, height, channels);
    for (i, v) in img.data_mut().iter_mut().enumerate() {
        *v = uniform(seed, i as u64) - 0.5;
    }
    img
}

/// Power-iteration estimate of the operator norm ||op|| via A^T A.
///
/// The estimate grows monotonically with `iters` (up to round-off) and stops
/// early once its relative change drops below 1e-12.
pub fn operator_norm(op: &LinearOperator, iters: usize, seed: RngSeed) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidArgument("operator_norm needs iters >= 1".into()));
    }
    let (w, h, c) = op.input_shape();
    let mut v = random_centered_image(w, h, c, seed);
    let n0 = v.norm_l2();
    if n0 == 0.0 {
        return Ok(0.0);
    }
    v = v.scale(1.0 / n0);
    let mut lambda = 0.0f64;
    for _ in 0..iters {
        let m = op.adjoint(&op.forward(&v)?)?;
        let n = m.norm_l2();
        if n == 0.0 {
            return Ok(0.0);
        }
        let prev = lambda;
        lambda = n;
        v = m.scale(1.0 / n);
        if prev > 0.0 && (lambda - prev).abs() <= 1e-12 * lambda {
            break;
        }
    }
    Ok(lambda.sqrt())
}

/// [`operator_norm`] with the default budget: 100 iterations, seed 0.
pub fn operator_norm_default(op: &LinearOperator) -> Result<f64> {
    operator_norm(op, 100, RngSeed(0))
}

/// Squared norm of the stacked dual operator [I; D_1; ...; D_k], i.e. the
/// largest eigenvalue of I + sum_i D_i^T D_i, by power iteration. This is the
/// constant bounding the primal-dual step-size product.
pub fn stacked_norm_sq(
    regularizer_ops: &[&LinearOperator],
    width: usize,
    height: usize,
    channels: usize,
    iters: usize,
    seed: RngSeed,
) -> Result<f64> {
    let mut v = random_centered_image(width, height, channels, seed);
    let n0 = v.norm_l2();
    if n0 == 0.0 {
        return Ok(1.0);
    }
    v = v.scale(1.0 / n0);
    let mut lambda = 1.0f64;
    for _ in 0..iters.max(1) {
        let mut m = v.clone();
        for op in regularizer_ops {
            m = m.add(&op.adjoint(&op.forward(&v)?)?)?;
        }
        let n = m.norm_l2();
        if n == 0.0 {
            return Ok(1.0);
        }
        let prev = lambda;
        lambda = n;
        v = m.scale(1.0 / n);
        if (lambda - prev).abs() <= 1e-12 * lambda {
            break;
        }
    }
    Ok(lambda)
}
