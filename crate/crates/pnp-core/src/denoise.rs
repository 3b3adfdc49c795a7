//! The interchangeable denoiser slot: reference exact proxes (TV) and
//! practical denoisers (non-local means, Gaussian smoothing, a residual CNN).
//!
//! Denoisers accept and return unclamped values; solver iterates routinely
//! leave [0,1] and nothing here may clip them.

use rayon::prelude::*;

use crate::cnn::CnnModel;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::linop::{grad_adjoint, grad_forward};

/// Non-local means parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NlmParams {
    /// Patch half-width; the patch is (2r+1)^2.
    pub patch_radius: usize,
    /// Search-window half-width.
    pub search_radius: usize,
    /// Filtering strength in the exponential weight.
    pub h: f64,
    /// Noise compensation subtracted from patch distances (0 disables it).
    pub sigma_est: f64,
}

impl NlmParams {
    pub fn new(patch_radius: usize, search_radius: usize, h: f64, sigma_est: f64) -> Result<NlmParams> {
        if patch_radius < 1 || search_radius < 1 {
            return Err(Error::InvalidArgument("nlm radii must be >= 1".into()));
        }
        if !(h > 0.0) || !h.is_finite() || !sigma_est.is_finite() || sigma_est < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "nlm strength h must be finite and > 0 (got {h}), sigma_est finite and >= 0 (got {sigma_est})"
            )));
        }
        Ok(NlmParams { patch_radius, search_radius, h, sigma_est })
    }
}

impl Default for NlmParams {
    /// 3x3 patches searched over an 11x11 window; desk-scale defaults.
    fn default() -> Self {
        NlmParams { patch_radius: 1, search_radius: 5, h: 0.1, sigma_est: 0.0 }
    }
}

/// A shape-preserving, deterministic map Image -> Image.
#[derive(Debug, Clone)]
pub enum Denoiser {
    Identity,
    GaussianSmooth { std: f64 },
    Nlm(NlmParams),
    TvProx { lambda: f64, inner_iters: usize, inner_tol: f64 },
    Cnn(CnnModel),
}

impl Denoiser {
    /// Default inner budget for the exact TV prox.
    pub fn tv_prox(lambda: f64) -> Denoiser {
        Denoiser::TvProx { lambda, inner_iters: 500, inner_tol: 1e-8 }
    }

    /// Channel count this denoiser requires, if it is restricted.
    pub fn required_channels(&self) -> Option<usize> {
        match self {
            Denoiser::Cnn(m) => Some(m.input_channels()),
            _ => None,
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        if let Some(c) = self.required_channels() {
            if x.channels() != c {
                return Err(Error::ChannelMismatch(format!(
                    "denoiser expects {c} channels, image has {}",
                    x.channels()
                )));
            }
        }
        if !x.is_all_finite() {
            return Err(Error::NonFinite("denoiser input".into()));
        }
        match self {
            Denoiser::Identity => Ok(x.clone()),
            Denoiser::GaussianSmooth { std } => gaussian_smooth(*std, x),
            Denoiser::Nlm(p) => nlm_denoise(p, x),
            Denoiser::TvProx { lambda, inner_iters, inner_tol } => {
                tv_prox_denoise(*lambda, x, *inner_iters, *inner_tol)
            }
            Denoiser::Cnn(m) => m.infer(x),
        }
    }
}

/// Isotropic-TV energy (1/2)||u-b||^2 + lambda*||Du||_{2,1}.
pub fn tv_energy(lambda: f64, b: &Image, u: &Image) -> Result<f64> {
    let quad = 0.5 * u.sub(b)?.data().iter().map(|v| v * v).sum::<f64>();
    let g = grad_forward(u);
    let n = u.pixels();
    let mut tv = 0.0;
    for c in 0..u.channels() {
        let (dx, dy) = (g.plane(2 * c), g.plane(2 * c + 1));
        for i in 0..n {
            tv += (dx[i] * dx[i] + dy[i] * dy[i]).sqrt();
        }
    }
    Ok(quad + lambda * tv)
}

/// Exact prox of lambda * TV, solved by projected gradient on the dual:
/// minimize (1/2)||b - D^T q||^2 over per-pixel ||q|| <= lambda, step 1/8
/// (1/||D||^2), returning u = b - D^T q. Stops when the relative change of u
/// drops below `inner_tol` or after `inner_iters` steps; of all inner
/// iterates, the one with the lowest primal energy is returned.
pub fn tv_prox_denoise(lambda: f64, b: &Image, inner_iters: usize, inner_tol: f64) -> Result<Image> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    let (w, h, c) = b.shape();
    let mut q = Image::zeros(w, h, 2 * c);
    let mut u = b.clone();
    let mut best_u = b.clone();
    let mut best_energy = tv_energy(lambda, b, b)?;
    let step = 1.0 / 8.0;
    let scale = b.norm_l2().max(1e-12);
    for _ in 0..inner_iters {
        // q <- project_{||.||<=lambda}(q + step * D(b - D^T q))
        let grad_u = grad_forward(&u);
        let mut q_next = q.axpy(step, &grad_u)?;
        project_vector_ball(lambda, &mut q_next);
        q = q_next;
        let u_next = b.sub(&grad_adjoint(&q)?)?;
        let delta = u_next.sub(&u)?.norm_l2();
        u = u_next;
        let e = tv_energy(lambda, b, &u)?;
        if e < best_energy {
            best_energy = e;
            best_u = u.clone();
        }
        if delta <= inner_tol * scale {
            break;
        }
    }
    Ok(best_u)
}

/// Clip each per-pixel 2-vector of a paired-plane field to norm <= radius.
fn project_vector_ball(radius: f64, q: &mut Image) {
    let (w, h, c2) = q.shape();
    let n = w * h;
    for c in 0..c2 / 2 {
        for i in 0..n {
            let a = q.plane(2 * c)[i];
            let b = q.plane(2 * c + 1)[i];
            let norm = (a * a + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                q.plane_mut(2 * c)[i] = a * s;
                q.plane_mut(2 * c + 1)[i] = b * s;
            }
        }
    }
}

/// Non-local means with patch distances averaged over the (2r+1)^2 patch and
/// all channels, weights exp(-max(0, d^2 - 2*sigma_est^2)/h^2) shared across
/// channels, and the self weight set to the largest non-self weight.
pub fn nlm_denoise(p: &NlmParams, x: &Image) -> Result<Image> {
    let (w, h, ch) = x.shape();
    let patch = 2 * p.patch_radius + 1;
    if patch > w || patch > h {
        return Err(Error::InvalidArgument(format!(
            "patch window {patch}x{patch} does not fit image {w}x{h}"
        )));
    }
    let pr = p.patch_radius as isize;
    let sr = p.search_radius as isize;
    let pad = (pr + sr) as usize;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    // replicate-padded copy
    let mut padded = vec![0.0f64; pw * ph * ch];
    for c in 0..ch {
        let src = x.plane(c);
        for y in 0..ph {
            let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
            for xx in 0..pw {
                let sx = (xx as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                padded[(c * ph + y) * pw + xx] = src[sy * w + sx];
            }
        }
    }
    let n = w * h;
    let inv_area = 1.0 / (patch * patch * ch) as f64;
    let inv_h2 = 1.0 / (p.h * p.h);
    let noise_comp = 2.0 * p.sigma_est * p.sigma_est;

    // accumulators: weight sum, max non-self weight, per-channel value sums
    let mut weight_sum = vec![0.0f64; n];
    let mut weight_max = vec![0.0f64; n];
    let mut value_sum = vec![0.0f64; n * ch];

    // integral-image workspace region: patch sums are needed for pixel
    // centers offset by +/- patch_radius, i.e. an (w+2pr) x (h+2pr) band.
    let (bw, bh) = (w + 2 * p.patch_radius, h + 2 * p.patch_radius);
    let mut sq = vec![0.0f64; bw * bh];
    let mut integral = vec![0.0f64; (bw + 1) * (bh + 1)];

    for ty in -sr..=sr {
        for tx in -sr..=sr {
            if ty == 0 && tx == 0 {
                continue;
            }
            // squared difference between the image and its (tx,ty) shift,
            // summed over channels, on the band
            for by in 0..bh {
                let yy = by + pad - p.patch_radius;
                let sy = (yy as isize + ty) as usize;
                for bx in 0..bw {
                    let xx = bx + pad - p.patch_radius;
                    let sx = (xx as isize + tx) as usize;
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let a = padded[(c * ph + yy) * pw + xx];
                        let b = padded[(c * ph + sy) * pw + sx];
                        acc += (a - b) * (a - b);
                    }
                    sq[by * bw + bx] = acc;
                }
            }
            // summed-area table of sq
            for by in 0..bh {
                let mut rowsum = 0.0;
                for bx in 0..bw {
                    rowsum += sq[by * bw + bx];
                    integral[(by + 1) * (bw + 1) + bx + 1] = integral[by * (bw + 1) + bx + 1] + rowsum;
                }
            }
            // accumulate weights for every pixel; disjoint writes, so rows
            // can run in parallel without changing any result bit
            let patch_span = patch;
            weight_sum
                .par_chunks_mut(w)
                .zip(weight_max.par_chunks_mut(w))
                .zip(value_sum.par_chunks_mut(w * ch))
                .enumerate()
                .for_each(|(y, ((wsum_row, wmax_row), vsum_row))| {
                    for xx in 0..w {
                        // patch around (xx, y) in band coordinates starts at (xx, y)
                        let (bx0, by0) = (xx, y);
                        let (bx1, by1) = (bx0 + patch_span, by0 + patch_span);
                        let s = integral[by1 * (bw + 1) + bx1] - integral[by0 * (bw + 1) + bx1]
                            - integral[by1 * (bw + 1) + bx0]
                            + integral[by0 * (bw + 1) + bx0];
                        let d2 = s * inv_area;
                        let wgt = (-(d2 - noise_comp).max(0.0) * inv_h2).exp();
                        wsum_row[xx] += wgt;
                        if wgt > wmax_row[xx] {
                            wmax_row[xx] = wgt;
                        }
                        let py = (y + pad) as isize + ty;
                        let px = (xx + pad) as isize + tx;
                        for c in 0..ch {
                            vsum_row[c * w + xx] +=
                                wgt * padded[(c * ph + py as usize) * pw + px as usize];
                        }
                    }
                });
        }
    }

    let mut out = Image::zeros(w, h, ch);
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            let self_w = weight_max[i];
            let total = weight_sum[i] + self_w;
            for c in 0..ch {
                let v = (value_sum[(y * ch + c) * w + xx] + self_w * x.plane(c)[i]) / total;
                out.plane_mut(c)[i] = v;
            }
        }
    }
    Ok(out)
}

/// Separable convolution with a normalized truncated Gaussian (radius
/// ceil(3*std)), replicate boundary. A support below half a pixel collapses
/// to the identity.
pub fn gaussian_smooth(std: f64, x: &Image) -> Result<Image> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!("std must be finite and > 0, got {std}")));
    }
    if 3.0 * std < 0.5 {
        return Ok(x.clone());
    }
    let r = (3.0 * std).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * std * std)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    let (w, h, ch) = x.shape();
    let mut out = Image::zeros(w, h, ch);
    let mut tmp = vec![0.0f64; w * h];
    for c in 0..ch {
        let src = x.plane(c);
        // horizontal
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sx = (xx as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += t * src[y * w + sx];
                }
                tmp[y * w + xx] = acc;
            }
        }
        // vertical
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += t * tmp[sy * w + xx];
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    Ok(out)
}
