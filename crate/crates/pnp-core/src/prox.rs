//! Closed-form proximal operators: the quadratic data term (Fourier or
//! diagonal solve) and the stackable regularizer shrinkages.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::image::Image;
use crate::linop::LinearOperator;

/// Weighted quadratic data fidelity (alpha/2)*||A u - f||^2 for A one of
/// Identity, CircularConv or BayerMask (the kinds with a closed-form prox).
#[derive(Debug, Clone)]
pub struct DataTerm {
    op: LinearOperator,
    f: Image,
    alpha: f64,
    /// FFT of f per channel (conv only), so the prox solve reuses it.
    f_spectrum: Vec<Vec<Complex<f64>>>,
    /// A^T f (bayer only).
    at_f: Option<Image>,
}

impl DataTerm {
    pub fn new(op: LinearOperator, f: Image, alpha: f64) -> Result<DataTerm> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and > 0, got {alpha}")));
        }
        if !f.is_all_finite() {
            return Err(Error::NonFinite("data term observation".into()));
        }
        if f.shape() != op.output_shape() {
            return Err(Error::ShapeMismatch(format!(
                "observation {:?} vs operator output {:?}",
                f.shape(),
                op.output_shape()
            )));
        }
        let (f_spectrum, at_f) = match &op {
            LinearOperator::Identity { .. } => (Vec::new(), None),
            LinearOperator::CircularConv { .. } => {
                let (w, h, _) = f.shape();
                let spec = (0..f.channels()).map(|c| fft2(w, h, f.plane(c))).collect();
                (spec, None)
            }
            LinearOperator::BayerMask { .. } => (Vec::new(), Some(op.adjoint(&f)?)),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "data term operator must be Identity, CircularConv or BayerMask, got {other:?}"
                )))
            }
        };
        Ok(DataTerm { op, f, alpha, f_spectrum, at_f })
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn observation(&self) -> &Image {
        &self.f
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same data term with a different fidelity weight (cached spectra are reused).
    pub fn with_alpha(&self, alpha: f64) -> Result<DataTerm> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and > 0, got {alpha}")));
        }
        let mut d = self.clone();
        d.alpha = alpha;
        Ok(d)
    }

    /// Image-domain shape the solvers iterate on.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.op.input_shape()
    }

    /// (alpha/2) * ||A u - f||^2
    pub fn energy(&self, u: &Image) -> Result<f64> {
        let r = self.op.forward(u)?.sub(&self.f)?;
        Ok(0.5 * self.alpha * r.data().iter().map(|v| v * v).sum::<f64>())
    }

    /// alpha * A^T (A u - f)
    pub fn gradient(&self, u: &Image) -> Result<Image> {
        let r = self.op.forward(u)?.sub(&self.f)?;
        Ok(self.op.adjoint(&r)?.scale(self.alpha))
    }

    /// prox of t * (alpha/2)||A . - f||^2 at v:
    /// argmin_u (1/2)||u - v||^2 + t*(alpha/2)||A u - f||^2.
    pub fn prox(&self, t: f64, v: &Image) -> Result<Image> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("prox step must be finite and >= 0, got {t}")));
        }
        if v.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "prox input {:?} vs {:?}",
                v.shape(),
                self.input_shape()
            )));
        }
        let c = t * self.alpha;
        match &self.op {
            LinearOperator::Identity { .. } => {
                Ok(v.zip_with(&self.f, |vi, fi| (vi + c * fi) / (1.0 + c))?)
            }
            LinearOperator::CircularConv { spectrum, .. } => {
                let (w, h, ch) = v.shape();
                let mut out = Image::zeros(w, h, ch);
                for plane in 0..ch {
                    let vs = fft2(w, h, v.plane(plane));
                    let fs = &self.f_spectrum[plane];
                    let solved: Vec<Complex<f64>> = vs
                        .iter()
                        .zip(fs)
                        .zip(spectrum)
                        .map(|((vv, ff), kk)| {
                            (vv + kk.conj() * ff * c) / (1.0 + c * kk.norm_sqr())
                        })
                        .collect();
                    out.plane_mut(plane).copy_from_slice(&ifft2_real(w, h, &solved));
                }
                Ok(out)
            }
            LinearOperator::BayerMask { pattern, .. } => {
                let at_f = self.at_f.as_ref().expect("cached A^T f");
                let (w, h, ch) = v.shape();
                let mut out = Image::zeros(w, h, ch);
                for plane in 0..ch {
                    for y in 0..h {
                        for x in 0..w {
                            let mask = if pattern.channel_at(y, x) == plane { 1.0 } else { 0.0 };
                            let val = (v.get(plane, y, x) + c * at_f.get(plane, y, x))
                                / (1.0 + c * mask);
                            out.set(plane, y, x, val);
                        }
                    }
                }
                Ok(out)
            }
            _ => unreachable!("constructor rejects other kinds"),
        }
    }

    /// Range-side prox of t * (alpha/2)||. - f||^2 (no operator), used by the
    /// splitting variant that keeps a dual variable in the range of A:
    /// (w + t*alpha*f) / (1 + t*alpha), elementwise.
    pub fn prox_range(&self, t: f64, w: &Image) -> Result<Image> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("prox step must be finite and >= 0, got {t}")));
        }
        let c = t * self.alpha;
        w.zip_with(&self.f, |wi, fi| (wi + c * fi) / (1.0 + c))
    }
}

/// Per-pixel 2-vector shrinkage (the prox of lambda * ||.||_{2,1}). Input has
/// an even channel count: planes (2c, 2c+1) are one vector field.
pub fn prox_l21(lambda: f64, p: &Image) -> Result<Image> {
    if p.channels() % 2 != 0 {
        return Err(Error::ChannelMismatch(format!(
            "vector shrinkage needs paired planes, got {} channels",
            p.channels()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(p.clone());
    }
    let (w, h, c2) = p.shape();
    let mut out = Image::zeros(w, h, c2);
    let n = w * h;
    for c in 0..c2 / 2 {
        for i in 0..n {
            let a = p.plane(2 * c)[i];
            let b = p.plane(2 * c + 1)[i];
            let norm = (a * a + b * b).sqrt();
            let factor = if norm > lambda { 1.0 - lambda / norm } else { 0.0 };
            out.plane_mut(2 * c)[i] = a * factor;
            out.plane_mut(2 * c + 1)[i] = b * factor;
        }
    }
    Ok(out)
}

/// Per-sample soft threshold, the prox of lambda * ||.||_1.
pub fn prox_l1(lambda: f64, p: &Image) -> Result<Image> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(p.clone());
    }
    Ok(p.map(|v| v.signum() * (v.abs() - lambda).max(0.0)))
}
