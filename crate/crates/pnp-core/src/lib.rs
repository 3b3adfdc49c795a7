//! Plug-and-play inverse imaging at desk scale.
//!
//! The crate implements four operator-splitting schemes (proximal gradient,
//! ADMM, and two primal-dual hybrid gradient variants) in which the
//! regularization proximal step is an interchangeable denoiser, plus the
//! linear operators, closed-form proximal maps, reference denoisers, a
//! residual-CNN inference path, and an experiment harness (deconvolution,
//! Bayer demosaicking, parameter grid search).

pub mod cnn;
pub mod denoise;
pub mod error;
mod fft;
pub mod harness;
pub mod image;
pub mod io;
pub mod linop;
pub mod prox;
pub mod scheme;

pub use error::{Error, Result};
pub use image::{add_gaussian_noise, clamp01, mse, psnr, psnr_per_channel, Image, RngSeed};
pub use linop::{BayerPattern, ConvKernel, LinearOperator};
pub use prox::DataTerm;
