//! The four operator-splitting schemes with a denoiser in the regularizer
//! slot, the stacked primal-dual variant with explicit TV / cross-channel
//! blocks, fixed-point residuals, and the step-size rescaling that trades
//! the dual step against the fidelity and regularization weights.
//!
//! None of these iterations minimizes an energy once the prox is replaced by
//! a general denoiser; they are heuristic algorithmic schemes. Divergence is
//! therefore detected (any non-finite sample) and reported as a stop reason
//! instead of an error, so parameter sweeps survive bad cells.

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::linop::{
    channel_grad_diff_adjoint, channel_grad_diff_forward, grad_adjoint, grad_forward,
    stacked_norm_sq, LinearOperator,
};
use crate::image::RngSeed;
use crate::prox::{prox_l1, prox_l21, DataTerm};

/// Floor for denominators of relative norms (black images).
pub const REL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Pg,
    Admm,
    Pdhg1,
    Pdhg2,
    StackedPdhg,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Pg => "pg",
            SchemeKind::Admm => "admm",
            SchemeKind::Pdhg1 => "pdhg1",
            SchemeKind::Pdhg2 => "pdhg2",
            SchemeKind::StackedPdhg => "stacked",
        }
    }
}

/// Everything a run needs: scheme, step sizes, data term, explicit prior
/// weights, the denoiser, and stopping.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub tau: f64,
    pub gamma: f64,
    pub theta: f64,
    pub data: DataTerm,
    pub beta_tv: f64,
    pub beta_cross: f64,
    pub denoiser: Denoiser,
    pub max_iters: usize,
    pub tol: f64,
    /// When set, each history row reports PSNR of the raw iterate against it.
    pub psnr_reference: Option<Image>,
    /// Compute the fixed-point residual per iteration (one extra denoiser
    /// application each step; off by default).
    pub track_fixed_point: bool,
    /// Keep every u-iterate in the report (tests and diagnostics).
    pub capture_iterates: bool,
}

impl SchemeConfig {
    pub fn new(scheme: SchemeKind, data: DataTerm, denoiser: Denoiser) -> SchemeConfig {
        SchemeConfig {
            scheme,
            tau: 0.95,
            gamma: 1.0,
            theta: 1.0,
            data,
            beta_tv: 0.0,
            beta_cross: 0.0,
            denoiser,
            max_iters: 30,
            tol: 1e-6,
            psnr_reference: None,
            track_fixed_point: false,
            capture_iterates: false,
        }
    }

    /// Squared norm of the stacked dual operator [I; D...] for the currently
    /// enabled explicit blocks; the primal-dual step products should satisfy
    /// tau*gamma <= 1/this.
    pub fn stacked_norm_sq(&self) -> Result<f64> {
        let (w, h, c) = self.data.input_shape();
        let mut ops: Vec<LinearOperator> = Vec::new();
        if self.beta_tv > 0.0 {
            ops.push(LinearOperator::gradient(w, h, c));
        }
        if self.beta_cross > 0.0 {
            ops.push(LinearOperator::channel_grad_diff(w, h));
        }
        let refs: Vec<&LinearOperator> = ops.iter().collect();
        stacked_norm_sq(&refs, w, h, c, 200, RngSeed(0))
    }

    /// Conservative primal step for the current gamma: 0.95 / (c * gamma).
    pub fn default_tau(&self) -> Result<f64> {
        Ok(0.95 / (self.stacked_norm_sq()? * self.gamma))
    }

    /// Heuristic step-size check (the schemes run regardless): returns a
    /// message when tau*gamma exceeds the stability constant.
    pub fn step_size_warning(&self) -> Result<Option<String>> {
        match self.scheme {
            SchemeKind::Pdhg1 | SchemeKind::Pdhg2 | SchemeKind::StackedPdhg => {
                let c = self.stacked_norm_sq()?;
                let bound = 1.0 / c;
                if self.tau * self.gamma > bound * (1.0 + 1e-9) {
                    Ok(Some(format!(
                        "tau*gamma = {} exceeds 1/||[I,-D^T]||^2 = {bound}; the scheme is heuristic and may diverge",
                        self.tau * self.gamma
                    )))
                } else {
                    Ok(None)
                }
            }
            _ => Ok(None),
        }
    }

    fn validate(&self, u0: &Image) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be finite and > 0, got {}", self.gamma)));
        }
        if !self.theta.is_finite() {
            return Err(Error::NonFinite("theta".into()));
        }
        if self.beta_tv < 0.0 || self.beta_cross < 0.0 {
            return Err(Error::InvalidArgument("beta weights must be >= 0".into()));
        }
        if u0.shape() != self.data.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "initial iterate {:?} vs data term {:?}",
                u0.shape(),
                self.data.input_shape()
            )));
        }
        if !u0.is_all_finite() {
            return Err(Error::NonFinite("initial iterate".into()));
        }
        if let Some(c) = self.denoiser.required_channels() {
            if c != u0.channels() {
                return Err(Error::ChannelMismatch(format!(
                    "denoiser expects {c} channels, problem has {}",
                    u0.channels()
                )));
            }
        }
        if self.scheme == SchemeKind::StackedPdhg && self.beta_cross > 0.0 && u0.channels() != 3 {
            return Err(Error::ChannelMismatch(
                "cross-channel prior needs a 3-channel image".into(),
            ));
        }
        Ok(())
    }
}

/// Optional initial values for the auxiliary variables; anything left unset
/// uses the scheme default (duals at zero, u_bar at u0). The ADMM split
/// variable is recomputed first in every iteration, so it needs no override.
#[derive(Debug, Clone, Default)]
pub struct InitOverrides {
    /// ADMM multiplier / primal-dual denoiser dual.
    pub y0: Option<Image>,
    /// Range-space data dual (PDHG1) or TV dual (StackedPdhg).
    pub z0: Option<Image>,
    /// Cross-channel dual (StackedPdhg).
    pub z_cross0: Option<Image>,
    /// Extrapolated iterate.
    pub u_bar0: Option<Image>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Relative change dropped below the tolerance.
    Tol,
    /// Iteration cap reached.
    MaxIters,
    /// A non-finite sample appeared; the report carries the last finite iterate.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub k: usize,
    pub rel_change: f64,
    pub data_energy: f64,
    pub fixed_point_residual: Option<f64>,
    pub psnr_vs_reference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub u: Image,
    pub iterations: usize,
    pub stop: StopReason,
    pub history: Vec<HistoryRow>,
    /// Every accepted u-iterate, only when `capture_iterates` was set.
    pub iterates: Vec<Image>,
}

/// Relative fixed-point residual ||u - G(u - t*A^T grad H_f(A u))|| / max(||u||, eps)
/// with t = tau for PG, PDHG2 and StackedPdhg, and t = 1/gamma for ADMM and PDHG1.
pub fn fixed_point_residual(cfg: &SchemeConfig, u: &Image) -> Result<f64> {
    let t = match cfg.scheme {
        SchemeKind::Pg | SchemeKind::Pdhg2 | SchemeKind::StackedPdhg => cfg.tau,
        SchemeKind::Admm | SchemeKind::Pdhg1 => 1.0 / cfg.gamma,
    };
    let arg = u.axpy(-t, &cfg.data.gradient(u)?)?;
    let gu = cfg.denoiser.apply(&arg)?;
    Ok(u.sub(&gu)?.norm_l2() / u.norm_l2().max(REL_EPS))
}

/// Trade the dual step size for fidelity/regularization weight: keeps
/// tau*gamma fixed and scales alpha and the beta weights by
/// new_gamma/cfg.gamma, which leaves every u-iterate unchanged when the
/// duals start at zero.
pub fn rescale_config(cfg: &SchemeConfig, new_gamma: f64) -> Result<SchemeConfig> {
    match cfg.scheme {
        SchemeKind::Pdhg2 | SchemeKind::StackedPdhg => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "rescale applies to pdhg2/stacked, not {}",
                other.name()
            )))
        }
    }
    if !(new_gamma > 0.0) || !new_gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be finite and > 0, got {new_gamma}")));
    }
    if new_gamma == cfg.gamma {
        return Ok(cfg.clone());
    }
    let ratio = new_gamma / cfg.gamma;
    let mut out = cfg.clone();
    out.gamma = new_gamma;
    out.tau = cfg.tau * cfg.gamma / new_gamma;
    out.data = cfg.data.with_alpha(cfg.data.alpha() * ratio)?;
    out.beta_tv = cfg.beta_tv * ratio;
    out.beta_cross = cfg.beta_cross * ratio;
    Ok(out)
}

/// Book-keeping shared by all drivers: history rows, stopping, divergence.
struct Tracker<'a> {
    cfg: &'a SchemeConfig,
    history: Vec<HistoryRow>,
    iterates: Vec<Image>,
}

enum Step {
    Continue,
    Stop(StopReason),
}

impl<'a> Tracker<'a> {
    fn new(cfg: &'a SchemeConfig) -> Tracker<'a> {
        Tracker { cfg, history: Vec::new(), iterates: Vec::new() }
    }

    fn accept(&mut self, k: usize, u_prev: &Image, u_new: &Image) -> Result<Step> {
        let rel = u_new.sub(u_prev)?.norm_l2() / u_prev.norm_l2().max(REL_EPS);
        let energy = self.cfg.data.energy(u_new)?;
        let fp = if self.cfg.track_fixed_point {
            Some(fixed_point_residual(self.cfg, u_new)?)
        } else {
            None
        };
        let p = match &self.cfg.psnr_reference {
            Some(r) => Some(psnr(r, u_new, 1.0)?),
            None => None,
        };
        self.history.push(HistoryRow {
            k,
            rel_change: rel,
            data_energy: energy,
            fixed_point_residual: fp,
            psnr_vs_reference: p,
        });
        if self.cfg.capture_iterates {
            self.iterates.push(u_new.clone());
        }
        if rel <= self.cfg.tol {
            Ok(Step::Stop(StopReason::Tol))
        } else {
            Ok(Step::Continue)
        }
    }

    fn report(self, u: Image, stop: StopReason) -> RunReport {
        RunReport { u, iterations: self.history.len(), stop, history: self.history, iterates: self.iterates }
    }
}

/// Apply the denoiser, mapping a non-finite input to a divergence stop
/// instead of an error; structural errors still propagate.
fn apply_denoiser(d: &Denoiser, x: &Image) -> Result<std::result::Result<Image, ()>> {
    match d.apply(x) {
        Ok(img) => {
            if img.is_all_finite() {
                Ok(Ok(img))
            } else {
                Ok(Err(()))
            }
        }
        Err(Error::NonFinite(_)) => Ok(Err(())),
        Err(e) => Err(e),
    }
}

fn all_finite(images: &[&Image]) -> bool {
    images.iter().all(|i| i.is_all_finite())
}

/// Proximal-gradient scheme: u <- G(u - tau * A^T grad H_f(A u)).
pub fn run_pg(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    cfg.validate(u0)?;
    let mut tracker = Tracker::new(cfg);
    let mut u = u0.clone();
    for k in 1..=cfg.max_iters {
        let arg = u.axpy(-cfg.tau, &cfg.data.gradient(&u)?)?;
        if !arg.is_all_finite() {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        let u_new = match apply_denoiser(&cfg.denoiser, &arg)? {
            Ok(img) => img,
            Err(()) => return Ok(tracker.report(u, StopReason::NonFinite)),
        };
        match tracker.accept(k, &u, &u_new)? {
            Step::Stop(reason) => return Ok(tracker.report(u_new, reason)),
            Step::Continue => u = u_new,
        }
    }
    Ok(tracker.report(u, StopReason::MaxIters))
}

pub fn run_admm(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    run_admm_init(cfg, u0, &InitOverrides::default())
}

/// ADMM-based scheme; the split variable is recomputed from (u, y) first,
/// then u through the data prox with step 1/gamma, then the multiplier.
pub fn run_admm_init(cfg: &SchemeConfig, u0: &Image, init: &InitOverrides) -> Result<RunReport> {
    cfg.validate(u0)?;
    let mut tracker = Tracker::new(cfg);
    let mut u = u0.clone();
    let mut y = match &init.y0 {
        Some(img) => {
            u0.check_same_shape(img)?;
            img.clone()
        }
        None => Image::zeros(u0.width(), u0.height(), u0.channels()),
    };
    let inv_gamma = 1.0 / cfg.gamma;
    for k in 1..=cfg.max_iters {
        let v_arg = u.axpy(inv_gamma, &y)?;
        if !v_arg.is_all_finite() {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        let v = match apply_denoiser(&cfg.denoiser, &v_arg)? {
            Ok(img) => img,
            Err(()) => return Ok(tracker.report(u, StopReason::NonFinite)),
        };
        let u_new = cfg.data.prox(inv_gamma, &v.axpy(-inv_gamma, &y)?)?;
        let y_new = y.axpy(cfg.gamma, &u_new.sub(&v)?)?;
        if !all_finite(&[&u_new, &y_new]) {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        match tracker.accept(k, &u, &u_new)? {
            Step::Stop(reason) => return Ok(tracker.report(u_new, reason)),
            Step::Continue => {
                u = u_new;
                y = y_new;
            }
        }
    }
    Ok(tracker.report(u, StopReason::MaxIters))
}

pub fn run_pdhg1(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    run_pdhg1_init(cfg, u0, &InitOverrides::default())
}

/// Primal-dual scheme with the data term handled through a range-space dual
/// z (ascent with the fidelity prox) and an explicit primal gradient step.
pub fn run_pdhg1_init(cfg: &SchemeConfig, u0: &Image, init: &InitOverrides) -> Result<RunReport> {
    cfg.validate(u0)?;
    let mut tracker = Tracker::new(cfg);
    let (fw, fh, fc) = cfg.data.observation().shape();
    let mut u = u0.clone();
    let mut u_bar = init.u_bar0.clone().unwrap_or_else(|| u0.clone());
    u0.check_same_shape(&u_bar)?;
    let mut y = match &init.y0 {
        Some(img) => {
            u0.check_same_shape(img)?;
            img.clone()
        }
        None => Image::zeros(u0.width(), u0.height(), u0.channels()),
    };
    let mut z = match &init.z0 {
        Some(img) => {
            cfg.data.observation().check_same_shape(img)?;
            img.clone()
        }
        None => Image::zeros(fw, fh, fc),
    };
    let inv_gamma = 1.0 / cfg.gamma;
    for k in 1..=cfg.max_iters {
        let a_ubar = cfg.data.operator().forward(&u_bar)?;
        let z_prox = cfg.data.prox_range(inv_gamma, &z.scale(inv_gamma).add(&a_ubar)?)?;
        let z_new = z.axpy(cfg.gamma, &a_ubar)?.axpy(-cfg.gamma, &z_prox)?;
        let y_arg = y.scale(inv_gamma).add(&u_bar)?;
        if !y_arg.is_all_finite() {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        let g = match apply_denoiser(&cfg.denoiser, &y_arg)? {
            Ok(img) => img,
            Err(()) => return Ok(tracker.report(u, StopReason::NonFinite)),
        };
        let y_new = y.axpy(cfg.gamma, &u_bar)?.axpy(-cfg.gamma, &g)?;
        let u_new = u
            .axpy(-cfg.tau, &cfg.data.operator().adjoint(&z_new)?)?
            .axpy(-cfg.tau, &y_new)?;
        let u_bar_new = u_new.axpy(cfg.theta, &u_new.sub(&u)?)?;
        if !all_finite(&[&u_new, &y_new, &z_new, &u_bar_new]) {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        match tracker.accept(k, &u, &u_new)? {
            Step::Stop(reason) => return Ok(tracker.report(u_new, reason)),
            Step::Continue => {
                u = u_new;
                u_bar = u_bar_new;
                y = y_new;
                z = z_new;
            }
        }
    }
    Ok(tracker.report(u, StopReason::MaxIters))
}

pub fn run_pdhg2(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    run_pdhg2_init(cfg, u0, &InitOverrides::default())
}

/// Primal-dual scheme whose primal update is the full data prox; the
/// denoiser dual is the only dual variable.
pub fn run_pdhg2_init(cfg: &SchemeConfig, u0: &Image, init: &InitOverrides) -> Result<RunReport> {
    run_primal_dual(cfg, u0, init, false)
}

pub fn run_stacked_pdhg(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    run_stacked_pdhg_init(cfg, u0, &InitOverrides::default())
}

/// The stacked scheme: the denoiser dual runs next to explicit prior duals
/// (isotropic TV via vector shrinkage, cross-channel differences via soft
/// thresholding); a zero weight disables a block, which reproduces the plain
/// primal-dual scheme exactly.
pub fn run_stacked_pdhg_init(cfg: &SchemeConfig, u0: &Image, init: &InitOverrides) -> Result<RunReport> {
    run_primal_dual(cfg, u0, init, true)
}

fn run_primal_dual(
    cfg: &SchemeConfig,
    u0: &Image,
    init: &InitOverrides,
    stacked: bool,
) -> Result<RunReport> {
    cfg.validate(u0)?;
    let mut tracker = Tracker::new(cfg);
    let (w, h, c) = u0.shape();
    let use_tv = stacked && cfg.beta_tv > 0.0;
    let use_cross = stacked && cfg.beta_cross > 0.0;
    let mut u = u0.clone();
    let mut u_bar = init.u_bar0.clone().unwrap_or_else(|| u0.clone());
    u0.check_same_shape(&u_bar)?;
    let mut y = match &init.y0 {
        Some(img) => {
            u0.check_same_shape(img)?;
            img.clone()
        }
        None => Image::zeros(w, h, c),
    };
    let mut z_tv = if use_tv {
        Some(match &init.z0 {
            Some(img) => img.clone(),
            None => Image::zeros(w, h, 2 * c),
        })
    } else {
        None
    };
    let mut z_cross = if use_cross {
        Some(match &init.z_cross0 {
            Some(img) => img.clone(),
            None => Image::zeros(w, h, 12),
        })
    } else {
        None
    };
    let inv_gamma = 1.0 / cfg.gamma;
    for k in 1..=cfg.max_iters {
        let z_tv_new = match &z_tv {
            Some(z) => {
                let d_ubar = grad_forward(&u_bar);
                let arg = z.scale(inv_gamma).add(&d_ubar)?;
                let shrunk = prox_l21(cfg.beta_tv * inv_gamma, &arg)?;
                Some(z.axpy(cfg.gamma, &d_ubar)?.axpy(-cfg.gamma, &shrunk)?)
            }
            None => None,
        };
        let z_cross_new = match &z_cross {
            Some(z) => {
                let d_ubar = channel_grad_diff_forward(&u_bar)?;
                let arg = z.scale(inv_gamma).add(&d_ubar)?;
                let shrunk = prox_l1(cfg.beta_cross * inv_gamma, &arg)?;
                Some(z.axpy(cfg.gamma, &d_ubar)?.axpy(-cfg.gamma, &shrunk)?)
            }
            None => None,
        };
        let y_arg = y.scale(inv_gamma).add(&u_bar)?;
        if !y_arg.is_all_finite() {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        let g = match apply_denoiser(&cfg.denoiser, &y_arg)? {
            Ok(img) => img,
            Err(()) => return Ok(tracker.report(u, StopReason::NonFinite)),
        };
        let y_new = y.axpy(cfg.gamma, &u_bar)?.axpy(-cfg.gamma, &g)?;
        let mut v = u.axpy(-cfg.tau, &y_new)?;
        if let Some(z) = &z_tv_new {
            v = v.axpy(-cfg.tau, &grad_adjoint(z)?)?;
        }
        if let Some(z) = &z_cross_new {
            v = v.axpy(-cfg.tau, &channel_grad_diff_adjoint(z)?)?;
        }
        let u_new = cfg.data.prox(cfg.tau, &v)?;
        let u_bar_new = u_new.axpy(cfg.theta, &u_new.sub(&u)?)?;
        let mut finite = all_finite(&[&u_new, &y_new, &u_bar_new]);
        if let Some(z) = &z_tv_new {
            finite &= z.is_all_finite();
        }
        if let Some(z) = &z_cross_new {
            finite &= z.is_all_finite();
        }
        if !finite {
            return Ok(tracker.report(u, StopReason::NonFinite));
        }
        match tracker.accept(k, &u, &u_new)? {
            Step::Stop(reason) => return Ok(tracker.report(u_new, reason)),
            Step::Continue => {
                u = u_new;
                u_bar = u_bar_new;
                y = y_new;
                z_tv = z_tv_new;
                z_cross = z_cross_new;
            }
        }
    }
    Ok(tracker.report(u, StopReason::MaxIters))
}

/// Dispatch on the configured scheme kind.
pub fn run_scheme(cfg: &SchemeConfig, u0: &Image) -> Result<RunReport> {
    match cfg.scheme {
        SchemeKind::Pg => run_pg(cfg, u0),
        SchemeKind::Admm => run_admm(cfg, u0),
        SchemeKind::Pdhg1 => run_pdhg1(cfg, u0),
        SchemeKind::Pdhg2 => run_pdhg2(cfg, u0),
        SchemeKind::StackedPdhg => run_stacked_pdhg(cfg, u0),
    }
}

/// Per-iteration history as CSV. Optional columns stay empty when untracked.
pub fn history_csv(report: &RunReport) -> String {
    let mut out = String::from("k,rel_change,data_energy,fixed_point_residual,psnr_vs_reference\n");
    for row in &report.history {
        let fp = row.fixed_point_residual.map(|v| v.to_string()).unwrap_or_default();
        let p = row.psnr_vs_reference.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", row.k, row.rel_change, row.data_energy, fp, p));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::Denoiser;
    use crate::image::RngSeed;
    use crate::linop::{random_centered_image, ConvKernel};

    fn rand_img(w: usize, h: usize, c: usize, seed: u64) -> Image {
        random_centered_image(w, h, c, RngSeed(seed)).map(|v| 0.5 + 0.6 * v)
    }

    fn conv_problem(n: usize, alpha: f64, seed: u64) -> DataTerm {
        let k = ConvKernel::gaussian(3, 0.8).unwrap();
        let op = LinearOperator::circular_conv(k, n, n, 1).unwrap();
        let clean = rand_img(n, n, 1, seed);
        let f = op.forward(&clean).unwrap();
        DataTerm::new(op, f, alpha).unwrap()
    }

    fn identity_problem(n: usize, alpha: f64, seed: u64) -> DataTerm {
        let f = rand_img(n, n, 1, seed);
        DataTerm::new(LinearOperator::identity(n, n, 1), f, alpha).unwrap()
    }

    #[test]
    fn pg_identity_converges_to_observation() {
        let data = identity_problem(8, 1.0, 1);
        let f = data.observation().clone();
        let mut cfg = SchemeConfig::new(SchemeKind::Pg, data, Denoiser::Identity);
        cfg.tau = 0.5;
        cfg.max_iters = 200;
        cfg.tol = 0.0;
        let rep = run_pg(&cfg, &Image::zeros(8, 8, 1)).unwrap();
        assert!(rep.u.sub(&f).unwrap().norm_l2() <= 1e-6);
        assert_eq!(rep.history.len(), rep.iterations);
    }

    #[test]
    fn pg_with_tv_prox_descends_energy() {
        let data = conv_problem(8, 2.0, 2);
        let lambda_reg = 0.02; // target weight of the TV term
        let tau = 0.4; // < 1/(alpha*||A||^2) = 0.5
        let mut cfg =
            SchemeConfig::new(SchemeKind::Pg, data.clone(), Denoiser::tv_prox(tau * lambda_reg));
        cfg.tau = tau;
        cfg.max_iters = 40;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 1, 3);
        let rep = run_pg(&cfg, &u0).unwrap();
        let energy = |u: &Image| {
            data.energy(u).unwrap() + crate::denoise::tv_energy(lambda_reg, u, u).unwrap()
                - 0.0 // tv_energy includes (1/2)||u-u||^2 = 0
        };
        let mut last = energy(&u0);
        for it in &rep.iterates {
            let e = energy(it);
            assert!(e <= last + 1e-9, "energy rose: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn pdhg2_identity_denoiser_is_repeated_prox() {
        let data = conv_problem(8, 3.0, 4);
        let mut cfg = SchemeConfig::new(SchemeKind::Pdhg2, data.clone(), Denoiser::Identity);
        cfg.tau = 0.3;
        cfg.gamma = 1.7;
        cfg.max_iters = 12;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 1, 5);
        let rep = run_pdhg2(&cfg, &u0).unwrap();
        // oracle: y stays zero, so u_{k+1} = prox(tau, u_k)
        let mut u = u0.clone();
        for it in &rep.iterates {
            u = data.prox(0.3, &u).unwrap();
            assert!(it.sub(&u).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn pdhg1_identity_denoiser_keeps_y_zero() {
        let data = conv_problem(8, 2.0, 6);
        let mut cfg = SchemeConfig::new(SchemeKind::Pdhg1, data.clone(), Denoiser::Identity);
        cfg.tau = 0.4;
        cfg.gamma = 1.2;
        cfg.max_iters = 10;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 1, 7);
        let rep = run_pdhg1(&cfg, &u0).unwrap();
        // manual loop without the y variable (it cancels when G = Id)
        let (mut u, mut u_bar) = (u0.clone(), u0.clone());
        let mut z = Image::zeros(8, 8, 1);
        for it in &rep.iterates {
            let a_ubar = data.operator().forward(&u_bar).unwrap();
            let z_prox =
                data.prox_range(1.0 / 1.2, &z.scale(1.0 / 1.2).add(&a_ubar).unwrap()).unwrap();
            z = z.axpy(1.2, &a_ubar).unwrap().axpy(-1.2, &z_prox).unwrap();
            let u_new =
                u.axpy(-0.4, &data.operator().adjoint(&z).unwrap()).unwrap();
            u_bar = u_new.axpy(1.0, &u_new.sub(&u).unwrap()).unwrap();
            u = u_new;
            assert!(it.sub(&u).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn stacked_without_priors_equals_pdhg2() {
        let data = conv_problem(8, 2.0, 8);
        let mut cfg = SchemeConfig::new(SchemeKind::Pdhg2, data, Denoiser::tv_prox(0.05));
        cfg.tau = 0.5;
        cfg.gamma = 1.3;
        cfg.max_iters = 15;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 1, 9);
        let a = run_pdhg2(&cfg, &u0).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.scheme = SchemeKind::StackedPdhg;
        let b = run_stacked_pdhg(&cfg2, &u0).unwrap();
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            let rel = x.sub(y).unwrap().norm_l2() / x.norm_l2().max(REL_EPS);
            assert!(rel <= 1e-12);
        }
    }

    #[test]
    fn admm_gamma_scaling_identity() {
        let data = conv_problem(8, 2.4, 10);
        let gamma = 3.0;
        let mut a = SchemeConfig::new(SchemeKind::Admm, data.clone(), Denoiser::tv_prox(0.03));
        a.gamma = gamma;
        a.max_iters = 20;
        a.tol = 0.0;
        a.capture_iterates = true;
        let mut b = a.clone();
        b.gamma = 1.0;
        b.data = data.with_alpha(2.4 / gamma).unwrap();
        let u0 = rand_img(8, 8, 1, 11);
        let ra = run_admm(&a, &u0).unwrap();
        let rb = run_admm(&b, &u0).unwrap();
        for (x, y) in ra.iterates.iter().zip(&rb.iterates) {
            let rel = x.sub(y).unwrap().norm_l2() / x.norm_l2().max(REL_EPS);
            assert!(rel <= 1e-10, "rel {rel}");
        }
    }

    #[test]
    fn rescale_preserves_pdhg2_iterates() {
        let data = conv_problem(8, 2.0, 12);
        let mut cfg = SchemeConfig::new(SchemeKind::Pdhg2, data, Denoiser::tv_prox(0.04));
        cfg.tau = 0.2;
        cfg.gamma = 4.0;
        cfg.max_iters = 20;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 1, 13);
        let base = run_pdhg2(&cfg, &u0).unwrap();
        for new_gamma in [0.5, 1.0, 9.0] {
            let cfg2 = rescale_config(&cfg, new_gamma).unwrap();
            assert!((cfg2.tau * cfg2.gamma - cfg.tau * cfg.gamma).abs() < 1e-15);
            let other = run_pdhg2(&cfg2, &u0).unwrap();
            for (x, y) in base.iterates.iter().zip(&other.iterates) {
                let rel = x.sub(y).unwrap().norm_l2() / x.norm_l2().max(REL_EPS);
                assert!(rel <= 1e-12, "gamma {new_gamma}: rel {rel}");
            }
        }
        // no-op rescale returns the config unchanged
        let same = rescale_config(&cfg, cfg.gamma).unwrap();
        assert_eq!(same.tau, cfg.tau);
        assert_eq!(same.data.alpha(), cfg.data.alpha());
        assert!(rescale_config(&SchemeConfig::new(SchemeKind::Pg, conv_problem(4, 1.0, 1), Denoiser::Identity), 2.0).is_err());
    }

    #[test]
    fn rescale_preserves_stacked_iterates() {
        let k = ConvKernel::gaussian(3, 0.8).unwrap();
        let op = LinearOperator::circular_conv(k, 8, 8, 3).unwrap();
        let clean = rand_img(8, 8, 3, 14);
        let f = op.forward(&clean).unwrap();
        let data = DataTerm::new(op, f, 2.0).unwrap();
        let mut cfg = SchemeConfig::new(SchemeKind::StackedPdhg, data, Denoiser::GaussianSmooth { std: 0.8 });
        cfg.tau = 0.05;
        cfg.gamma = 2.0;
        cfg.beta_tv = 0.01;
        cfg.beta_cross = 0.004;
        cfg.max_iters = 15;
        cfg.tol = 0.0;
        cfg.capture_iterates = true;
        let u0 = rand_img(8, 8, 3, 15);
        let base = run_stacked_pdhg(&cfg, &u0).unwrap();
        let cfg2 = rescale_config(&cfg, 1.0).unwrap();
        assert!((cfg2.data.alpha() - 1.0).abs() < 1e-15);
        assert!((cfg2.beta_tv - 0.005).abs() < 1e-18);
        let other = run_stacked_pdhg(&cfg2, &u0).unwrap();
        for (x, y) in base.iterates.iter().zip(&other.iterates) {
            let rel = x.sub(y).unwrap().norm_l2() / x.norm_l2().max(REL_EPS);
            assert!(rel <= 1e-12, "rel {rel}");
        }
    }

    #[test]
    fn fixed_point_residual_cases() {
        // identity denoiser at the least-squares solution: zero residual
        let data = identity_problem(6, 2.0, 16);
        let f = data.observation().clone();
        let cfg = SchemeConfig::new(SchemeKind::Pg, data, Denoiser::Identity);
        assert!(fixed_point_residual(&cfg, &f).unwrap() < 1e-10);
        // generic point with a nontrivial denoiser: strictly positive
        let data2 = conv_problem(6, 2.0, 17);
        let cfg2 = SchemeConfig::new(SchemeKind::Pdhg2, data2, Denoiser::GaussianSmooth { std: 1.0 });
        let u = rand_img(6, 6, 1, 18);
        assert!(fixed_point_residual(&cfg2, &u).unwrap() > 1e-4);
    }

    #[test]
    fn fixed_point_constructions_stay_put() {
        // converge PG, then verify the supplement initializations keep each
        // scheme stationary (t conventions coinciding via gamma = 1/tau)
        let data = conv_problem(8, 2.0, 19);
        let tau = 0.3;
        let denoiser = Denoiser::TvProx { lambda: 0.01, inner_iters: 4000, inner_tol: 1e-13 };
        let mut pg = SchemeConfig::new(SchemeKind::Pg, data.clone(), denoiser.clone());
        pg.tau = tau;
        pg.max_iters = 3000;
        pg.tol = 1e-13;
        let rep = run_pg(&pg, &data.observation().clone()).unwrap();
        assert_eq!(rep.stop, StopReason::Tol);
        let u_star = rep.u.clone();
        let y_init = data.gradient(&u_star).unwrap().scale(-1.0);
        let z_init = data
            .operator()
            .forward(&u_star)
            .unwrap()
            .sub(data.observation())
            .unwrap()
            .scale(data.alpha());

        let budget = 8;
        let move_bound = 1e-8;

        let mut admm = pg.clone();
        admm.scheme = SchemeKind::Admm;
        admm.gamma = 1.0 / tau;
        admm.max_iters = budget;
        admm.tol = 0.0;
        admm.capture_iterates = true;
        let init = InitOverrides { y0: Some(y_init.clone()), ..Default::default() };
        let ra = run_admm_init(&admm, &u_star, &init).unwrap();
        let mut prev = u_star.clone();
        for it in &ra.iterates {
            assert!(it.sub(&prev).unwrap().norm_l2() <= move_bound, "admm moved");
            prev = it.clone();
        }

        let mut p1 = admm.clone();
        p1.scheme = SchemeKind::Pdhg1;
        let init1 = InitOverrides {
            y0: Some(y_init.clone()),
            z0: Some(z_init.clone()),
            u_bar0: Some(u_star.clone()),
            ..Default::default()
        };
        let r1 = run_pdhg1_init(&p1, &u_star, &init1).unwrap();
        prev = u_star.clone();
        for it in &r1.iterates {
            assert!(it.sub(&prev).unwrap().norm_l2() <= move_bound, "pdhg1 moved");
            prev = it.clone();
        }

        let mut p2 = admm.clone();
        p2.scheme = SchemeKind::Pdhg2;
        let init2 = InitOverrides {
            y0: Some(y_init.clone()),
            u_bar0: Some(u_star.clone()),
            ..Default::default()
        };
        let r2 = run_pdhg2_init(&p2, &u_star, &init2).unwrap();
        prev = u_star.clone();
        for it in &r2.iterates {
            assert!(it.sub(&prev).unwrap().norm_l2() <= move_bound, "pdhg2 moved");
            prev = it.clone();
        }
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let data = identity_problem(6, 1e12, 20);
        let mut cfg = SchemeConfig::new(SchemeKind::Pg, data, Denoiser::Identity);
        cfg.tau = 1.0;
        cfg.max_iters = 100;
        cfg.tol = 0.0;
        let rep = run_pg(&cfg, &Image::zeros(6, 6, 1)).unwrap();
        assert_eq!(rep.stop, StopReason::NonFinite);
        assert!(rep.u.is_all_finite());
        assert_eq!(rep.history.len(), rep.iterations);
    }

    #[test]
    fn schemes_stay_finite_100_iterations() {
        let data = conv_problem(8, 4.0, 21);
        let u0 = data.observation().clone();
        for kind in [
            SchemeKind::Pg,
            SchemeKind::Admm,
            SchemeKind::Pdhg1,
            SchemeKind::Pdhg2,
            SchemeKind::StackedPdhg,
        ] {
            let mut cfg = SchemeConfig::new(kind, data.clone(), Denoiser::GaussianSmooth { std: 0.7 });
            cfg.tau = 0.1;
            cfg.gamma = 1.0;
            cfg.beta_tv = if kind == SchemeKind::StackedPdhg { 0.01 } else { 0.0 };
            cfg.max_iters = 100;
            cfg.tol = 0.0;
            let rep = run_scheme(&cfg, &u0).unwrap();
            assert_eq!(rep.stop, StopReason::MaxIters, "{}", kind.name());
            assert!(rep.u.is_all_finite());
        }
    }

    #[test]
    fn history_csv_round_trips() {
        let data = conv_problem(6, 2.0, 22);
        let clean = rand_img(6, 6, 1, 23);
        let mut cfg = SchemeConfig::new(SchemeKind::Pdhg2, data, Denoiser::GaussianSmooth { std: 0.6 });
        cfg.max_iters = 5;
        cfg.tol = 0.0;
        cfg.track_fixed_point = true;
        cfg.psnr_reference = Some(clean);
        let rep = run_pdhg2(&cfg, &rand_img(6, 6, 1, 24)).unwrap();
        let csv = history_csv(&rep);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,rel_change,data_energy,fixed_point_residual,psnr_vs_reference"
        );
        for (row, line) in rep.history.iter().zip(lines) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 5);
            assert_eq!(cells[0].parse::<usize>().unwrap(), row.k);
            assert_eq!(cells[1].parse::<f64>().unwrap(), row.rel_change);
            assert_eq!(cells[2].parse::<f64>().unwrap(), row.data_energy);
            assert_eq!(cells[3].parse::<f64>().unwrap(), row.fixed_point_residual.unwrap());
            assert_eq!(cells[4].parse::<f64>().unwrap(), row.psnr_vs_reference.unwrap());
        }
    }

    #[test]
    fn step_size_warning_fires_when_product_too_large() {
        let data = conv_problem(8, 1.0, 25);
        let mut cfg = SchemeConfig::new(SchemeKind::StackedPdhg, data, Denoiser::Identity);
        cfg.beta_tv = 0.1;
        cfg.tau = 1.0;
        cfg.gamma = 1.0;
        assert!(cfg.step_size_warning().unwrap().is_some());
        cfg.tau = cfg.default_tau().unwrap();
        assert!(cfg.step_size_warning().unwrap().is_none());
    }
}
