//! Flag / config-file / default resolution and construction of the solver
//! pieces the commands share.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pnp_core::cnn::load_model;
use pnp_core::denoise::{Denoiser, NlmParams};
use pnp_core::harness::config::parse_config;
use pnp_core::harness::scenes::{synth_scene, SceneKind};
use pnp_core::image::{Image, RngSeed};
use pnp_core::io::{read_image, write_pfm, write_pnm, PnmDepth};
use pnp_core::linop::BayerPattern;
use pnp_core::scheme::SchemeKind;
use pnp_core::{Error, Result};

use crate::args::{SolverFlags, SourceFlags};

/// Keys the config file may contain; anything else is rejected with a
/// diagnostic naming the key.
const KNOWN_KEYS: &[&str] = &[
    "scheme", "tau", "gamma", "theta", "alpha", "beta_tv", "beta_cross", "max_iters", "tol",
    "seed", "denoiser", "nlm_h", "nlm_patch", "nlm_search", "nlm_sigma_est", "tv_lambda",
    "tv_iters", "tv_tol", "gauss_std", "weights", "kernel", "sigma", "crop", "alphas",
    "beta_tvs", "beta_crosses", "sigmas", "pattern", "input", "output", "reference", "csv",
    "synthetic", "size", "channels",
];

/// Solver flags overlaid on the config file, with typed accessors that fall
/// back to defaults.
pub struct Settings {
    flags: SolverFlags,
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(flags: &SolverFlags) -> Result<Settings> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let map = parse_config(&text)
                    .map_err(|e| Error::format(path, e.to_string()))?;
                for key in map.keys() {
                    if !KNOWN_KEYS.contains(&key.as_str()) {
                        return Err(Error::format(path, format!("unknown config key {key:?}")));
                    }
                }
                map
            }
            None => BTreeMap::new(),
        };
        Ok(Settings { flags: flags.clone(), file })
    }

    fn file_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("config key {key} has unparseable value {raw:?}"))
            }),
            None => Ok(None),
        }
    }

    fn pick<T: std::str::FromStr + Clone>(&self, flag: &Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        Ok(self.file_value(key)?.unwrap_or(default))
    }

    fn pick_opt<T: std::str::FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> Result<Option<T>> {
        if let Some(v) = flag {
            return Ok(Some(v.clone()));
        }
        self.file_value(key)
    }

    pub fn scheme(&self) -> Result<SchemeKind> {
        let name: String = self.pick(&self.flags.scheme, "scheme", "stacked".into())?;
        match name.as_str() {
            "pg" => Ok(SchemeKind::Pg),
            "admm" => Ok(SchemeKind::Admm),
            "pdhg1" => Ok(SchemeKind::Pdhg1),
            "pdhg2" => Ok(SchemeKind::Pdhg2),
            "stacked" => Ok(SchemeKind::StackedPdhg),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?} (expected pg, admm, pdhg1, pdhg2 or stacked)"
            ))),
        }
    }

    pub fn tau(&self) -> Result<Option<f64>> {
        self.pick_opt(&self.flags.tau, "tau")
    }

    pub fn gamma(&self) -> Result<f64> {
        self.pick(&self.flags.gamma, "gamma", 1.0)
    }

    pub fn theta(&self) -> Result<f64> {
        self.pick(&self.flags.theta, "theta", 1.0)
    }

    pub fn alpha(&self) -> Result<f64> {
        self.pick(&self.flags.alpha, "alpha", 64.0)
    }

    pub fn beta_tv(&self) -> Result<f64> {
        self.pick(&self.flags.beta_tv, "beta_tv", 0.0)
    }

    pub fn beta_cross(&self) -> Result<f64> {
        self.pick(&self.flags.beta_cross, "beta_cross", 0.0)
    }

    pub fn max_iters(&self) -> Result<usize> {
        self.pick(&self.flags.max_iters, "max_iters", 30)
    }

    pub fn tol(&self) -> Result<f64> {
        self.pick(&self.flags.tol, "tol", 1e-6)
    }

    pub fn seed(&self) -> Result<RngSeed> {
        Ok(RngSeed(self.pick(&self.flags.seed, "seed", 0u64)?))
    }

    pub fn kernel_spec(&self, flag: &Option<String>, default: &str) -> Result<String> {
        self.pick(flag, "kernel", default.to_string())
    }

    pub fn noise_sigma(&self, flag: &Option<f64>, default: f64) -> Result<f64> {
        self.pick(flag, "sigma", default)
    }

    pub fn crop(&self, flag: &Option<usize>, default: usize) -> Result<usize> {
        self.pick(flag, "crop", default)
    }

    pub fn pattern(&self, flag: &Option<String>) -> Result<BayerPattern> {
        let name: String = self.pick(flag, "pattern", "rggb".into())?;
        parse_pattern(&name)
    }

    pub fn list_f64(&self, flag: &Option<String>, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let raw: Option<String> = self.pick_opt(flag, key)?;
        match raw {
            Some(text) => parse_f64_list(&text),
            None => Ok(default.to_vec()),
        }
    }

    pub fn denoiser(&self) -> Result<Denoiser> {
        let name: String = self.pick(&self.flags.denoiser, "denoiser", "nlm".into())?;
        match name.as_str() {
            "identity" => Ok(Denoiser::Identity),
            "gauss" => {
                let std = self.pick(&self.flags.gauss_std, "gauss_std", 0.8)?;
                Ok(Denoiser::GaussianSmooth { std })
            }
            "nlm" => {
                let d = NlmParams::default();
                let params = NlmParams::new(
                    self.pick(&self.flags.nlm_patch, "nlm_patch", d.patch_radius)?,
                    self.pick(&self.flags.nlm_search, "nlm_search", d.search_radius)?,
                    self.pick(&self.flags.nlm_h, "nlm_h", d.h)?,
                    self.pick(&self.flags.nlm_sigma_est, "nlm_sigma_est", d.sigma_est)?,
                )?;
                Ok(Denoiser::Nlm(params))
            }
            "tv" => Ok(Denoiser::TvProx {
                lambda: self.pick(&self.flags.tv_lambda, "tv_lambda", 0.02)?,
                inner_iters: self.pick(&self.flags.tv_iters, "tv_iters", 500)?,
                inner_tol: self.pick(&self.flags.tv_tol, "tv_tol", 1e-8)?,
            }),
            "cnn" => {
                let path: Option<PathBuf> = self.pick_opt(&self.flags.weights, "weights")?;
                let path = path.ok_or_else(|| {
                    Error::InvalidArgument("the cnn denoiser needs --weights FILE".into())
                })?;
                Ok(Denoiser::Cnn(load_model(&path)?))
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown denoiser {other:?} (expected identity, gauss, nlm, tv or cnn)"
            ))),
        }
    }
}

pub fn parse_pattern(name: &str) -> Result<BayerPattern> {
    let layout = match name {
        "rggb" => [[0, 1], [1, 2]],
        "grbg" => [[1, 0], [2, 1]],
        "gbrg" => [[1, 2], [0, 1]],
        "bggr" => [[2, 1], [1, 0]],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown pattern {other:?} (expected rggb, grbg, gbrg or bggr)"
            )))
        }
    };
    BayerPattern::new(layout)
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in list")))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(Error::InvalidArgument("empty number list".into()));
    }
    Ok(vals)
}

/// Resolve --in / --synthetic into an image.
pub fn load_source(src: &SourceFlags, settings: &Settings, default_channels: usize) -> Result<Image> {
    if let Some(path) = &src.input {
        return read_image(path);
    }
    let kind_name: String = settings.pick(&src.synthetic, "synthetic", String::new())?;
    if kind_name.is_empty() {
        return Err(Error::InvalidArgument(
            "no input: pass --in PATH or --synthetic KIND".into(),
        ));
    }
    let kind = SceneKind::parse(&kind_name)?;
    let size = settings.pick(&src.size, "size", 64usize)?;
    let channels = settings.pick(&src.channels, "channels", default_channels)?;
    Ok(synth_scene(kind, size, size, channels, settings.seed()?.derive(101)))
}

/// Pick the writer from the extension: .pfm is float, anything else Netpbm
/// at the requested depth.
pub fn write_output(path: &std::path::Path, img: &Image, depth: Option<u32>) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("pfm") {
        return write_pfm(path, img);
    }
    let depth = match depth.unwrap_or(8) {
        8 => PnmDepth::Eight,
        16 => PnmDepth::Sixteen,
        other => {
            return Err(Error::InvalidArgument(format!("depth must be 8 or 16, got {other}")))
        }
    };
    write_pnm(path, img, depth)
}
