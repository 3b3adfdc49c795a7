//! Command-line surface. Solver/denoiser flags are tri-state (flag beats
//! config file beats default), so they parse as `Option`s and list their
//! defaults in the help text.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "pnp-solve",
    version,
    about = "Plug-and-play inverse imaging: splitting schemes with interchangeable denoisers"
)]
pub struct Cli {
    /// Cap internal parallelism at N threads; 0 uses all cores. Results are
    /// identical for every N.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Per-iteration log lines on stderr.
    #[arg(long, short, global = true, default_value_t = false)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply a denoiser to an image once
    Denoise(DenoiseArgs),
    /// Blur+noise degradation and plug-and-play reconstruction
    Deconvolve(DeconvolveArgs),
    /// Bayer sampling and plug-and-play reconstruction
    Demosaick(DemosaickArgs),
    /// Exhaustive search over fidelity/prior weights
    GridSearch(GridSearchArgs),
    /// Best fidelity weight as a function of denoiser strength
    AlphaSigmaSweep(AlphaSigmaSweepArgs),
    /// Verify the shared fixed point across all four scheme conventions
    FixedPointCheck(FixedPointCheckArgs),
    /// Print the layer table of a PNPW weights file
    WeightsInfo(WeightsInfoArgs),
}

/// Where the (clean or observed) image comes from.
#[derive(Args, Debug, Clone)]
pub struct SourceFlags {
    /// Input image path (.pgm, .ppm or .pfm)
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,

    /// Synthetic scene instead of --in: cartoon | edges | chart
    #[arg(long, conflicts_with = "input", value_name = "KIND")]
    pub synthetic: Option<String>,

    /// Side length of the synthetic scene [default: 64]
    #[arg(long, value_name = "PIXELS")]
    pub size: Option<usize>,

    /// Channel count of the synthetic scene [default: 1; demosaicking: 3]
    #[arg(long, value_name = "N")]
    pub channels: Option<usize>,
}

/// Scheme, step sizes, weights, stopping, and the config file they may come
/// from. Precedence: flag > config file > default.
#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    /// Flat key=value config file; flags override its entries
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Scheme: pg | admm | pdhg1 | pdhg2 | stacked [default: stacked]
    #[arg(long)]
    pub scheme: Option<String>,

    /// Primal step size [default: 0.95 / (gamma * ||[I,-D^T]||^2); pg: 0.9/(alpha*||A||^2)]
    #[arg(long)]
    pub tau: Option<f64>,

    /// Dual step size [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Extrapolation weight [default: 1]
    #[arg(long)]
    pub theta: Option<f64>,

    /// Data fidelity weight [default: 64]
    #[arg(long)]
    pub alpha: Option<f64>,

    /// TV prior weight (stacked scheme) [default: 0]
    #[arg(long)]
    pub beta_tv: Option<f64>,

    /// Cross-channel prior weight (stacked scheme, color only) [default: 0]
    #[arg(long)]
    pub beta_cross: Option<f64>,

    /// Iteration cap [default: 30]
    #[arg(long)]
    pub max_iters: Option<usize>,

    /// Relative-change stopping threshold [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,

    /// Noise/scene RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Denoiser: identity | gauss | nlm | tv | cnn [default: nlm]
    #[arg(long)]
    pub denoiser: Option<String>,

    /// NLM filtering strength [default: 0.1]
    #[arg(long)]
    pub nlm_h: Option<f64>,

    /// NLM patch radius [default: 1]
    #[arg(long)]
    pub nlm_patch: Option<usize>,

    /// NLM search radius [default: 5]
    #[arg(long)]
    pub nlm_search: Option<usize>,

    /// NLM noise compensation [default: 0]
    #[arg(long)]
    pub nlm_sigma_est: Option<f64>,

    /// Exact TV prox strength [default: 0.02]
    #[arg(long)]
    pub tv_lambda: Option<f64>,

    /// Exact TV prox inner iteration cap [default: 500]
    #[arg(long)]
    pub tv_iters: Option<usize>,

    /// Exact TV prox inner tolerance [default: 1e-8]
    #[arg(long)]
    pub tv_tol: Option<f64>,

    /// Gaussian-smoothing denoiser standard deviation [default: 0.8]
    #[arg(long)]
    pub gauss_std: Option<f64>,

    /// PNPW weights file for the cnn denoiser
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub source: SourceFlags,

    /// Output image path
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Clean reference; prints PSNR when given
    #[arg(long, value_name = "PATH")]
    pub reference: Option<PathBuf>,

    /// Add Gaussian noise of this level before denoising [default: 0]
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Output bit depth for pgm/ppm: 8 | 16 [default: 8]
    #[arg(long)]
    pub depth: Option<u32>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct DeconvolveArgs {
    #[command(flatten)]
    pub source: SourceFlags,

    /// Blur kernel: gaussian:STD | box:SIZE | motion:LEN:ANGLE | file:PATH [default: gaussian:1.6]
    #[arg(long)]
    pub kernel: Option<String>,

    /// Gaussian noise level of the synthesized degradation [default: 0.01]
    #[arg(long, conflicts_with = "observed")]
    pub sigma: Option<f64>,

    /// Treat --in as the already-degraded observation (no synthesis)
    #[arg(long, default_value_t = false)]
    pub observed: bool,

    /// Output image path
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Clean reference for scoring (observed mode)
    #[arg(long, value_name = "PATH")]
    pub reference: Option<PathBuf>,

    /// Also write the degraded input here
    #[arg(long, value_name = "PATH")]
    pub degraded_out: Option<PathBuf>,

    /// Per-iteration history CSV path
    #[arg(long, value_name = "PATH")]
    pub history_csv: Option<PathBuf>,

    /// Crop border for scoring [default: 12]
    #[arg(long)]
    pub crop: Option<usize>,

    /// Output bit depth for pgm/ppm: 8 | 16 [default: 8]
    #[arg(long)]
    pub depth: Option<u32>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct DemosaickArgs {
    #[command(flatten)]
    pub source: SourceFlags,

    /// CFA layout: rggb | grbg | gbrg | bggr [default: rggb]
    #[arg(long)]
    pub pattern: Option<String>,

    /// Treat --in as the observed single-channel mosaic
    #[arg(long, default_value_t = false)]
    pub observed: bool,

    /// Output image path
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Clean reference for scoring (observed mode)
    #[arg(long, value_name = "PATH")]
    pub reference: Option<PathBuf>,

    /// Per-iteration history CSV path
    #[arg(long, value_name = "PATH")]
    pub history_csv: Option<PathBuf>,

    /// Crop border for scoring [default: 5]
    #[arg(long)]
    pub crop: Option<usize>,

    /// Output bit depth for pgm/ppm: 8 | 16 [default: 8]
    #[arg(long)]
    pub depth: Option<u32>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct GridSearchArgs {
    /// Problem family: deconv | demosaick
    #[arg(long)]
    pub task: String,

    #[command(flatten)]
    pub source: SourceFlags,

    /// Comma-separated fidelity weights, e.g. 8,16,32 [default: 8,16,32,64,128]
    #[arg(long)]
    pub alphas: Option<String>,

    /// Comma-separated TV weights [default: 0]
    #[arg(long)]
    pub beta_tvs: Option<String>,

    /// Comma-separated cross-channel weights [default: 0]
    #[arg(long)]
    pub beta_crosses: Option<String>,

    /// Blur kernel of the deconv task [default: gaussian:1.6]
    #[arg(long)]
    pub kernel: Option<String>,

    /// Noise level of the deconv task [default: 0.01]
    #[arg(long)]
    pub sigma: Option<f64>,

    /// CFA layout of the demosaick task [default: rggb]
    #[arg(long)]
    pub pattern: Option<String>,

    /// Crop border for scoring [default: 12; demosaick: 5]
    #[arg(long)]
    pub crop: Option<usize>,

    /// Write the full cell table here as CSV
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    /// Write the best reconstruction here
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct AlphaSigmaSweepArgs {
    #[command(flatten)]
    pub source: SourceFlags,

    /// Comma-separated denoiser strengths [default: 0.02,0.04,0.06,0.08,0.1]
    #[arg(long)]
    pub sigmas: Option<String>,

    /// Comma-separated fidelity weights to search per strength
    /// [default: 0.00125 * 4^k, k = 0..8]
    #[arg(long)]
    pub alphas: Option<String>,

    /// Blur kernel of the underlying deconvolution [default: gaussian:1.6]
    #[arg(long)]
    pub kernel: Option<String>,

    /// Noise level of the underlying deconvolution [default: 0.04]
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Crop border for scoring [default: 12]
    #[arg(long)]
    pub crop: Option<usize>,

    /// Write the (sigma, alpha*, psnr) table here as CSV
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct FixedPointCheckArgs {
    #[command(flatten)]
    pub source: SourceFlags,

    /// Blur kernel of the test problem [default: gaussian:0.8]
    #[arg(long)]
    pub kernel: Option<String>,

    /// Noise level of the test problem [default: 0.02]
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Convergence target for the fixed-point construction [default: 1e-12]
    #[arg(long)]
    pub fp_tol: Option<f64>,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct WeightsInfoArgs {
    /// PNPW weights file
    pub file: PathBuf,
}
