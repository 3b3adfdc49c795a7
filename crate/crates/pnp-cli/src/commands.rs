//! Implementations of the subcommands.

use std::path::Path;

use pnp_core::cnn::load_model;
use pnp_core::denoise::Denoiser;
use pnp_core::harness::{
    alpha_sigma_csv, alpha_sigma_sweep, bilinear_demosaick, build_deconv, build_demosaick,
    crop_scored_psnr, grid_csv, grid_search, DeconvExperiment, DemosaickExperiment, GridProblem,
    GridSearchSpec, KernelSpec,
};
use pnp_core::image::{add_gaussian_noise, clamp01, psnr, psnr_per_channel, Image};
use pnp_core::io::read_image;
use pnp_core::linop::operator_norm_default;
use pnp_core::prox::DataTerm;
use pnp_core::scheme::{
    fixed_point_residual, history_csv, run_pg, run_scheme, RunReport, SchemeConfig, SchemeKind,
    StopReason,
};
use pnp_core::{Error, Result};

use crate::args::{
    AlphaSigmaSweepArgs, Cli, Command, DeconvolveArgs, DemosaickArgs, DenoiseArgs,
    FixedPointCheckArgs, GridSearchArgs, WeightsInfoArgs,
};
use crate::settings::{load_source, write_output, Settings};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Denoise(a) => denoise(cli, a),
        Command::Deconvolve(a) => deconvolve(cli, a),
        Command::Demosaick(a) => demosaick(cli, a),
        Command::GridSearch(a) => grid_search_cmd(cli, a),
        Command::AlphaSigmaSweep(a) => sweep(cli, a),
        Command::FixedPointCheck(a) => fixed_point_check(cli, a),
        Command::WeightsInfo(a) => weights_info(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolve tau: explicit flag/config wins, then the scheme-appropriate rule.
fn resolve_tau(settings: &Settings, cfg: &SchemeConfig) -> Result<f64> {
    if let Some(tau) = settings.tau()? {
        return Ok(tau);
    }
    match cfg.scheme {
        SchemeKind::Pg => {
            let norm = operator_norm_default(cfg.data.operator())?;
            Ok(0.9 / (cfg.data.alpha() * norm * norm).max(1e-12))
        }
        _ => cfg.default_tau(),
    }
}

fn build_scheme_config(
    settings: &Settings,
    data: DataTerm,
    denoiser: Denoiser,
    reference: Option<Image>,
    track_fixed_point: bool,
) -> Result<SchemeConfig> {
    let mut cfg = SchemeConfig::new(settings.scheme()?, data, denoiser);
    cfg.gamma = settings.gamma()?;
    cfg.theta = settings.theta()?;
    cfg.beta_tv = settings.beta_tv()?;
    cfg.beta_cross = settings.beta_cross()?;
    cfg.max_iters = settings.max_iters()?;
    cfg.tol = settings.tol()?;
    cfg.psnr_reference = reference;
    cfg.track_fixed_point = track_fixed_point;
    cfg.tau = resolve_tau(settings, &cfg)?;
    Ok(cfg)
}

fn report_run(cli: &Cli, report: &RunReport) {
    if cli.verbose {
        for row in &report.history {
            eprintln!(
                "iter {:4}  rel_change {:.6e}  data_energy {:.6e}",
                row.k, row.rel_change, row.data_energy
            );
        }
    }
    let reason = match report.stop {
        StopReason::Tol => "tolerance reached",
        StopReason::MaxIters => "iteration cap",
        StopReason::NonFinite => "non-finite iterates",
    };
    println!("iterations: {} ({reason})", report.iterations);
}

/// Numerical blowups exit with their own code.
fn check_finite_stop(report: &RunReport) -> Result<()> {
    if report.stop == StopReason::NonFinite {
        return Err(Error::NonFinite(
            "iteration diverged; try a smaller tau or larger alpha".into(),
        ));
    }
    Ok(())
}

fn validate_crop(crop: usize, img: &Image) -> Result<()> {
    if 2 * crop >= img.width().min(img.height()) {
        return Err(Error::InvalidArgument(format!(
            "crop border {crop} too large for {}x{} (adjust --crop)",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn print_scores(label: &str, clean: &Image, recon: &Image, crop: usize) -> Result<()> {
    let full = psnr(clean, &clamp01(recon), 1.0)?;
    let cropped = crop_scored_psnr(clean, recon, crop)?;
    println!("{label}: psnr {full:.4} dB, crop-scored {cropped:.4} dB (crop {crop})");
    if clean.channels() > 1 {
        let per = psnr_per_channel(&clean.crop_border(crop)?, &clamp01(recon).crop_border(crop)?, 1.0)?;
        let cells: Vec<String> = per.iter().map(|p| format!("{p:.4}")).collect();
        println!("{label}: per-channel crop-scored psnr [{}] dB", cells.join(", "));
    }
    Ok(())
}

fn denoise(cli: &Cli, a: &DenoiseArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let denoiser = settings.denoiser()?;
    let input = load_source(&a.source, &settings, 1)?;
    let sigma = a.sigma.unwrap_or(0.0);
    let noisy = add_gaussian_noise(&input, sigma, settings.seed()?)?;
    let out = denoiser.apply(&noisy)?;
    write_output(&a.out, &clamp01(&out), a.depth)?;
    if let Some(refpath) = &a.reference {
        let reference = read_image(refpath)?;
        println!("psnr vs reference: {:.4} dB", psnr(&reference, &clamp01(&out), 1.0)?);
    } else if sigma > 0.0 {
        println!("psnr vs input: noisy {:.4} dB, denoised {:.4} dB",
            psnr(&input, &clamp01(&noisy), 1.0)?,
            psnr(&input, &clamp01(&out), 1.0)?);
    }
    if cli.verbose {
        eprintln!("denoised {}x{}x{}", out.width(), out.height(), out.channels());
    }
    Ok(())
}

fn deconvolve(cli: &Cli, a: &DeconvolveArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let denoiser = settings.denoiser()?;
    let alpha = settings.alpha()?;
    let crop = settings.crop(&a.crop, 12)?;
    let kernel_name = settings.kernel_spec(&a.kernel, "gaussian:1.6")?;
    let kernel = KernelSpec::parse(&kernel_name)?;

    let (data, u0, reference) = if a.observed {
        let observed = load_source(&a.source, &settings, 1)?;
        let k = kernel.build()?;
        let op = pnp_core::linop::LinearOperator::circular_conv(
            k,
            observed.width(),
            observed.height(),
            observed.channels(),
        )?;
        let data = DataTerm::new(op, observed.clone(), alpha)?;
        let reference = match &a.reference {
            Some(p) => Some(read_image(p)?),
            None => None,
        };
        (data, observed, reference)
    } else {
        let clean = load_source(&a.source, &settings, 1)?;
        let sigma = settings.noise_sigma(&a.sigma, 0.01)?;
        let e = DeconvExperiment { kernel, sigma, crop };
        let (data, display) = build_deconv(&e, &clean, settings.seed()?, alpha)?;
        if let Some(p) = &a.degraded_out {
            write_output(p, &display, a.depth)?;
        }
        let u0 = data.observation().clone();
        (data, u0, Some(clean))
    };

    if reference.is_some() {
        validate_crop(crop, &u0)?;
    }
    if let Some(w) = buildable_warning(&settings, &data, &denoiser)? {
        eprintln!("warning: {w}");
    }
    let cfg = build_scheme_config(
        &settings,
        data,
        denoiser,
        reference.clone(),
        a.history_csv.is_some(),
    )?;
    let report = run_scheme(&cfg, &u0)?;
    report_run(cli, &report);
    if let Some(p) = &a.history_csv {
        write_text(p, &history_csv(&report))?;
    }
    write_output(&a.out, &clamp01(&report.u), a.depth)?;
    check_finite_stop(&report)?;
    if let Some(clean) = &reference {
        print_scores("degraded", clean, &u0, crop)?;
        print_scores("restored", clean, &report.u, crop)?;
    }
    Ok(())
}

fn buildable_warning(
    settings: &Settings,
    data: &DataTerm,
    denoiser: &Denoiser,
) -> Result<Option<String>> {
    let mut cfg = SchemeConfig::new(settings.scheme()?, data.clone(), denoiser.clone());
    cfg.gamma = settings.gamma()?;
    cfg.beta_tv = settings.beta_tv()?;
    cfg.beta_cross = settings.beta_cross()?;
    cfg.tau = match settings.tau()? {
        Some(t) => t,
        None => return Ok(None), // defaults respect the bound
    };
    cfg.step_size_warning()
}

fn demosaick(cli: &Cli, a: &DemosaickArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let denoiser = settings.denoiser()?;
    let alpha = settings.alpha()?;
    let crop = settings.crop(&a.crop, 5)?;
    let pattern = settings.pattern(&a.pattern)?;

    let (data, mosaic, reference) = if a.observed {
        let mosaic = load_source(&a.source, &settings, 1)?;
        let op = pnp_core::linop::LinearOperator::bayer_mask(pattern, mosaic.width(), mosaic.height())?;
        let data = DataTerm::new(op, mosaic.clone(), alpha)?;
        let reference = match &a.reference {
            Some(p) => Some(read_image(p)?),
            None => None,
        };
        (data, mosaic, reference)
    } else {
        let clean = load_source(&a.source, &settings, 3)?;
        let e = DemosaickExperiment { pattern, crop };
        let (data, mosaic) = build_demosaick(&e, &clean, alpha)?;
        (data, mosaic, Some(clean))
    };

    let baseline = bilinear_demosaick(&mosaic, &pattern)?;
    if reference.is_some() {
        validate_crop(crop, &baseline)?;
    }
    if let Some(w) = buildable_warning(&settings, &data, &denoiser)? {
        eprintln!("warning: {w}");
    }
    let cfg = build_scheme_config(
        &settings,
        data,
        denoiser,
        reference.clone(),
        a.history_csv.is_some(),
    )?;
    let report = run_scheme(&cfg, &baseline)?;
    report_run(cli, &report);
    if let Some(p) = &a.history_csv {
        write_text(p, &history_csv(&report))?;
    }
    write_output(&a.out, &clamp01(&report.u), a.depth)?;
    check_finite_stop(&report)?;
    if let Some(clean) = &reference {
        print_scores("bilinear", clean, &baseline, crop)?;
        print_scores("restored", clean, &report.u, crop)?;
    }
    Ok(())
}

fn grid_search_cmd(cli: &Cli, a: &GridSearchArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let denoiser = settings.denoiser()?;
    let alphas = settings.list_f64(&a.alphas, "alphas", &[8.0, 16.0, 32.0, 64.0, 128.0])?;
    let beta_tvs = settings.list_f64(&a.beta_tvs, "beta_tvs", &[0.0])?;
    let beta_crosses = settings.list_f64(&a.beta_crosses, "beta_crosses", &[0.0])?;
    let spec = GridSearchSpec { alphas, beta_tvs, beta_crosses };

    let problem = match a.task.as_str() {
        "deconv" => {
            let clean = load_source(&a.source, &settings, 1)?;
            let crop = settings.crop(&a.crop, 12)?;
            validate_crop(crop, &clean)?;
            let kernel = KernelSpec::parse(&settings.kernel_spec(&a.kernel, "gaussian:1.6")?)?;
            let sigma = settings.noise_sigma(&a.sigma, 0.01)?;
            let e = DeconvExperiment { kernel, sigma, crop };
            let (data, display) = build_deconv(&e, &clean, settings.seed()?, 1.0)?;
            print_scores("degraded", &clean, &display, crop)?;
            let u0 = data.observation().clone();
            GridProblem { data, clean, u0, crop }
        }
        "demosaick" => {
            let clean = load_source(&a.source, &settings, 3)?;
            let crop = settings.crop(&a.crop, 5)?;
            validate_crop(crop, &clean)?;
            let pattern = settings.pattern(&a.pattern)?;
            let e = DemosaickExperiment { pattern, crop };
            let (data, mosaic) = build_demosaick(&e, &clean, 1.0)?;
            let baseline = bilinear_demosaick(&mosaic, &pattern)?;
            print_scores("bilinear", &clean, &baseline, crop)?;
            GridProblem { data, clean, u0: baseline, crop }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected deconv or demosaick)"
            )))
        }
    };

    let template = build_scheme_config(&settings, problem.data.clone(), denoiser, None, false)?;
    let result = grid_search(&spec, &[problem.clone()], &template)?;
    if cli.verbose {
        for cell in &result.table {
            eprintln!(
                "cell alpha {} beta_tv {} beta_cross {}: {} dB{}",
                cell.alpha,
                cell.beta_tv,
                cell.beta_cross,
                cell.mean_psnr,
                if cell.diverged { " (diverged)" } else { "" }
            );
        }
    }
    println!(
        "best: alpha {} beta_tv {} beta_cross {} -> {:.4} dB (crop {})",
        result.best.alpha, result.best.beta_tv, result.best.beta_cross, result.best.mean_psnr,
        problem.crop
    );
    if let Some(p) = &a.csv {
        write_text(p, &grid_csv(&result))?;
    }
    if let Some(p) = &a.out {
        let mut cfg = template.clone();
        cfg.data = problem.data.with_alpha(result.best.alpha)?;
        cfg.beta_tv = result.best.beta_tv;
        cfg.beta_cross = result.best.beta_cross;
        cfg.scheme = SchemeKind::StackedPdhg;
        let report = pnp_core::scheme::run_stacked_pdhg(&cfg, &problem.u0)?;
        write_output(p, &clamp01(&report.u), None)?;
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &AlphaSigmaSweepArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let sigmas = settings.list_f64(&a.sigmas, "sigmas", &[0.02, 0.04, 0.06, 0.08, 0.1])?;
    let default_alphas: Vec<f64> = (0..9).map(|k| 0.00125 * 4f64.powi(k)).collect();
    let alphas = settings.list_f64(&a.alphas, "alphas", &default_alphas)?;

    let clean = load_source(&a.source, &settings, 1)?;
    let crop = settings.crop(&a.crop, 12)?;
    validate_crop(crop, &clean)?;
    let kernel = KernelSpec::parse(&settings.kernel_spec(&a.kernel, "gaussian:1.6")?)?;
    let sigma = settings.noise_sigma(&a.sigma, 0.04)?;
    let e = DeconvExperiment { kernel, sigma, crop };
    let (data, _) = build_deconv(&e, &clean, settings.seed()?, 1.0)?;
    let u0 = data.observation().clone();
    let problem = GridProblem { data, clean, u0, crop };

    let template =
        build_scheme_config(&settings, problem.data.clone(), Denoiser::tv_prox(0.01), None, false)?;
    let report = alpha_sigma_sweep(&sigmas, &problem, &alphas, &template)?;
    for row in &report.rows {
        println!("sigma {:>6}: best alpha {:>10}, psnr {:.4} dB", row.sigma, row.best_alpha, row.best_psnr);
    }
    println!(
        "quadratic fit alpha = p*sigma^2: p = {:.6}, r_squared = {:.6}",
        report.fit_coefficient, report.r_squared
    );
    if let Some(p) = &a.csv {
        write_text(p, &alpha_sigma_csv(&report))?;
    }
    if cli.verbose {
        eprintln!("sweep finished: {} strengths x {} weights", sigmas.len(), alphas.len());
    }
    Ok(())
}

fn fixed_point_check(cli: &Cli, a: &FixedPointCheckArgs) -> Result<()> {
    let settings = Settings::load(&a.solver)?;
    let clean = load_source(&a.source, &settings, 1)?;
    let kernel = KernelSpec::parse(&settings.kernel_spec(&a.kernel, "gaussian:0.8")?)?;
    let sigma = settings.noise_sigma(&a.sigma, 0.02)?;
    let alpha = settings.alpha()?;
    let e = DeconvExperiment { kernel, sigma, crop: 0 };
    let (data, _) = build_deconv(&e, &clean, settings.seed()?, alpha)?;
    let fp_tol = a.fp_tol.unwrap_or(1e-12);

    // a long, high-precision proximal-gradient run constructs the fixed point
    let denoiser = Denoiser::TvProx { lambda: 0.01, inner_iters: 5000, inner_tol: 1e-13 };
    let mut pg = SchemeConfig::new(SchemeKind::Pg, data.clone(), denoiser);
    let norm = operator_norm_default(data.operator())?;
    pg.tau = settings.tau()?.unwrap_or(0.9 / (alpha * norm * norm));
    pg.max_iters = 20000;
    pg.tol = fp_tol;
    let report = run_pg(&pg, &data.observation().clone())?;
    if report.stop != StopReason::Tol {
        eprintln!(
            "warning: proximal-gradient run stopped by {:?} at relative change {:.3e}; residuals may be loose",
            report.stop,
            report.history.last().map(|r| r.rel_change).unwrap_or(f64::NAN)
        );
    }
    if cli.verbose {
        eprintln!("constructed fixed point in {} iterations", report.iterations);
    }
    let u = &report.u;

    // matched step conventions: gamma = 1/tau makes every t equal tau
    for kind in [SchemeKind::Pg, SchemeKind::Admm, SchemeKind::Pdhg1, SchemeKind::Pdhg2] {
        let mut cfg = pg.clone();
        cfg.scheme = kind;
        cfg.gamma = 1.0 / pg.tau;
        let t_label = match kind {
            SchemeKind::Pg | SchemeKind::Pdhg2 | SchemeKind::StackedPdhg => "t=tau",
            SchemeKind::Admm | SchemeKind::Pdhg1 => "t=1/gamma",
        };
        let r = fixed_point_residual(&cfg, u)?;
        println!("{:<6} {:<9} residual {r:.6e}", kind.name(), t_label);
    }
    Ok(())
}

fn weights_info(a: &WeightsInfoArgs) -> Result<()> {
    let model = load_model(&a.file)?;
    println!(
        "input channels: {}, residual: {}, layers: {}",
        model.input_channels(),
        if model.residual() { "yes" } else { "no" },
        model.layers().len()
    );
    println!("{:>5}  {:>5}  {:>5}  {:>4}  {:>9}", "layer", "in", "out", "relu", "weights");
    for (i, layer) in model.layers().iter().enumerate() {
        println!(
            "{:>5}  {:>5}  {:>5}  {:>4}  {:>9}",
            i + 1,
            layer.in_ch,
            layer.out_ch,
            if layer.relu { "yes" } else { "no" },
            layer.weights.len()
        );
    }
    Ok(())
}
