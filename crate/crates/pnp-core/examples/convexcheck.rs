// scratch: calibrate the convex-consistency setup
use pnp_core::denoise::Denoiser;
use pnp_core::harness::scenes::{synth_scene, SceneKind};
use pnp_core::harness::{build_deconv, DeconvExperiment, KernelSpec};
use pnp_core::image::{Image, RngSeed};
use pnp_core::linop::{grad_adjoint, grad_forward};
use pnp_core::prox::{prox_l21, DataTerm};
use pnp_core::scheme::*;
use std::time::Instant;

fn tv_norm(u: &Image) -> f64 {
    let g = grad_forward(u);
    let n = u.pixels();
    let mut tv = 0.0;
    for c in 0..u.channels() {
        let (dx, dy) = (g.plane(2 * c), g.plane(2 * c + 1));
        for i in 0..n {
            tv += (dx[i] * dx[i] + dy[i] * dy[i]).sqrt();
        }
    }
    tv
}

// Chambolle-Pock reference with exact dual-ball projection
fn reference_solve(data: &DataTerm, lambda: f64, iters: usize) -> Image {
    let (w, h, c) = data.input_shape();
    let mut u = data.observation().clone();
    let mut ubar = u.clone();
    let mut p = Image::zeros(w, h, 2 * c);
    let gamma = 1.0;
    let tau = 0.95 / 8.0;
    for _ in 0..iters {
        // p <- proj_{||.||<=lambda}(p + gamma * D ubar)
        let cand = p.axpy(gamma, &grad_forward(&ubar)).unwrap();
        // projection = cand - prox_l21(lambda, cand) ... careful: proj onto ball = cand - shrink? no:
        // shrink(cand, lambda) = cand - proj_ball_lambda(cand) => proj = cand - shrink
        let shrunk = prox_l21(lambda, &cand).unwrap();
        p = cand.sub(&shrunk).unwrap();
        let u_new = data.prox(tau, &u.axpy(-tau, &grad_adjoint(&p).unwrap()).unwrap()).unwrap();
        ubar = u_new.axpy(1.0, &u_new.sub(&u).unwrap()).unwrap();
        u = u_new;
    }
    u
}

fn main() {
    let clean = synth_scene(SceneKind::Cartoon, 16, 16, 1, RngSeed(40));
    let e = DeconvExperiment { kernel: KernelSpec::Gaussian { std: 0.8 }, sigma: 0.02, crop: 0 };
    let (data, _) = build_deconv(&e, &clean, RngSeed(41), 4.0).unwrap();
    let lambda_star = 0.01;
    let energy = |u: &Image| data.energy(u).unwrap() + lambda_star * tv_norm(u);

    let t0 = Instant::now();
    let uref = reference_solve(&data, lambda_star / data.alpha() * data.alpha(), 10000);
    let eref = energy(&uref);
    println!("reference energy {eref:.12e}  ({:?})", t0.elapsed());

    let inner = 3000;
    let itol = 1e-10;
    let outer = 8000;
    let otol = 1e-11;
    let u0 = data.observation().clone();

    let mut results: Vec<(&str, Image)> = Vec::new();

    let t = Instant::now();
    let mut pg = SchemeConfig::new(SchemeKind::Pg, data.clone(), Denoiser::TvProx { lambda: 0.225 * lambda_star, inner_iters: inner, inner_tol: itol });
    pg.tau = 0.225; pg.max_iters = outer; pg.tol = otol;
    let r = run_pg(&pg, &u0).unwrap();
    println!("pg     iters {:5} stop {:?} energy {:.12e} rel-e {:.3e} ({:?})", r.iterations, r.stop, energy(&r.u), (energy(&r.u)-eref).abs()/eref, t.elapsed());
    results.push(("pg", r.u));

    let t = Instant::now();
    let mut admm = SchemeConfig::new(SchemeKind::Admm, data.clone(), Denoiser::TvProx { lambda: lambda_star, inner_iters: inner, inner_tol: itol });
    admm.gamma = 1.0; admm.max_iters = outer; admm.tol = otol;
    let r = run_admm(&admm, &u0).unwrap();
    println!("admm   iters {:5} stop {:?} energy {:.12e} rel-e {:.3e} ({:?})", r.iterations, r.stop, energy(&r.u), (energy(&r.u)-eref).abs()/eref, t.elapsed());
    results.push(("admm", r.u));

    let t = Instant::now();
    let mut p1 = SchemeConfig::new(SchemeKind::Pdhg1, data.clone(), Denoiser::TvProx { lambda: lambda_star, inner_iters: inner, inner_tol: itol });
    p1.gamma = 1.0; p1.tau = 0.45; p1.max_iters = outer; p1.tol = otol;
    let r = run_pdhg1(&p1, &u0).unwrap();
    println!("pdhg1  iters {:5} stop {:?} energy {:.12e} rel-e {:.3e} ({:?})", r.iterations, r.stop, energy(&r.u), (energy(&r.u)-eref).abs()/eref, t.elapsed());
    results.push(("pdhg1", r.u));

    let t = Instant::now();
    let mut p2 = SchemeConfig::new(SchemeKind::Pdhg2, data.clone(), Denoiser::TvProx { lambda: lambda_star, inner_iters: inner, inner_tol: itol });
    p2.gamma = 1.0; p2.tau = 0.95; p2.max_iters = outer; p2.tol = otol;
    let r = run_pdhg2(&p2, &u0).unwrap();
    println!("pdhg2  iters {:5} stop {:?} energy {:.12e} rel-e {:.3e} ({:?})", r.iterations, r.stop, energy(&r.u), (energy(&r.u)-eref).abs()/eref, t.elapsed());
    results.push(("pdhg2", r.u));

    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let d = results[i].1.sub(&results[j].1).unwrap().norm_l2() / results[i].1.norm_l2();
            println!("dist {} vs {}: {:.3e}", results[i].0, results[j].0, d);
        }
    }
}
