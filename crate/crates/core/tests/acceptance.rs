//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion: `PASS`/`FAIL`, a short identifier, the measured quantities and
//! the wall time. Pass criterion numbers as arguments to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use fklab::apps::{clt_variance, ldp_empirical, ldp_level1, legendre_exact, log_perron, LdpPlan};
use fklab::coupling_lab::{
    coupled_trajectory, decoupling_check, marginal_ks_check, maximal_coupling_1d, squeezing_check, tv_shift,
};
use fklab::dynamics_maps::{BurgersMap, ToyDiagonalMap};
use fklab::embedding::FiniteChainModel;
use fklab::feynman_kac::{particle_fk, pressure_curve, pressure_estimate, ParticleConfig, PotentialFn};
use fklab::kernel_lab::*;
use fklab::linalg::Matrix;
use fklab::measure_metrics::{dual_lipschitz, verify_metric_sandwich, DiscreteMeasure};
use fklab::rds_core::*;
use fklab::rng::{stream_rng, uniform_in_ball, Purpose};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// The random kernels shared by the first criteria.
fn kernel_family() -> Vec<(FiniteKernel<f64>, PotentialVector<f64>)> {
    let mut r = rng(2718);
    (0..200)
        .map(|_| {
            let k = random_kernel(&mut r, 20);
            let v = random_potential(&mut r, &k);
            (k, v)
        })
        .collect()
}

fn c01_perron_oracle() -> Verdict {
    let (mut dl, mut dh, mut dmu) = (0.0f64, 0.0f64, 0.0f64);
    let mut elapsed = 0.0;
    for (k, v) in kernel_family() {
        let m = build_tilted_matrix(&k, &v).unwrap();
        let t0 = Instant::now();
        let t = perron_triple(&m, k.a()).unwrap();
        elapsed += t0.elapsed().as_secs_f64();
        let o = dense_oracle(&m);
        dl = dl.max((t.lambda - o.lambda).abs() / o.lambda);
        dh = dh.max(max_diff(&t.h, &o.h));
        dmu = dmu.max(max_diff(&t.mu, &o.mu));
    }
    verdict(
        dl <= 1e-10 && dh <= 1e-8 && dmu <= 1e-8 && elapsed < 10.0,
        format!("200 kernels: max |Δλ|/λ={dl:.1e}, |Δh|={dh:.1e}, |Δμ|={dmu:.1e}, solver time {elapsed:.2}s"),
    )
}

fn c02_met_rate() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut unfit = 0;
    let mut envelope_ok = true;
    for (k, v) in kernel_family() {
        let m = build_tilted_matrix(&k, &v).unwrap();
        let t = perron_triple(&m, k.a()).unwrap();
        let o = dense_oracle(&m);
        let f: Vec<f64> = k.points().iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        let fit = met_residuals(&k, &v, &t, &f, 400).unwrap();
        let want = -(o.lambda2 / o.lambda).ln();
        if !fit.gamma.is_finite() {
            // residuals reach round-off within a few steps: only acceptable
            // for a gap so large that no window exists
            if want < 5.0 {
                unfit += 1;
            }
            continue;
        }
        worst = worst.max((fit.gamma - want).abs() / want);
        let (lo, hi) = fit.window;
        for kk in lo..=hi {
            envelope_ok &= fit.residuals[kk - 1] <= fit.c * (-fit.gamma * kk as f64).exp() * (1.0 + 1e-12);
        }
    }
    verdict(
        worst <= 0.05 && unfit == 0 && envelope_ok,
        format!("worst relative error of γ vs −log(λ₂/λ₁): {worst:.2e}; unfitted with moderate gap: {unfit}"),
    )
}

fn c03_necessity() -> Verdict {
    let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
    let params = KernelConditionParams::default();
    let good = Matrix::from_rows(vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5]]).unwrap();
    let good = FiniteKernel::new(pts.clone(), good, vec![0, 1, 2]).unwrap();
    let control = verify_kernel_conditions(&good, &PotentialVector::zero(&good), params).unwrap();
    // mass parked off A forever: concentration fails
    let p3 = Matrix::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let k3 = FiniteKernel::new(pts.clone(), p3, vec![0, 1]).unwrap();
    let v3 = PotentialVector::zero(&k3);
    let rep3 = verify_kernel_conditions(&k3, &v3, params).unwrap();
    // residuals of f = 1 off A against any limit charging only A
    let m3 = build_tilted_matrix(&k3, &v3).unwrap();
    let lam = perron_value(&m3, k3.a()).unwrap();
    let mut g = vec![0.0, 0.0, 1.0];
    let mut r_min = f64::INFINITY;
    for _ in 0..200 {
        g = m3.mul_vec(&g).iter().map(|x| x / lam).collect();
        r_min = r_min.min(g[2]);
    }
    // off-A growth faster than λ: the exponential bound fails
    let p4 = Matrix::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0], vec![0.3, 0.0, 1.2]]).unwrap();
    let k4 = FiniteKernel::new(pts, p4, vec![0, 1]).unwrap();
    let rep4 = verify_kernel_conditions(&k4, &PotentialVector::zero(&k4), params).unwrap();
    verdict(
        control.all_pass() && !rep3.verdicts.concentration && r_min >= 1.0 - 1e-12 && !rep4.verdicts.expbound,
        format!(
            "control passes: {}; concentration flagged: {}, residual floor over 200 steps {r_min:.3}; exp-bound flagged: {}",
            control.all_pass(),
            !rep3.verdicts.concentration,
            !rep4.verdicts.expbound
        ),
    )
}

fn random_measure(r: &mut impl Rng, atoms: usize) -> DiscreteMeasure<f64> {
    let pts: Vec<Vec<f64>> = (0..atoms).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
    let w: Vec<f64> = (0..atoms).map(|_| r.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    DiscreteMeasure::new(pts, w.into_iter().map(|x| x / s).collect()).unwrap()
}

fn c04_contraction() -> Verdict {
    let (mut passing, mut found, mut worst_factor) = (0, 0, 0.0f64);
    for (k, v) in kernel_family() {
        let rep = verify_kernel_conditions(&k, &v, KernelConditionParams::default()).unwrap();
        if !rep.all_pass() {
            continue;
        }
        passing += 1;
        let m = build_tilted_matrix(&k, &v).unwrap();
        let t = perron_triple(&m, k.a()).unwrap();
        if let Some(s) = contraction_search(&k, &m, &t, 40).unwrap() {
            found += 1;
            worst_factor = worst_factor.max(s.factor);
        }
    }
    let mut r = rng(99);
    let mut sandwich_ok = 0;
    for _ in 0..1000 {
        let (na, nb) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = random_measure(&mut r, na);
        let b = random_measure(&mut r, nb);
        let diam = 2f64.sqrt();
        let theta = (1.0 / diam) * (1.0 + 4.0 * r.random::<f64>());
        if verify_metric_sandwich(&a, &b, theta, diam).unwrap().holds() {
            sandwich_ok += 1;
        }
    }
    verdict(
        passing > 0 && found == passing && worst_factor <= 0.5 && sandwich_ok == 1000,
        format!(
            "contraction ≤ 1/2 found for {found}/{passing} kernels passing all conditions; sandwich holds on {sandwich_ok}/1000 pairs"
        ),
    )
}

fn bridge_kernels() -> Vec<(FiniteKernel<f64>, PotentialVector<f64>)> {
    let mut r = rng(31);
    (0..3)
        .map(|_| {
            let k = random_kernel(&mut r, 8);
            let v = random_potential(&mut r, &k);
            (k, v)
        })
        .collect()
}

fn c05_bridge() -> Verdict {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (k, v)) in bridge_kernels().into_iter().enumerate() {
        let m = build_tilted_matrix(&k, &v).unwrap();
        let t = perron_triple(&m, k.a()).unwrap();
        let chain = FiniteChainModel::new(k.clone()).unwrap();
        let pot = PotentialFn::on_chain(&chain, &v);
        let s = k.a()[0];
        let u0 = k.points()[s].clone();
        let cfg = ParticleConfig {
            particles: 10_000,
            seed: 100 + i as u64,
            ..Default::default()
        };
        let est = particle_fk(&chain, &pot, &[u0.clone()], 60, &cfg).unwrap();
        let (sup, w): (Vec<Vec<f64>>, Vec<f64>) = (0..k.n())
            .filter(|&j| t.mu[j] > 0.0)
            .map(|j| (k.points()[j].clone(), t.mu[j]))
            .unzip();
        let mu = DiscreteMeasure::new(sup, w).unwrap();
        let dl = dual_lipschitz(&est.mu, &mu).unwrap();
        let q = pressure_estimate(&chain, &pot, &u0, 60, &cfg).unwrap();
        let z_l = (est.lambda - t.lambda).abs() / (est.lambda_stderr + 1e-12);
        let z_h = (est.h_start - t.h[s]).abs() / (est.h_stderr + 1e-12);
        let z_q = (q.q - t.lambda.ln()).abs() / (q.stderr + 1e-12);
        let ok_l = (est.lambda - t.lambda).abs() <= 3.0 * est.lambda_stderr + 1e-9;
        let ok_h = (est.h_start - t.h[s]).abs() <= 3.0 * est.h_stderr + 1e-9;
        let ok_q = (q.q - t.lambda.ln()).abs() <= 3.0 * q.stderr + 1e-9;
        pass &= ok_l && ok_h && ok_q && dl <= 0.05;
        lines.push(format!("n={}: zλ={z_l:.1} zh={z_h:.1} zQ={z_q:.1} ‖μ̂−μ‖={dl:.3}", k.n()));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(pass && secs < 60.0, lines.join("; "))
}

fn c06_tilt() -> Verdict {
    let mut r = rng(66);
    let (mut exact_err, mut mc_excess) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let k = random_kernel(&mut r, 8);
        let v = random_potential(&mut r, &k);
        let c = r.random_range(-2.0..2.0);
        let lam = perron_value(&build_tilted_matrix(&k, &v).unwrap(), k.a()).unwrap();
        let lam_c = perron_value(&build_tilted_matrix(&k, &v.shifted(c)).unwrap(), k.a()).unwrap();
        exact_err = exact_err.max((lam_c / lam / c.exp() - 1.0).abs());
        let chain = FiniteChainModel::new(k.clone()).unwrap();
        let pot = PotentialFn::on_chain(&chain, &v);
        let cfg = ParticleConfig {
            particles: 4000,
            seed: i,
            ..Default::default()
        };
        let u0 = k.points()[k.a()[0]].clone();
        let q = pressure_estimate(&chain, &pot, &u0, 40, &cfg).unwrap();
        let qc = pressure_estimate(&chain, &pot.shifted(c), &u0, 40, &cfg).unwrap();
        let tol = q.stderr.max(qc.stderr) + 1e-9;
        mc_excess = mc_excess.max((qc.q - q.q - c).abs() / tol);
    }
    verdict(
        exact_err <= 1e-8 && mc_excess <= 1.0,
        format!("max |λ_(V+c)/(λ_V e^c) − 1| = {exact_err:.1e}; max |ΔQ − c|/stderr = {mc_excess:.2e}"),
    )
}

fn burgers_model(modes: usize, dt: f64, nu: f64, kicked: usize) -> RdsModel<f64> {
    let map = BurgersMap::new(nu, modes, dt).unwrap();
    let kicks = KickLaw::power_law(kicked, 0.5, 1.0).unwrap();
    let rho = absorbing_radius(kicks.norm_bound(), (-nu).exp()).unwrap();
    RdsModel::new(Arc::new(map), kicks, rho).unwrap()
}

fn toy_model(q: f64) -> RdsModel<f64> {
    let gamma: Vec<f64> = (0..6).map(|j| 0.6 * 0.5f64.powi(j)).collect();
    let map = ToyDiagonalMap::new(gamma, q, 4.0).unwrap();
    let kicks = KickLaw::power_law(6, 0.5, 1.0).unwrap();
    let rho = absorbing_radius(kicks.norm_bound(), 0.6).unwrap();
    RdsModel::new(Arc::new(map), kicks, rho).unwrap()
}

fn c07_burgers_conditions() -> Verdict {
    let model = burgers_model(64, 1e-3, 0.2, 8);
    let dim = model.map().dim();
    let cloud = attainability_cloud(
        &model,
        &[vec![0.0; dim]],
        4,
        &CloudPlan {
            points: 200,
            levels: 9,
            seed: 7,
        },
    )
    .unwrap();
    let mut pool = cloud.points.clone();
    for (i, p) in cloud.points.iter().enumerate() {
        let mut rr = stream_rng(7, Purpose::Sampling, i as u64, 9);
        let d = uniform_in_ball(dim, 0.05, &mut rr);
        pool.push(p.iter().zip(&d).map(|(a, b)| a + b).collect());
    }
    let plan = MapSamplePlan {
        radii: vec![1.0, 3.0],
        samples: 16,
        n_max: 6,
        projections: vec![1, 2, 4, 8, 16],
        pairs: 10_000,
        e_tol: 1e-6,
        seed: 7,
        ..Default::default()
    };
    let rep = verify_map_conditions(model.map(), &plan, Some(&pool)).unwrap();
    let sub = rep.subcontraction.as_ref().unwrap();
    let decay_ok = rep.decay.iter().all(|d| d.n0.is_some());
    let monotone = rep.smoothing.iter().all(|s| s.monotone);
    let toy = ToyDiagonalMap::geometric(8, 0.7, 0.6).unwrap();
    let trep = verify_map_conditions(
        &toy,
        &MapSamplePlan {
            projections: vec![1, 2, 3, 5, 7],
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let s = &trep.smoothing[0];
    let toy_exact = s
        .dims
        .iter()
        .zip(&s.gamma)
        .all(|(&n, &g)| (g - toy.gamma()[n]).abs() <= 1e-15 * toy.gamma()[n]);
    let gammas: Vec<String> = rep.smoothing[0].gamma.iter().map(|g| format!("{g:.3}")).collect();
    verdict(
        sub.pass && sub.pairs == 10_000 && decay_ok && monotone && toy_exact,
        format!(
            "L¹ ratio max {:.9} on {} pairs; decay a(R)={:?}; γ_N(R=1) = [{}] monotone: {monotone}; toy γ_N = γ_(N+1): {toy_exact}",
            sub.max_ratio,
            sub.pairs,
            rep.decay.iter().map(|d| (d.radius, (d.a * 1e3).round() / 1e3)).collect::<Vec<_>>(),
            gammas.join(", ")
        ),
    )
}

fn squeeze_pairs(dim: usize, radius: f64, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let mut r = stream_rng(seed, Purpose::Sampling, i as u64, 5);
            (uniform_in_ball(dim, radius, &mut r), uniform_in_ball(dim, radius, &mut r))
        })
        .collect()
}

fn empirical_gamma(model: &RdsModel<f64>, n: usize, radius: f64) -> f64 {
    let plan = MapSamplePlan {
        radii: vec![radius],
        samples: 0,
        n_max: 1,
        projections: vec![n],
        pairs: 20_000,
        seed: 77,
        ..Default::default()
    };
    verify_map_conditions(model.map(), &plan, None).unwrap().smoothing[0].gamma[0]
}

fn c08_coupling() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    // 1-d couplings against the quadrature oracle
    let mut worst_z: f64 = 0.0;
    for (i, &(delta, b)) in [(0.05, 0.5), (0.3, 0.5), (0.2, 0.25), (0.9, 0.5)].iter().enumerate() {
        let n = 1_000_000;
        let mut rr = stream_rng(8, Purpose::Coupling, i as u64, 0);
        let hits = (0..n).filter(|_| maximal_coupling_1d(delta, b, &mut rr).2).count();
        let p = 1.0 - tv_shift(delta / b);
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        worst_z = worst_z.max((hits as f64 / n as f64 - p).abs() / sigma);
    }
    pass &= worst_z <= 3.0;
    notes.push(format!("coupling prob. max z = {worst_z:.2}"));

    let toy = toy_model(0.2);
    let n_cpl = 2;
    let pairs = squeeze_pairs(6, toy.rho(), 10_000, 3);
    let (u, v) = &pairs[0];
    let marg = marginal_ks_check(&toy, n_cpl, u, v, 1_000_000, 8).unwrap();
    pass &= marg.min_p_value > 1e-3;
    notes.push(format!("KS min p = {:.3} over {} tests", marg.min_p_value, marg.tests.len()));
    let dec = decoupling_check(&toy, n_cpl, u, v, 1_000_000, 8).unwrap();
    let z = (dec.probability - dec.exact).abs() / dec.sigma.max(1e-12);
    pass &= z <= 3.0 && dec.exact <= dec.bound;
    notes.push(format!("one-step decoupling z = {z:.2}"));

    // bitwise agreement of the shared kicks, on every step of every pair
    let burgers = burgers_model(16, 5e-3, 0.2, 8);
    let mut tails = 0usize;
    let mut total = 0usize;
    for (model, n) in [(&toy, n_cpl), (&burgers, 4)] {
        let dim = model.map().dim();
        let ps = squeeze_pairs(dim, model.rho(), 1000, 11);
        for (i, (a, b)) in ps.iter().enumerate() {
            let run = coupled_trajectory(model, n, a, b, 10, 5, i as u64).unwrap();
            total += 1;
            tails += usize::from(run.tail_identical);
        }
    }
    pass &= tails == total;
    notes.push(format!("shared kicks bitwise on {tails}/{total} runs"));

    for (name, model, n) in [("toy", &toy, n_cpl), ("burgers", &burgers, 4)] {
        let dim = model.map().dim();
        let radius = model.rho();
        let gamma_n = empirical_gamma(model, n, 2.0 * radius);
        let ps = squeeze_pairs(dim, radius, 10_000, 13);
        let rep = squeezing_check(model, n, &ps, 4, gamma_n, 1e-2, 21).unwrap();
        pass &= rep.pass;
        let worst = rep.max_ratio.iter().copied().fold(0.0, f64::max);
        notes.push(format!("{name} squeezing γ_N={gamma_n:.3} max ratio {worst:.3} ({})", if rep.pass { "pass" } else { "fail" }));
    }
    verdict(pass, notes.join("; "))
}

fn three_state() -> FiniteKernel<f64> {
    let p = Matrix::from_rows(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.3, 0.1, 0.6]]).unwrap();
    FiniteKernel::new(vec![vec![0.0], vec![1.0], vec![2.0]], p, vec![0, 1, 2]).unwrap()
}

fn c09_clt() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let k = three_state();
    let chain = FiniteChainModel::new(k.clone()).unwrap();
    let vv = PotentialVector::new(&k, vec![0.0, 1.0, -0.5]).unwrap();
    let pot = PotentialFn::on_chain(&chain, &vv);
    let toy = toy_model(0.2);
    let tpot: PotentialFn<f64> = PotentialFn::new(|u: &[f64]| 0.5 * u[0].clamp(-10.0, 10.0), 0.5, 10.0, "coord");
    let cfg = ParticleConfig {
        particles: 10_000,
        seed: 9,
        ..Default::default()
    };
    let runs: [(&str, &dyn MarkovModel<f64>, &PotentialFn<f64>, Vec<f64>); 2] = [
        ("chain", &chain, &pot, vec![0.0]),
        ("toy", &toy, &tpot, vec![0.0; 6]),
    ];
    for (name, model, v, u0) in runs {
        let curve = pressure_curve(model, v, &[-0.05, 0.0, 0.05], &u0, 200, 0.05, &cfg).unwrap();
        let f = |u: &[f64]| v.eval(u);
        let clt = clt_variance(model, &f, &u0, 1000, 10_000, 10).unwrap();
        let rel = (clt.variance - curve.sigma2).abs() / curve.sigma2;
        pass &= rel <= 0.15;
        notes.push(format!("{name}: Var={:.4}±{:.4} σ̂²={:.4} rel {rel:.3}", clt.variance, clt.stderr, curve.sigma2));
    }
    let h = 1e-3;
    let l = |a| log_perron(&k, vv.values(), a).unwrap();
    notes.push(format!("chain exact Λ''(0)={:.4}", (l(h) - 2.0 * l(0.0) + l(-h)) / (h * h)));
    verdict(pass, notes.join("; "))
}

fn c10_ldp() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let p4 = Matrix::from_rows(vec![
        vec![0.5, 0.3, 0.1, 0.1],
        vec![0.1, 0.4, 0.4, 0.1],
        vec![0.2, 0.1, 0.5, 0.2],
        vec![0.3, 0.2, 0.0, 0.5],
    ])
    .unwrap();
    let k4 = FiniteKernel::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], p4, vec![0, 1, 2, 3]).unwrap();
    let cases = [(three_state(), vec![0.0, 1.0, 2.0]), (k4, vec![0.0, 1.0, -1.0, 0.5])];
    for (ci, (k, f)) in cases.into_iter().enumerate() {
        let chain = FiniteChainModel::new(k.clone()).unwrap();
        let t = perron_triple(&build_tilted_matrix(&k, &PotentialVector::zero(&k)).unwrap(), k.a()).unwrap();
        let mean: f64 = t.mu.iter().zip(&f).map(|(a, b)| a * b).sum();
        let h = 1e-3;
        let l = |a| log_perron(&k, &f, a).unwrap();
        let sigma = ((l(h) - 2.0 * l(0.0) + l(-h)) / (h * h)).sqrt();
        let at_mean = legendre_exact(&k, &f, &[mean], 4.0).unwrap()[0].rate;
        pass &= at_mean <= 1e-6;
        let xs: Vec<f64> = [-0.5, -0.25, 0.25, 0.5].iter().map(|d| mean + d * sigma).collect();
        let plan = LdpPlan {
            xs: xs.clone(),
            ks: vec![20, 40, 60, 80, 100],
            trajectories: 100_000,
            seed: 40 + ci as u64,
        };
        let fv = f.clone();
        let kk = k.clone();
        let obs = move |u: &[f64]| fv[kk.points().iter().position(|p| p.as_slice() == u).unwrap()];
        let emp = ldp_empirical(&chain, &obs, &k.points()[0], &plan).unwrap();
        let rows = ldp_level1(&legendre_exact(&k, &f, &xs, 4.0).unwrap(), &emp);
        let mut worst: f64 = 0.0;
        let mut unobservable = 0;
        for r in &rows {
            match r.relative_error {
                Some(e) => worst = worst.max(e),
                None => unobservable += 1,
            }
        }
        pass &= worst <= 0.25;
        notes.push(format!(
            "{}-state: I(mean)={at_mean:.1e}, worst rate error {worst:.3} over {} rows ({unobservable} unobservable)",
            k.n(),
            rows.len()
        ));
    }
    verdict(pass, notes.join("; "))
}

fn c11_attraction() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, model) in [("toy", toy_model(0.2)), ("burgers", burgers_model(8, 1e-2, 0.2, 8))] {
        let dim = model.map().dim();
        let cloud = attainability_cloud(
            &model,
            &[vec![0.0; dim]],
            20,
            &CloudPlan {
                points: 2000,
                levels: 9,
                seed: 11,
            },
        )
        .unwrap();
        let eps = 2.0 * cloud_resolution(&cloud.points);
        let mut start = vec![0.0; dim];
        start[0] = 3.0 * model.rho();
        let plan = EnsemblePlan {
            per_start: 10_000,
            horizon: 40,
            seed: 12,
        };
        let att = attraction_counter(&model, &cloud.points, eps, &[start.clone()], &plan).unwrap();
        let hit = hitting_time_stats(&model, &[start], 0.5 * model.rho(), &plan).unwrap();
        let delta = att.tail.map(|t| t.delta).unwrap_or(f64::NAN);
        let moment_ok = hit.exp_moment.iter().all(|&m| m <= 2.0 + 1e-12);
        pass &= delta > 0.0 && hit.delta > 0.0 && moment_ok;
        notes.push(format!(
            "{name}: ε={eps:.3}, tail δ={delta:.3}, hitting δ={:.3} with E e^(δτ)={:.3}",
            hit.delta,
            hit.exp_moment.iter().copied().fold(0.0, f64::max)
        ));
    }
    verdict(pass, notes.join("; "))
}

fn run_cli(args: &[&str], threads: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fk-lab"))
        .args(args)
        .args(["--threads", threads])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut diff = Vec::new();
    for n in &names {
        let x = std::fs::read(a.join(n)).unwrap();
        if std::fs::read(b.join(n)).ok().as_deref() != Some(x.as_slice()) {
            diff.push(n.to_string_lossy().into_owned());
        }
    }
    (names.len(), diff)
}

fn c12_reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"kind": "toy", "gamma": [0.6, 0.3, 0.15, 0.075], "q": 0.2, "cutoff": 4.0},
            "potential": {"kind": "coordinate", "index": 0, "scale": 0.5},
            "seed": 5, "horizon": 30, "trajectories": 500,
            "particles": {"particles": 1000, "islands": 10},
            "ldp": {"ks": [10, 20, 30]},
            "attract": {"cloud_points": 300, "cloud_steps": 10},
            "coupling": {"n": 2, "pairs": 200, "r_max": 4, "samples": 5000, "tol": 0.01}}"#,
    )
    .unwrap();
    let chain = dir.path().join("chain.json");
    std::fs::write(
        &chain,
        r#"{"model": {"kind": "chain", "kernel": {"points": [[0.0], [1.0], [2.0]],
              "P": [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.1, 0.6]], "A": [0, 1, 2], "V": [0.0, 0.3, -0.2]}},
            "seed": 9, "horizon": 40, "trajectories": 2000, "particles": {"particles": 2000},
            "ldp": {"ks": [10, 20, 40]}}"#,
    )
    .unwrap();
    let jobs: [(&Path, &[&str]); 2] = [
        (&cfg, &["simulate", "eigen", "pressure", "met-check", "coupling-check", "conditions", "ldp", "attract", "slln"]),
        (&chain, &["simulate", "eigen", "pressure", "ldp", "slln", "coupling-check"]),
    ];
    let (mut files, mut runs) = (0, 0);
    let mut bad = Vec::new();
    for (ci, (cfg, cmds)) in jobs.iter().enumerate() {
        for cmd in cmds.iter() {
            let a = dir.path().join(format!("{ci}-{cmd}-a"));
            let b = dir.path().join(format!("{ci}-{cmd}-b"));
            let ok_a = run_cli(&[cmd, "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()], "1");
            let manifest = a.join("manifest.json");
            let ok_b = ok_a
                && run_cli(&[cmd, "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()], "4");
            if !ok_b {
                bad.push(format!("{cmd}: run failed"));
                continue;
            }
            runs += 1;
            let (n, diff) = same_files(&a, &b);
            files += n;
            bad.extend(diff.into_iter().map(|d| format!("{cmd}/{d}")));
        }
    }
    // thread count from the environment instead of the flag
    let a = dir.path().join("1-simulate-a");
    let e = dir.path().join("env");
    let ok = Command::new(env!("CARGO_BIN_EXE_fk-lab"))
        .args(["simulate", "--config", a.join("manifest.json").to_str().unwrap(), "--out", e.to_str().unwrap()])
        .env(fklab::cli::THREADS_ENV, "3")
        .status()
        .map(|s| s.success())
        .unwrap_or(false);
    if ok {
        runs += 1;
        let (n, diff) = same_files(&a, &e);
        files += n;
        bad.extend(diff.into_iter().map(|d| format!("env/{d}")));
    } else {
        bad.push("env-threaded run failed".into());
    }
    verdict(
        bad.is_empty(),
        format!("{runs} manifest reruns (1 vs 3–4 threads), {files} files compared; mismatches: {bad:?}"),
    )
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Verdict); 12] = [
        (1, "perron-oracle", c01_perron_oracle),
        (2, "met-rate", c02_met_rate),
        (3, "condition-necessity", c03_necessity),
        (4, "contraction-and-sandwich", c04_contraction),
        (5, "monte-carlo-bridge", c05_bridge),
        (6, "tilt-identities", c06_tilt),
        (7, "burgers-map-conditions", c07_burgers_conditions),
        (8, "coupling", c08_coupling),
        (9, "clt-variance", c09_clt),
        (10, "ldp-level1", c10_ldp),
        (11, "attraction-speed", c11_attraction),
        (12, "reproducibility", c12_reproducibility),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
