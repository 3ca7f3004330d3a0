//! The `fk-lab` command line: parse flags, load a configuration, run one
//! experiment on a dedicated thread pool and write `results.json`, CSV tables
//! and `manifest.json` into the output directory.
//!
//! Exit codes: 0 on success, 2 on bad input (flags, configuration, paths,
//! preconditions), 3 on numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::apps::{
    self, default_family, ldp_empirical, ldp_level1, legendre_exact, legendre_from_curve, rate_function_eval,
    slln_time, LdpPlan, LegendrePoint,
};
use crate::config::{Built, BuiltModel, Manifest, RunConfig};
use crate::coupling_lab::{decoupling_check, marginal_ks_check, squeezing_check};
use crate::embedding::FiniteChainModel;
use crate::error::{Error, Result};
use crate::feynman_kac::{met_convergence_mc, particle_fk, pressure_curve, pressure_estimate};
use crate::io::{write_csv, write_json, Table};
use crate::kernel_lab::{build_tilted_matrix, met_residuals, perron_triple, verify_kernel_conditions, PotentialVector};
use crate::rds_core::{
    absorbing_ball_check, attainability_cloud, attraction_counter, cloud_resolution, hitting_time_stats,
    par_try_map, simulate, verify_map_conditions, CloudPlan, EnsemblePlan, MapSamplePlan, MarkovModel,
};
use crate::rng::{stream_rng, uniform_in_ball, Purpose};
use crate::scalar::norm2;

pub const THREADS_ENV: &str = "FK_LAB_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fk-lab", version, about = "Feynman-Kac experiments on kicked dynamical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON) or a previously written manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fk-lab-out")]
    pub out: PathBuf,
    /// Worker threads (falls back to FK_LAB_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// Trajectories and norm statistics.
    Simulate,
    /// Principal eigenvalue, eigenfunction and eigenmeasure.
    Eigen,
    /// Pressure `Q(V)` from the growth of the weighted mass.
    Pressure,
    /// Convergence of the normalised semigroup.
    MetCheck,
    /// Coupling diagnostics: marginals, decoupling, squeezing.
    CouplingCheck,
    /// Structural conditions on the kernel or the time-one map.
    Conditions,
    /// Level-1 large deviations of the observable.
    Ldp,
    /// Attraction to the attainable set and hitting times.
    Attract,
    /// Law-of-large-numbers times of the observable.
    Slln,
}

impl Command {
    pub fn name(self) -> String {
        self.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub results: serde_json::Value,
    pub tables: Vec<Table>,
    pub summary: String,
}

/// Parses `argv` (including the program name), runs and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("fk-lab {}: {e}", cli.command.name());
            if e.is_precondition() {
                2
            } else {
                3
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={s} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

pub fn run_cli(cli: &Cli) -> Result<String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("missing --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let outcome = pool.install(|| execute(cli.command, &cfg))?;
    write_outputs(&cli.out, cli.command, &cfg, &outcome)?;
    Ok(outcome.summary)
}

pub fn write_outputs(dir: &Path, command: Command, cfg: &RunConfig, outcome: &Outcome) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let hash = cfg.hash();
    write_json(
        &dir.join("results.json"),
        &json!({
            "command": command.name(),
            "config_hash": hash,
            "seed": cfg.seed,
            "results": outcome.results,
        }),
    )?;
    for t in &outcome.tables {
        write_csv(&dir.join(format!("{}.csv", t.name)), t, &hash, cfg.seed)?;
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command: command.name(),
            config: cfg.clone(),
            config_hash: hash,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )
}

/// Runs one command in the current thread pool.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let b = cfg.build()?;
    match command {
        Command::Simulate => cmd_simulate(cfg, &b),
        Command::Eigen => cmd_eigen(cfg, &b),
        Command::Pressure => cmd_pressure(cfg, &b),
        Command::MetCheck => cmd_met(cfg, &b),
        Command::CouplingCheck => cmd_coupling(cfg, &b),
        Command::Conditions => cmd_conditions(cfg, &b),
        Command::Ldp => cmd_ldp(cfg, &b),
        Command::Attract => cmd_attract(cfg, &b),
        Command::Slln => cmd_slln(cfg, &b),
    }
}

fn chain_of(b: &Built) -> Result<&FiniteChainModel<f64>> {
    match &b.model {
        BuiltModel::Chain { chain: Some(c), .. } => Ok(c),
        BuiltModel::Chain { chain: None, .. } => Err(Error::Precondition(
            "the kernel is not stochastic and cannot be simulated".into(),
        )),
        BuiltModel::Rds(_) => Err(Error::Precondition("command needs a chain model".into())),
    }
}

fn markov(b: &Built) -> Result<&dyn MarkovModel<f64>> {
    match &b.model {
        BuiltModel::Rds(m) => Ok(m),
        BuiltModel::Chain { .. } => Ok(chain_of(b)?),
    }
}

fn fmt_value(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Stationary mean of the observable on a chain (exact), if available.
fn chain_mean(b: &Built) -> Result<Option<f64>> {
    match (&b.model, &b.observable.values) {
        (BuiltModel::Chain { kernel, .. }, Some(f)) => {
            let m = build_tilted_matrix(kernel, &PotentialVector::zero(kernel))?;
            let t = perron_triple(&m, kernel.a())?;
            Ok(Some(t.mu.iter().zip(f.values()).map(|(a, b)| a * b).sum()))
        }
        _ => Ok(None),
    }
}

fn cmd_simulate(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let m = markov(b)?;
    let obs = &b.observable.func;
    let runs = par_try_map(cfg.trajectories, |i| {
        let t = simulate(m, &b.start, cfg.horizon, cfg.seed, i as u64)?;
        let norms: Vec<f64> = t.states.iter().map(|u| norm2(u)).collect();
        let values: Vec<f64> = t.states.iter().map(|u| obs.eval(u)).collect();
        Ok((if i < cfg.export { Some(t) } else { None }, norms, values))
    })?;
    let n = runs.len() as f64;
    let mut norms = Table::new("norms", &["k", "mean_norm", "max_norm", "mean_observable"]);
    let mut mean_norm = Vec::new();
    for k in 0..=cfg.horizon {
        let mean = runs.iter().map(|r| r.1[k]).sum::<f64>() / n;
        let max = runs.iter().map(|r| r.1[k]).fold(0.0, f64::max);
        let obs_mean = runs.iter().map(|r| r.2[k]).sum::<f64>() / n;
        norms.push([k as f64, mean, max, obs_mean]);
        mean_norm.push(mean);
    }
    let dim = b.model.dim();
    let mut header = vec!["stream".to_string(), "k".to_string()];
    header.extend((0..dim).map(|j| format!("u{j}")));
    let mut traj = Table {
        name: "trajectories".into(),
        header,
        rows: Vec::new(),
    };
    for t in runs.iter().filter_map(|r| r.0.as_ref()) {
        for (k, u) in t.states.iter().enumerate() {
            let mut row = vec![t.stream.to_string(), k.to_string()];
            row.extend(u.iter().map(|x| x.to_string()));
            traj.rows.push(row);
        }
    }
    let last = *mean_norm.last().unwrap_or(&0.0);
    Ok(Outcome {
        results: json!({ "trajectories": cfg.trajectories, "horizon": cfg.horizon, "mean_norm": mean_norm }),
        tables: vec![norms, traj],
        summary: format!("simulated {} trajectories; mean |u_K| = {}", cfg.trajectories, fmt_value(last)),
    })
}

fn cmd_eigen(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    match &b.model {
        BuiltModel::Chain { kernel, .. } => {
            let v = b.potential.values.as_ref().expect("chain potentials are tabulated");
            let m = build_tilted_matrix(kernel, v)?;
            let t = perron_triple(&m, kernel.a())?;
            let (rh, rmu) = t.residuals(&m);
            let mut table = Table::new("eigen", &["state", "h", "mu"]);
            for i in 0..kernel.n() {
                table.push([i.to_string(), t.h[i].to_string(), t.mu[i].to_string()]);
            }
            Ok(Outcome {
                summary: format!("λ={}", fmt_value(t.lambda)),
                results: json!({ "exact": true, "lambda": t.lambda, "h": t.h, "mu": t.mu,
                                 "residual_h": rh, "residual_mu": rmu }),
                tables: vec![table],
            })
        }
        BuiltModel::Rds(m) => {
            let est = particle_fk(m, &b.potential.func, &[b.start.clone()], cfg.horizon.max(4), &cfg.particle_config())?;
            let mut header = vec!["weight".to_string()];
            header.extend((0..m.map().dim()).map(|j| format!("u{j}")));
            let mut table = Table {
                name: "mu".into(),
                header,
                rows: Vec::new(),
            };
            for (p, w) in est.mu.support().iter().zip(est.mu.weights()) {
                let mut row = vec![w.to_string()];
                row.extend(p.iter().map(|x| x.to_string()));
                table.rows.push(row);
            }
            Ok(Outcome {
                summary: format!("λ={} ± {}", fmt_value(est.lambda), fmt_value(est.lambda_stderr)),
                results: json!({ "exact": false, "lambda": est.lambda, "lambda_stderr": est.lambda_stderr,
                                 "log_lambda": est.log_lambda, "log_lambda_stderr": est.log_lambda_stderr,
                                 "h_start": est.h_start, "h_stderr": est.h_stderr,
                                 "min_ess_fraction": est.min_ess_fraction, "resamples": est.resamples }),
                tables: vec![table],
            })
        }
    }
}

fn cmd_pressure(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let exact = match (&b.model, &b.potential.values) {
        (BuiltModel::Chain { kernel, .. }, Some(v)) => {
            Some(perron_triple(&build_tilted_matrix(kernel, v)?, kernel.a())?.lambda.ln())
        }
        _ => None,
    };
    let m = markov(b)?;
    let est = pressure_estimate(m, &b.potential.func, &b.start, cfg.horizon.max(20), &cfg.particle_config())?;
    let mut table = Table::new("log_mass", &["k", "log_p"]);
    for (k, l) in est.log_p.iter().enumerate() {
        table.push([k as f64, *l]);
    }
    Ok(Outcome {
        summary: format!("Q={} ± {}", fmt_value(est.q), fmt_value(est.stderr)),
        results: json!({ "estimate": est, "exact_log_lambda": exact }),
        tables: vec![table],
    })
}

fn cmd_met(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    match &b.model {
        BuiltModel::Chain { kernel, .. } => {
            let v = b.potential.values.as_ref().expect("chain potentials are tabulated");
            let f = b.observable.values.as_ref().expect("chain observables are tabulated");
            let t = perron_triple(&build_tilted_matrix(kernel, v)?, kernel.a())?;
            let fit = met_residuals(kernel, v, &t, f.values(), cfg.horizon)?;
            let mut table = Table::new("residuals", &["k", "residual"]);
            for (k, r) in fit.residuals.iter().enumerate() {
                table.push([(k + 1) as f64, *r]);
            }
            Ok(Outcome {
                summary: format!("γ={} (exact)", fmt_value(fit.gamma)),
                results: json!({ "exact": true, "fit": fit }),
                tables: vec![table],
            })
        }
        BuiltModel::Rds(m) => {
            let pcfg = cfg.particle_config();
            let k = cfg.horizon.max(4);
            let est = particle_fk(m, &b.potential.func, &[b.start.clone()], k, &pcfg)?;
            let obs = &b.observable.func;
            let f_mean = est.mu.integrate(|u| obs.eval(u));
            let limit = f_mean * est.h_start;
            let f = |u: &[f64]| obs.eval(u);
            let series = met_convergence_mc(m, &b.potential.func, est.lambda, &|_, _| limit, &[&f], &[b.start.clone()], k, &pcfg)?;
            let mut table = Table::new("residuals", &["k", "residual", "noise"]);
            for s in &series {
                for (i, (r, n)) in s.residuals.iter().zip(&s.noise).enumerate() {
                    table.push([(i + 1) as f64, *r, *n]);
                }
            }
            let gamma = series.first().and_then(|s| s.gamma);
            Ok(Outcome {
                summary: match gamma {
                    Some(g) => format!("γ={} (Monte Carlo)", fmt_value(g)),
                    None => "rate not resolved above the Monte Carlo noise".into(),
                },
                results: json!({ "exact": false, "lambda": est.lambda, "series": series }),
                tables: vec![table],
            })
        }
    }
}

fn cmd_coupling(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let plan = cfg.coupling;
    match &b.model {
        BuiltModel::Rds(m) => {
            let gamma_n = match plan.gamma_n {
                Some(g) => g,
                None => {
                    let probe = MapSamplePlan {
                        radii: vec![m.rho()],
                        projections: vec![plan.n],
                        seed: cfg.seed,
                        ..cfg.map_conditions.clone()
                    };
                    verify_map_conditions(m.map(), &probe, None)?.smoothing[0].gamma[0]
                }
            };
            let dim = m.map().dim();
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.pairs)
                .map(|i| {
                    let mut rng = stream_rng(cfg.seed, Purpose::Sampling, i as u64, 3);
                    (uniform_in_ball(dim, m.rho(), &mut rng), uniform_in_ball(dim, m.rho(), &mut rng))
                })
                .collect();
            let squeeze = squeezing_check(m, plan.n, &pairs, plan.r_max, gamma_n, plan.tol, cfg.seed)?;
            let (u, v) = pairs
                .first()
                .ok_or_else(|| Error::Config("coupling.pairs must be positive".into()))?;
            let marg = marginal_ks_check(m, plan.n, u, v, plan.samples, cfg.seed)?;
            let dec = decoupling_check(m, plan.n, u, v, plan.samples, cfg.seed)?;
            let mut table = Table::new("squeezing", &["r", "agreeing", "max_ratio", "first_disagreement"]);
            for r in 0..plan.r_max {
                table.push([
                    (r + 1) as f64,
                    squeeze.counts[r] as f64,
                    squeeze.max_ratio[r],
                    squeeze.first_disagreement[r],
                ]);
            }
            Ok(Outcome {
                summary: format!(
                    "squeezing {}; min KS p = {}; decoupling {} (exact {})",
                    if squeeze.pass { "pass" } else if squeeze.inconclusive { "inconclusive" } else { "fail" },
                    fmt_value(marg.min_p_value),
                    fmt_value(dec.probability),
                    fmt_value(dec.exact)
                ),
                results: json!({ "squeezing": squeeze, "marginals": marg, "decoupling": dec }),
                tables: vec![table],
            })
        }
        BuiltModel::Chain { kernel, .. } => {
            let chain = chain_of(b)?;
            let n = kernel.n();
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| (kernel.points()[i].clone(), kernel.points()[j].clone()))
                .collect();
            let squeeze = squeezing_check(chain, 0, &pairs, plan.r_max, 1.0, plan.tol, cfg.seed)?;
            Ok(Outcome {
                summary: format!("coupled {} state pairs over {} steps", pairs.len(), plan.r_max),
                results: json!({ "squeezing": squeeze }),
                tables: Vec::new(),
            })
        }
    }
}

fn cmd_conditions(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    match &b.model {
        BuiltModel::Chain { kernel, .. } => {
            let v = b.potential.values.as_ref().expect("chain potentials are tabulated");
            let report = verify_kernel_conditions(kernel, v, cfg.kernel_conditions)?;
            let v = report.verdicts;
            Ok(Outcome {
                summary: format!(
                    "feller={} irreducibility={} concentration={} expbound={}",
                    v.feller, v.irreducibility, v.concentration, v.expbound
                ),
                results: serde_json::to_value(&report)?,
                tables: Vec::new(),
            })
        }
        BuiltModel::Rds(m) => {
            let pool_runs = par_try_map(cfg.trajectories.min(20), |i| {
                simulate(m, &b.start, cfg.horizon, cfg.seed, i as u64)
            })?;
            let pool: Vec<Vec<f64>> = pool_runs.into_iter().flat_map(|t| t.states).collect();
            let plan = MapSamplePlan {
                seed: cfg.seed,
                ..cfg.map_conditions.clone()
            };
            let report = verify_map_conditions(m.map(), &plan, Some(&pool))?;
            let absorb = absorbing_ball_check(m, cfg.trajectories, cfg.horizon, cfg.seed)?;
            let mut table = Table::new("smoothing", &["radius", "n", "gamma"]);
            for s in &report.smoothing {
                for (d, g) in s.dims.iter().zip(&s.gamma) {
                    table.push([s.radius, *d as f64, *g]);
                }
            }
            let sub = report.subcontraction.as_ref().map(|s| s.max_ratio);
            Ok(Outcome {
                summary: format!(
                    "subcontraction ratio {}; smoothing monotone: {}",
                    sub.map_or("n/a".into(), fmt_value),
                    report.smoothing.iter().all(|s| s.monotone)
                ),
                results: json!({ "map": report, "absorption": absorb }),
                tables: vec![table],
            })
        }
    }
}

fn cmd_ldp(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let m = markov(b)?;
    let obs = &b.observable.func;
    let ks = cfg.ldp.ks.clone();
    let k_max = cfg.horizon.max(20);
    // Legendre side and default thresholds around the mean
    let (legendre_at, mean, sigma): (Box<dyn Fn(&[f64]) -> Result<Vec<LegendrePoint>>>, f64, f64) = match &b.model {
        BuiltModel::Chain { kernel, .. } => {
            let f = b.observable.values.as_ref().expect("chain observables are tabulated").values().to_vec();
            let h = 1e-3;
            let l = |a: f64| apps::log_perron(kernel, &f, a);
            let s2 = (l(h)? - 2.0 * l(0.0)? + l(-h)?) / (h * h);
            let mean = (l(h)? - l(-h)?) / (2.0 * h);
            let amax = cfg.ldp.alpha_max;
            let kernel = kernel.clone();
            (Box::new(move |xs| legendre_exact(&kernel, &f, xs, amax)), mean, s2.max(0.0).sqrt())
        }
        BuiltModel::Rds(_) => {
            let curve = pressure_curve(m, obs, &cfg.ldp.alphas, &b.start, k_max, 0.1, &cfg.particle_config())?;
            let i0 = curve.alphas.iter().position(|&a| a == 0.0);
            let mean = match i0 {
                Some(i) if i > 0 && i + 1 < curve.alphas.len() => {
                    (curve.q[i + 1] - curve.q[i - 1]) / (curve.alphas[i + 1] - curve.alphas[i - 1])
                }
                _ => 0.0,
            };
            let sigma = curve.sigma2.max(0.0).sqrt();
            (Box::new(move |xs| Ok(legendre_from_curve(&curve, xs))), mean, sigma)
        }
    };
    let xs = if cfg.ldp.xs.is_empty() {
        [-0.5, -0.25, 0.25, 0.5].iter().map(|d| mean + d * sigma).collect()
    } else {
        cfg.ldp.xs.clone()
    };
    let plan = LdpPlan {
        xs: xs.clone(),
        ks,
        trajectories: cfg.trajectories,
        seed: cfg.seed,
    };
    let f = |u: &[f64]| obs.eval(u);
    let emp = ldp_empirical(m, &f, &b.start, &plan)?;
    let leg = legendre_at(&xs)?;
    let rows = ldp_level1(&leg, &emp);
    let mut cells = Table::new("ldp_cells", &["x", "k", "count", "probability", "wilson_lo", "wilson_hi", "observable"]);
    for c in &emp.cells {
        cells.push([
            c.x.to_string(),
            c.k.to_string(),
            c.count.to_string(),
            c.probability.to_string(),
            c.wilson.0.to_string(),
            c.wilson.1.to_string(),
            c.observable.to_string(),
        ]);
    }
    let mut rates = Table::new("ldp_rates", &["x", "legendre", "empirical", "relative_error"]);
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in &rows {
        rates.push([r.x.to_string(), r.legendre.to_string(), opt(r.empirical), opt(r.relative_error)]);
    }
    // level-2 value at the point mass of the start, chains only
    let level2 = match &b.model {
        BuiltModel::Chain { kernel, .. } => {
            let mut sigma = vec![0.0; kernel.n()];
            sigma[chain_of(b)?.state_index(&b.start)] = 1.0;
            Some(rate_function_eval(kernel, &sigma, &default_family(kernel))?)
        }
        BuiltModel::Rds(_) => None,
    };
    Ok(Outcome {
        summary: format!("{} thresholds around mean {}; rate at the start's point mass: {}",
            xs.len(), fmt_value(mean), level2.as_ref().map_or("n/a".into(), |r| fmt_value(r.value))),
        results: json!({ "mean": mean, "sigma": sigma, "empirical": emp, "rows": rows, "point_mass_rate": level2 }),
        tables: vec![cells, rates],
    })
}

fn cmd_attract(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let a = cfg.attract;
    let (m, cloud): (&dyn MarkovModel<f64>, Vec<Vec<f64>>) = match &b.model {
        BuiltModel::Rds(m) => {
            let plan = CloudPlan {
                points: a.cloud_points,
                levels: a.cloud_levels,
                seed: cfg.seed,
            };
            let c = attainability_cloud(m, &[vec![0.0; m.map().dim()]], a.cloud_steps, &plan)?;
            (m, c.points)
        }
        BuiltModel::Chain { kernel, .. } => (
            chain_of(b)?,
            kernel.a().iter().map(|&i| kernel.points()[i].clone()).collect(),
        ),
    };
    let eps = match (a.eps, &b.model) {
        (Some(e), _) => e,
        (None, BuiltModel::Rds(_)) => 2.0 * cloud_resolution(&cloud),
        (None, BuiltModel::Chain { kernel, .. }) => 0.5 * kernel.min_sep().min(1.0),
    };
    let plan = EnsemblePlan {
        per_start: cfg.trajectories,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    let starts = [b.start.clone()];
    let attraction = attraction_counter(m, &cloud, eps, &starts, &plan)?;
    let hitting = hitting_time_stats(m, &starts, eps, &plan)?;
    let counts: Vec<usize> = attraction.counts.iter().flatten().copied().collect();
    let surv = crate::stats::survival_counts(&counts, cfg.horizon);
    let mut table = Table::new("attraction", &["m", "survival"]);
    for (mm, c) in surv.iter().enumerate() {
        table.push([mm as f64, *c as f64 / counts.len().max(1) as f64]);
    }
    Ok(Outcome {
        summary: format!(
            "ε={}: tail rate {}, hitting δ {}",
            fmt_value(eps),
            attraction.tail.map_or("n/a".into(), |t| fmt_value(t.delta)),
            fmt_value(hitting.delta)
        ),
        results: json!({ "eps": eps, "cloud_size": cloud.len(), "attraction": attraction, "hitting": hitting }),
        tables: vec![table],
    })
}

fn cmd_slln(cfg: &RunConfig, b: &Built) -> Result<Outcome> {
    let m = markov(b)?;
    let trajs = par_try_map(cfg.trajectories, |i| simulate(m, &b.start, cfg.horizon, cfg.seed, i as u64))?;
    let obs = &b.observable.func;
    let f = |u: &[f64]| obs.eval(u);
    let mean = match chain_mean(b)? {
        Some(mu) => mu,
        None => {
            let finals: Vec<f64> = trajs
                .iter()
                .map(|t| *apps::running_means(t, &f).last().unwrap_or(&0.0))
                .collect();
            crate::stats::mean(&finals)
        }
    };
    let report = slln_time(&trajs, &f, mean, cfg.slln.eps, cfg.slln.c)?;
    let mut table = Table::new("slln_times", &["stream", "T"]);
    for (i, t) in report.times.iter().enumerate() {
        table.push([i, *t]);
    }
    Ok(Outcome {
        summary: format!(
            "censored {}; exponential fit degrades: {}; heavy tail favoured: {}",
            fmt_value(report.censored_fraction),
            report.exp_fit_degrades,
            report.heavy_tail_favoured
        ),
        results: json!({ "mean": mean, "report": report }),
        tables: vec![table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting() {
        assert_eq!(fmt_value(1.4999999999999998), "1.5");
        assert_eq!(fmt_value(2.0), "2");
        assert_eq!(fmt_value(-1e-15), "0");
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["fk-lab", "eigen", "--bogus"]), 2);
        assert_eq!(run(["fk-lab", "--version"]), 0);
    }
}
