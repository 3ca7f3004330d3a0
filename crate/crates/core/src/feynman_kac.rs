//! Monte Carlo and interacting-particle estimates of the weighted semigroup
//! `𝔓_k^V f(u) = 𝔼_u f(u_k) exp(Σ_{n=1}^k V(u_n))`.
//!
//! Weights are carried in log space throughout. The particle estimator runs
//! independent islands so that every reported quantity comes with a standard
//! error taken across islands.

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::FiniteChainModel;
use crate::error::{check_dim, Error, Result};
use crate::kernel_lab::{FiniteKernel, PotentialVector};
use crate::measure_metrics::DiscreteMeasure;
use crate::rds_core::{par_try_map, step_at, MarkovModel, Trajectory};
use crate::rng::{stream_rng, Purpose};
use crate::scalar::{dist2, Scalar};
use crate::stats;

/// Relative standard error above which a Monte Carlo estimate is flagged.
pub const REL_STDERR_CAP: f64 = 0.1;

type Eval<T> = Arc<dyn Fn(&[T]) -> f64 + Send + Sync>;

/// A bounded Lipschitz potential with its declared constants.
#[derive(Clone)]
pub struct PotentialFn<T> {
    eval: Eval<T>,
    pub lip: f64,
    pub osc: f64,
    pub tag: String,
}

impl<T> fmt::Debug for PotentialFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialFn")
            .field("tag", &self.tag)
            .field("lip", &self.lip)
            .field("osc", &self.osc)
            .finish()
    }
}

impl<T: Scalar> PotentialFn<T> {
    pub fn new(eval: impl Fn(&[T]) -> f64 + Send + Sync + 'static, lip: f64, osc: f64, tag: &str) -> Self {
        PotentialFn {
            eval: Arc::new(eval),
            lip,
            osc,
            tag: tag.to_string(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, 0.0, 0.0, "constant")
    }

    /// A potential vector of an embedded finite chain, looked up at the
    /// nearest kernel point.
    pub fn on_chain(model: &FiniteChainModel<T>, v: &PotentialVector<T>) -> Self {
        Self::on_kernel(model.kernel(), v)
    }

    /// As [`PotentialFn::on_chain`], for kernels that need not be stochastic.
    pub fn on_kernel(kernel: &FiniteKernel<T>, v: &PotentialVector<T>) -> Self {
        let points: Vec<Vec<T>> = kernel.points().to_vec();
        let values: Vec<f64> = v.values().iter().map(|x| x.as_f64()).collect();
        Self::new(
            move |u| {
                let i = points.iter().position(|p| p.as_slice() == u).unwrap_or_else(|| {
                    (0..points.len())
                        .min_by(|&a, &b| dist2(&points[a], u).as_f64().total_cmp(&dist2(&points[b], u).as_f64()))
                        .unwrap_or(0)
                });
                values[i]
            },
            v.lip().as_f64(),
            v.osc().as_f64(),
            "chain",
        )
    }

    /// `δ · min(1, dist(u, cloud)/ε)`: zero on the cloud, `δ` outside its
    /// ε-neighbourhood.
    pub fn distance_ramp(cloud: Vec<Vec<T>>, eps: f64, delta: f64) -> Result<Self> {
        if cloud.is_empty() || !(eps > 0.0) {
            return Err(Error::InvalidInput("ramp needs a nonempty cloud and ε > 0".into()));
        }
        Ok(Self::new(
            move |u| {
                let d = cloud.iter().map(|p| dist2(p, u).as_f64()).fold(f64::INFINITY, f64::min);
                delta * (d / eps).min(1.0)
            },
            delta.abs() / eps,
            delta.abs(),
            "ramp",
        ))
    }

    pub fn eval(&self, u: &[T]) -> f64 {
        (self.eval)(u)
    }

    pub fn shifted(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        PotentialFn {
            eval: Arc::new(move |u| inner(u) + c),
            lip: self.lip,
            osc: self.osc,
            tag: format!("{}+{c}", self.tag),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        PotentialFn {
            eval: Arc::new(move |u| alpha * inner(u)),
            lip: alpha.abs() * self.lip,
            osc: alpha.abs() * self.osc,
            tag: format!("{alpha}·{}", self.tag),
        }
    }

    /// Whether the declared constants hold on the sample (with relative
    /// slack `1e-9`).
    pub fn check_bounds(&self, samples: &[Vec<T>]) -> (bool, bool) {
        let vals: Vec<f64> = samples.iter().map(|u| self.eval(u)).collect();
        let slack = |b: f64| b * (1.0 + 1e-9) + 1e-12;
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let osc_ok = vals.is_empty() || hi - lo <= slack(self.osc);
        let mut lip_ok = true;
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let d = dist2(&samples[i], &samples[j]).as_f64();
                if (vals[i] - vals[j]).abs() > slack(self.lip * d) {
                    lip_ok = false;
                }
            }
        }
        (lip_ok, osc_ok)
    }
}

/// `f(u_k) exp(Σ_{n=1}^k V(u_n))`.
pub fn xi_weight<T: Scalar>(
    traj: &Trajectory<T>,
    v: &PotentialFn<T>,
    k: usize,
    f: &dyn Fn(&[T]) -> f64,
) -> Result<f64> {
    if traj.len() <= k {
        return Err(Error::InvalidInput(format!("trajectory has {} states, need {}", traj.len(), k + 1)));
    }
    let mut s = 0.0;
    for u in &traj.states[1..=k] {
        s += v.eval(u);
    }
    let fk = f(&traj.states[k]);
    if s.is_nan() || fk.is_nan() {
        return Err(Error::Numerical("NaN in potential or test function".into()));
    }
    if fk == 0.0 {
        return Ok(0.0);
    }
    Ok(fk.signum() * (fk.abs().ln() + s).exp())
}

/// Mean ± standard error, with the relative-error flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub flagged: bool,
}

impl McEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let mean = stats::mean(xs);
        let stderr = stats::std_err(xs);
        McEstimate {
            mean,
            stderr,
            n: xs.len(),
            flagged: stderr > REL_STDERR_CAP * mean.abs(),
        }
    }
}

/// Plain Monte Carlo estimate of `𝔓_k^V f(u0)` from `n_traj` independent
/// trajectories (streams `0..n_traj`).
pub fn mc_semigroup<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    f: &(dyn Fn(&[T]) -> f64 + Sync),
    u0: &[T],
    k: usize,
    n_traj: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_traj < 2 {
        return Err(Error::InvalidInput("need at least two trajectories".into()));
    }
    check_dim("start", model.dim(), u0.len())?;
    let logs = par_try_map(n_traj, |i| {
        let mut u = u0.to_vec();
        let mut s = 0.0;
        for step in 1..=k {
            u = step_at(model, &u, seed, i as u64, step)?;
            s += v.eval(&u);
        }
        let fk = f(&u);
        if s.is_nan() || fk.is_nan() {
            return Err(Error::Numerical("NaN in potential or test function".into()));
        }
        Ok((fk, s))
    })?;
    // aggregate around the largest log-weight
    let m = logs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|(fk, s)| fk * (s - m).exp()).collect();
    let est = McEstimate::from_samples(&scaled);
    let scale = m.exp();
    Ok(McEstimate {
        mean: est.mean * scale,
        stderr: est.stderr * scale,
        ..est
    })
}

/// Configuration of the particle estimator. `particles` is the total over
/// all islands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub particles: usize,
    pub islands: usize,
    pub ess_threshold: f64,
    pub resample: bool,
    pub seed: u64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        ParticleConfig {
            particles: 10_000,
            islands: 20,
            ess_threshold: 0.5,
            resample: true,
            seed: 0,
        }
    }
}

impl ParticleConfig {
    fn validate(&self) -> Result<usize> {
        if self.particles < 100 {
            return Err(Error::InvalidInput("particle count must be at least 100".into()));
        }
        if self.islands < 2 || self.particles / self.islands < 10 {
            return Err(Error::InvalidInput("need at least two islands of ten particles".into()));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold < 1.0) {
            return Err(Error::InvalidInput("ESS threshold must lie in (0, 1)".into()));
        }
        Ok(self.particles / self.islands)
    }
}

/// Particles with accumulated log-weights and the log of the normalising
/// constants discarded at resampling.
#[derive(Clone, Debug)]
pub struct WeightedEnsemble<T> {
    pub particles: Vec<Vec<T>>,
    pub logweights: Vec<f64>,
    pub k: usize,
    pub lognorm: f64,
}

impl<T: Scalar> WeightedEnsemble<T> {
    fn new(start: &[Vec<T>], n: usize) -> Self {
        WeightedEnsemble {
            particles: (0..n).map(|i| start[i % start.len()].clone()).collect(),
            logweights: vec![0.0; n],
            k: 0,
            lognorm: 0.0,
        }
    }

    /// `log` of the unnormalised mass `e^{lognorm} · mean(e^{logw})`.
    pub fn log_mass(&self) -> f64 {
        self.lognorm + stats::log_mean_exp(&self.logweights)
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let m = self.logweights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.logweights.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    pub fn ess(&self) -> f64 {
        let w = self.normalized_weights();
        1.0 / w.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn weighted_mean(&self, f: &(dyn Fn(&[T]) -> f64 + Sync)) -> f64 {
        let w = self.normalized_weights();
        self.particles.iter().zip(&w).map(|(u, w)| w * f(u)).sum()
    }
}

/// What one island records along its run.
#[derive(Clone, Debug)]
struct IslandTrace<T> {
    log_z: Vec<f64>,
    /// Weighted means of each observable at `k = 0..=K`.
    obs: Vec<Vec<f64>>,
    min_ess: f64,
    resamples: usize,
    terminal: WeightedEnsemble<T>,
}

const COLLAPSE_STEPS: usize = 3;

#[allow(clippy::too_many_arguments)]
fn run_island<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    start: &[Vec<T>],
    k: usize,
    n: usize,
    cfg: &ParticleConfig,
    island: usize,
    observables: &[&(dyn Fn(&[T]) -> f64 + Sync)],
) -> Result<IslandTrace<T>> {
    let mut ens = WeightedEnsemble::new(start, n);
    let record = |ens: &WeightedEnsemble<T>| observables.iter().map(|f| ens.weighted_mean(*f)).collect::<Vec<_>>();
    let mut log_z = vec![0.0];
    let mut obs = vec![record(&ens)];
    let mut min_ess = 1.0f64;
    let mut resamples = 0;
    let mut collapsed = 0;
    let base = (island * n) as u64;
    for step in 1..=k {
        let moved: Vec<(Vec<T>, f64)> = ens
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let next = step_at(model, u, cfg.seed, base + i as u64, step)?;
                let w = v.eval(&next);
                if w.is_nan() {
                    return Err(Error::Numerical("NaN potential value".into()));
                }
                Ok((next, w))
            })
            .collect::<Result<_>>()?;
        for (i, (u, w)) in moved.into_iter().enumerate() {
            ens.particles[i] = u;
            ens.logweights[i] += w;
        }
        ens.k = step;
        log_z.push(ens.log_mass());
        obs.push(record(&ens));
        let ess = ens.ess();
        min_ess = min_ess.min(ess / n as f64);
        collapsed = if ess < 1.0 + 1e-6 { collapsed + 1 } else { 0 };
        if collapsed >= COLLAPSE_STEPS {
            return Err(Error::EnsembleCollapse(format!(
                "effective sample size 1 for {COLLAPSE_STEPS} consecutive steps at k = {step}; \
                 use more particles or a potential with smaller oscillation"
            )));
        }
        if cfg.resample && ess < cfg.ess_threshold * n as f64 {
            let w = ens.normalized_weights();
            let dist = WeightedIndex::new(&w).map_err(|e| Error::Numerical(e.to_string()))?;
            let mut rng = stream_rng(cfg.seed, Purpose::Resample, island as u64, step as u64);
            let picks: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            ens.lognorm = ens.log_mass();
            ens.particles = picks.iter().map(|&j| ens.particles[j].clone()).collect();
            ens.logweights = vec![0.0; n];
            resamples += 1;
        }
    }
    Ok(IslandTrace {
        log_z,
        obs,
        min_ess,
        resamples,
        terminal: ens,
    })
}

fn run_islands<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    start: &[Vec<T>],
    k: usize,
    cfg: &ParticleConfig,
    observables: &[&(dyn Fn(&[T]) -> f64 + Sync)],
) -> Result<Vec<IslandTrace<T>>> {
    let n = cfg.validate()?;
    if start.is_empty() {
        return Err(Error::InvalidInput("empty initial cloud".into()));
    }
    for u in start {
        check_dim("start", model.dim(), u.len())?;
    }
    par_try_map(cfg.islands, |isl| run_island(model, v, start, k, n, cfg, isl, observables))
}

/// `log mean_i Ẑ_k^{(i)}` over the islands, optionally leaving one out.
fn pooled_log_z<T>(traces: &[IslandTrace<T>], skip: Option<usize>) -> Vec<f64> {
    let k = traces[0].log_z.len();
    (0..k)
        .map(|i| {
            let ls: Vec<f64> = traces
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(*j) != skip)
                .map(|(_, t)| t.log_z[i])
                .collect();
            stats::log_mean_exp(&ls)
        })
        .collect()
}

fn window_fit(log_z: &[f64], lo: usize, hi: usize) -> Result<stats::LinearFit> {
    let ks: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
    stats::ols(&ks, &log_z[lo..=hi]).ok_or_else(|| Error::Numerical("degenerate fit window".into()))
}

/// Jackknife over islands of a statistic of the pooled log-mass series:
/// bias-corrected value and standard error. Pooling before taking logs and
/// the jackknife correction both remove the `O(1/n)` downward bias of
/// `log Ẑ`.
fn jackknife<T>(traces: &[IslandTrace<T>], stat: impl Fn(&[f64]) -> Result<f64>) -> Result<(f64, f64)> {
    let full = stat(&pooled_log_z(traces, None))?;
    let loo = (0..traces.len())
        .map(|i| stat(&pooled_log_z(traces, Some(i))))
        .collect::<Result<Vec<_>>>()?;
    let n = loo.len() as f64;
    let m = stats::mean(&loo);
    let var = loo.iter().map(|x| (x - m).powi(2)).sum::<f64>() * (n - 1.0) / n;
    Ok((n * full - (n - 1.0) * m, var.sqrt()))
}

/// Particle estimates of the eigen-triple.
#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct FkEstimate<T> {
    pub k: usize,
    pub log_lambda: f64,
    pub log_lambda_stderr: f64,
    pub lambda: f64,
    pub lambda_stderr: f64,
    /// `ĥ` at the start (meaningful when the start is a single point): the
    /// fitted intercept of `log Ẑ_k − k log λ̂` over the tail window.
    pub h_start: f64,
    pub h_stderr: f64,
    /// Weighted terminal cloud, islands weighted equally.
    pub mu: DiscreteMeasure<T>,
    /// Island-averaged `log Ẑ_k`, `k = 0..=K`.
    pub log_z: Vec<f64>,
    pub min_ess_fraction: f64,
    pub resamples: usize,
    pub islands: usize,
}

/// Sequential importance sampling with multinomial resampling. The initial
/// cloud is assigned to particles round-robin.
pub fn particle_fk<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    start: &[Vec<T>],
    k: usize,
    cfg: &ParticleConfig,
) -> Result<FkEstimate<T>> {
    if k < 4 {
        return Err(Error::InvalidInput("horizon must be at least 4".into()));
    }
    let traces = run_islands(model, v, start, k, cfg, &[])?;
    summarize(traces, k)
}

fn summarize<T: Scalar>(traces: Vec<IslandTrace<T>>, k: usize) -> Result<FkEstimate<T>> {
    let lo = k / 2;
    let (log_lambda, log_lambda_stderr) = jackknife(&traces, |lz| Ok(window_fit(lz, lo, k)?.slope))?;
    let (h_start, h_stderr) = jackknife(&traces, |lz| Ok(window_fit(lz, lo, k)?.intercept.exp()))?;
    let lambda = log_lambda.exp();
    let islands = traces.len();
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for t in &traces {
        let w = t.terminal.normalized_weights();
        for (u, w) in t.terminal.particles.iter().zip(w) {
            support.push(u.clone());
            weights.push(T::of(w / islands as f64));
        }
    }
    let log_z = pooled_log_z(&traces, None);
    Ok(FkEstimate {
        k,
        log_lambda,
        log_lambda_stderr,
        lambda,
        lambda_stderr: lambda * log_lambda_stderr,
        h_start,
        h_stderr,
        mu: DiscreteMeasure::new(support, weights)?,
        log_z,
        min_ess_fraction: traces.iter().map(|t| t.min_ess).fold(1.0, f64::min),
        resamples: traces.iter().map(|t| t.resamples).sum(),
        islands,
    })
}

/// Particle estimate of `𝔓_k^V f(u0)`: island means of `Ẑ_k · Σ w f / Σ w`.
pub fn particle_semigroup<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    f: &(dyn Fn(&[T]) -> f64 + Sync),
    u0: &[T],
    k: usize,
    cfg: &ParticleConfig,
) -> Result<McEstimate> {
    let traces = run_islands(model, v, &[u0.to_vec()], k, cfg, &[f])?;
    let xs: Vec<f64> = traces.iter().map(|t| t.log_z[k].exp() * t.obs[k][0]).collect();
    Ok(McEstimate::from_samples(&xs))
}

/// `Q̂(V, u0)` with its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct PressureEstimate {
    pub q: f64,
    pub stderr: f64,
    /// Island-averaged `log 𝔓̂_k 𝟏(u0)`.
    pub log_p: Vec<f64>,
    /// Slopes over the two halves of the tail window and whether they agree
    /// within five combined standard errors (plus `1e-3`).
    pub half_slopes: (f64, f64),
    pub affine: bool,
}

/// Slope of `k ↦ log 𝔓̂_k^V 𝟏(u0)` over the last half of `1..=k_max`.
pub fn pressure_estimate<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    u0: &[T],
    k_max: usize,
    cfg: &ParticleConfig,
) -> Result<PressureEstimate> {
    if k_max < 20 {
        return Err(Error::InvalidInput("k_max must be at least 20".into()));
    }
    let traces = run_islands(model, v, &[u0.to_vec()], k_max, cfg, &[])?;
    pressure_from_traces(&traces, k_max)
}

fn pressure_from_traces<T>(traces: &[IslandTrace<T>], k_max: usize) -> Result<PressureEstimate> {
    let slope = |lo: usize, hi: usize| jackknife(traces, move |lz| Ok(window_fit(lz, lo, hi)?.slope));
    let lo = k_max / 2;
    let mid = (lo + k_max) / 2;
    let (q, stderr) = slope(lo, k_max)?;
    let (s1, e1) = slope(lo, mid)?;
    let (s2, e2) = slope(mid, k_max)?;
    let affine = (s1 - s2).abs() <= 5.0 * e1.hypot(e2) + 1e-3;
    if !affine {
        return Err(Error::Numerical(format!(
            "log-mass tail is not affine: half-window slopes {s1:.6} and {s2:.6}"
        )));
    }
    Ok(PressureEstimate {
        q,
        stderr,
        log_p: pooled_log_z(traces, None),
        half_slopes: (s1, s2),
        affine,
    })
}

/// `Q̂` from several starts and its spread.
#[derive(Clone, Debug, Serialize)]
pub struct StartSpread {
    pub q: Vec<f64>,
    pub stderr: Vec<f64>,
    pub spread: f64,
}

pub fn pressure_start_spread<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    starts: &[Vec<T>],
    k_max: usize,
    cfg: &ParticleConfig,
) -> Result<StartSpread> {
    let ests = starts
        .iter()
        .map(|u| pressure_estimate(model, v, u, k_max, cfg))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = ests.iter().map(|e| e.q).collect();
    let (lo, hi) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(StartSpread {
        stderr: ests.iter().map(|e| e.stderr).collect(),
        q,
        spread: hi - lo,
    })
}

/// `max_{u∈B} 𝔓̂_k 𝟏(u) / max_{u∈cloud} 𝔓̂_k 𝟏(u)` for `k = 0..=k_max`.
pub fn comparability_ratio<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    set_b: &[Vec<T>],
    cloud: &[Vec<T>],
    k_max: usize,
    cfg: &ParticleConfig,
) -> Result<Vec<f64>> {
    let sup = |pts: &[Vec<T>]| -> Result<Vec<f64>> {
        let runs = pts
            .iter()
            .map(|u| run_islands(model, v, &[u.clone()], k_max, cfg, &[]))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..=k_max)
            .map(|k| {
                runs.iter()
                    .map(|tr| stats::log_mean_exp(&tr.iter().map(|t| t.log_z[k]).collect::<Vec<_>>()))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    };
    let (b, c) = (sup(set_b)?, sup(cloud)?);
    Ok(b.iter().zip(&c).map(|(x, y)| (x - y).exp()).collect())
}

/// `Q̂(αV)` along a grid, convexity of the curve and the curvature at zero.
#[derive(Clone, Debug, Serialize)]
pub struct PressureCurve {
    pub alphas: Vec<f64>,
    pub q: Vec<f64>,
    pub stderr: Vec<f64>,
    pub second_differences: Vec<f64>,
    pub convex: bool,
    /// `σ̂² = (Q̂(h) − 2Q̂(0) + Q̂(−h))/h²` from a resampling-free run.
    pub sigma2: f64,
    pub h: f64,
}

/// Evaluates the curve with common random numbers across `α` (every point
/// reuses the same particle streams), which makes differences far less noisy
/// than the individual estimates.
pub fn pressure_curve<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    alphas: &[f64],
    u0: &[T],
    k_max: usize,
    h: f64,
    cfg: &ParticleConfig,
) -> Result<PressureCurve> {
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    let ests = alphas
        .iter()
        .map(|&a| pressure_estimate(model, &v.scaled(a), u0, k_max, cfg))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = ests.iter().map(|e| e.q).collect();
    let stderr: Vec<f64> = ests.iter().map(|e| e.stderr).collect();
    let mut second_differences = Vec::new();
    let mut convex = true;
    for i in 1..alphas.len().saturating_sub(1) {
        let (h1, h2) = (alphas[i] - alphas[i - 1], alphas[i + 1] - alphas[i]);
        let d = 2.0 * ((q[i + 1] - q[i]) / h2 - (q[i] - q[i - 1]) / h1) / (h1 + h2);
        let noise = 2.0 * (stderr[i - 1] / h1 + 2.0 * stderr[i] * (1.0 / h1 + 1.0 / h2) + stderr[i + 1] / h2) / (h1 + h2);
        if d < -3.0 * noise - 1e-9 {
            convex = false;
        }
        second_differences.push(d);
    }
    let mut h = h;
    let mut sigma2 = curvature_at_zero(model, v, u0, k_max, h, cfg)?;
    if !(sigma2 >= 0.0) {
        h *= 2.0;
        sigma2 = curvature_at_zero(model, v, u0, k_max, h, cfg)?;
        if !(sigma2 >= 0.0) {
            return Err(Error::Numerical(format!(
                "unstable second difference at zero even with h = {h}"
            )));
        }
    }
    Ok(PressureCurve {
        alphas,
        q,
        stderr,
        second_differences,
        convex,
        sigma2,
        h,
    })
}

fn curvature_at_zero<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    u0: &[T],
    k_max: usize,
    h: f64,
    cfg: &ParticleConfig,
) -> Result<f64> {
    let plain = ParticleConfig { resample: false, ..*cfg };
    let q = |a: f64| -> Result<f64> {
        let traces = run_islands(model, &v.scaled(a), &[u0.to_vec()], k_max, &plain, &[])?;
        Ok(window_fit(&pooled_log_z(&traces, None), k_max / 2, k_max)?.slope)
    };
    Ok((q(h)? - 2.0 * q(0.0)? + q(-h)?) / (h * h))
}

/// Whether a fitted rate rose above the Monte Carlo noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Detectability {
    Resolved,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetSeries {
    pub f_index: usize,
    pub start_index: usize,
    pub start_norm: f64,
    pub residuals: Vec<f64>,
    pub noise: Vec<f64>,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub verdict: Detectability,
}

/// Residuals `|λ̂^{−k} 𝔓̂_k f(u) − ⟨f, μ̂⟩ ĥ(u)|`, `k = 1..=k_max`, with the
/// island standard error as the noise level. A rate is fitted only on the
/// leading stretch where residuals exceed three noise levels.
#[allow(clippy::too_many_arguments)]
pub fn met_convergence_mc<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    lambda: f64,
    limits: &dyn Fn(usize, usize) -> f64,
    fs: &[&(dyn Fn(&[T]) -> f64 + Sync)],
    starts: &[Vec<T>],
    k_max: usize,
    cfg: &ParticleConfig,
) -> Result<Vec<MetSeries>> {
    let mut out = Vec::new();
    for (si, u0) in starts.iter().enumerate() {
        let traces = run_islands(model, v, &[u0.clone()], k_max, cfg, fs)?;
        for fi in 0..fs.len() {
            let target = limits(fi, si);
            let mut residuals = Vec::with_capacity(k_max);
            let mut noise = Vec::with_capacity(k_max);
            for k in 1..=k_max {
                let xs: Vec<f64> = traces
                    .iter()
                    .map(|t| (t.log_z[k] - k as f64 * lambda.ln()).exp() * t.obs[k][fi])
                    .collect();
                residuals.push((stats::mean(&xs) - target).abs());
                noise.push(stats::std_err(&xs));
            }
            let resolved = residuals
                .iter()
                .zip(&noise)
                .take_while(|(r, n)| **r > 3.0 * **n)
                .count();
            let (mut gamma, mut c, mut verdict) = (None, None, Detectability::Inconclusive);
            if resolved >= 3 {
                let ks: Vec<f64> = (1..=resolved).map(|k| k as f64).collect();
                let ls: Vec<f64> = residuals[..resolved].iter().map(|r| r.ln()).collect();
                if let Some(fit) = stats::ols(&ks, &ls) {
                    if fit.slope < 0.0 {
                        let g = -fit.slope;
                        gamma = Some(g);
                        c = Some(
                            ks.iter()
                                .zip(&residuals[..resolved])
                                .map(|(k, r)| r * (g * k).exp())
                                .fold(0.0, f64::max),
                        );
                        verdict = Detectability::Resolved;
                    }
                }
            }
            out.push(MetSeries {
                f_index: fi,
                start_index: si,
                start_norm: crate::scalar::norm2(u0).as_f64(),
                residuals,
                noise,
                gamma,
                c,
                verdict,
            });
        }
    }
    Ok(out)
}
