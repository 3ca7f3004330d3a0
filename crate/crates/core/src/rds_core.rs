//! The kicked system `u_k = S(u_{k−1}) + η_k`.
//!
//! Kicks are `η = Σ_j b_j ξ_j e_j` with i.i.d. `ξ_j` of density
//! `p(x) = (15/16)(1 − x²)²` on `[−1, 1]`, added to the first `kick dim`
//! coordinates of the state. Everything random is addressed through
//! [`stream_rng`], so ensembles are reproducible for any thread count.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics_maps::TimeOneMap;
use crate::error::{check_dim, Error, Result};
use crate::rng::{stream_rng, uniform_in_ball, unit_direction, Purpose, StreamRng};
use crate::scalar::{dist2, norm2, Scalar};
use crate::stats::{self, TailFit};

/// Default censoring horizon for hitting and attraction statistics.
pub const DEFAULT_HORIZON: usize = 1000;

/// Kick density `(15/16)(1 − x²)²`.
pub fn bump_density(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - x * x;
        15.0 / 16.0 * s * s
    }
}

pub fn bump_cdf(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    0.5 + 15.0 / 16.0 * (x - 2.0 * x.powi(3) / 3.0 + x.powi(5) / 5.0)
}

/// Rejection sampler from the uniform proposal; acceptance rate 8/15.
pub fn sample_bump(rng: &mut impl Rng) -> f64 {
    loop {
        let x = 2.0 * rng.random::<f64>() - 1.0;
        let s = 1.0 - x * x;
        if rng.random::<f64>() <= s * s {
            return x;
        }
    }
}

/// Law of the kick `η = Σ b_j ξ_j e_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct KickLaw<T> {
    b: Vec<T>,
    /// `(b₀, s)` when `b_j = b₀ j^{−s}`.
    decay: Option<(f64, f64)>,
}

impl<T: Scalar> KickLaw<T> {
    pub fn new(b: Vec<T>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::InvalidInput("kick law needs at least one mode".into()));
        }
        if b.iter().any(|&x| !(x > T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidInput("kick amplitudes must be positive".into()));
        }
        Ok(KickLaw { b, decay: None })
    }

    /// `b_j = b₀ j^{−s}`, `j = 1..=dim`; requires `s > 1/2`.
    pub fn power_law(dim: usize, b0: f64, s: f64) -> Result<Self> {
        if !(s > 0.5) {
            return Err(Error::InvalidInput(format!("decay exponent {s} must exceed 1/2")));
        }
        let b = (1..=dim).map(|j| T::of(b0 * (j as f64).powf(-s))).collect();
        let mut law = Self::new(b)?;
        law.decay = Some((b0, s));
        Ok(law)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    pub fn decay(&self) -> Option<(f64, f64)> {
        self.decay
    }

    /// `(Σ b_j²)^{1/2}`, a sure bound on `|η|`.
    pub fn norm_bound(&self) -> T {
        norm2(&self.b)
    }

    /// Raw `ξ` vector.
    pub fn sample_xi(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.b.len()).map(|_| sample_bump(rng)).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<T> {
        self.b.iter().map(|&b| b * T::of(sample_bump(rng))).collect()
    }

    /// `∫p` by adaptive quadrature.
    pub fn density_mass() -> f64 {
        stats::integrate(&bump_density, -1.0, 1.0, 1e-12)
    }
}

/// A time-homogeneous Markov chain on `ℝ^dim` driven by a stream generator.
pub trait MarkovModel<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn step(&self, u: &[T], rng: &mut StreamRng) -> Result<Vec<T>>;
}

/// `u ↦ S(u) + η`.
#[derive(Clone, Debug)]
pub struct RdsModel<T: Scalar> {
    map: Arc<dyn TimeOneMap<T>>,
    kicks: KickLaw<T>,
    rho: T,
}

/// Radius `B/(1 − a)` of a ball that `u ↦ S(u) + η` maps into itself when
/// `|S(u)| ≤ a|u|` and `|η| ≤ B`.
pub fn absorbing_radius<T: Scalar>(kick_bound: T, a: T) -> Result<T> {
    if !(a >= T::zero() && a < T::one()) {
        return Err(Error::InvalidInput("contraction factor must lie in [0, 1)".into()));
    }
    Ok(kick_bound / (T::one() - a))
}

impl<T: Scalar> RdsModel<T> {
    pub fn new(map: Arc<dyn TimeOneMap<T>>, kicks: KickLaw<T>, rho: T) -> Result<Self> {
        if kicks.dim() > map.dim() {
            return Err(Error::InvalidInput(format!(
                "kick dimension {} exceeds state dimension {}",
                kicks.dim(),
                map.dim()
            )));
        }
        if !(rho > T::zero()) {
            return Err(Error::InvalidInput("absorbing radius must be positive".into()));
        }
        Ok(RdsModel { map, kicks, rho })
    }

    pub fn map(&self) -> &dyn TimeOneMap<T> {
        self.map.as_ref()
    }

    pub fn map_handle(&self) -> Arc<dyn TimeOneMap<T>> {
        Arc::clone(&self.map)
    }

    pub fn kicks(&self) -> &KickLaw<T> {
        &self.kicks
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    /// `S(u) + Σ b_j ξ_j e_j` for a given `ξ`.
    pub fn kick_image(&self, image: &mut [T], xi: &[f64]) {
        for ((x, &b), &z) in image.iter_mut().zip(&self.kicks.b).zip(xi) {
            *x += b * T::of(z);
        }
    }
}

impl<T: Scalar> MarkovModel<T> for RdsModel<T> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn step(&self, u: &[T], rng: &mut StreamRng) -> Result<Vec<T>> {
        let mut v = self.map.apply(u)?;
        let xi = self.kicks.sample_xi(rng);
        self.kick_image(&mut v, &xi);
        Ok(v)
    }
}

/// `u_0, …, u_K` of one stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub seed: u64,
    pub stream: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Step `k ≥ 1` of stream `stream`, the same draw [`simulate`] uses.
pub fn step_at<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    u: &[T],
    seed: u64,
    stream: u64,
    k: usize,
) -> Result<Vec<T>> {
    let mut rng = stream_rng(seed, Purpose::Trajectory, stream, k as u64);
    let v = model.step(u, &mut rng).map_err(|e| match e {
        Error::BlowUp { step, detail } => Error::BlowUp {
            step: k,
            detail: format!("inner step {step}: {detail}"),
        },
        other => other,
    })?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::BlowUp {
            step: k,
            detail: "non-finite state".into(),
        });
    }
    Ok(v)
}

pub fn simulate<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    u0: &[T],
    k: usize,
    seed: u64,
    stream: u64,
) -> Result<Trajectory<T>> {
    check_dim("initial state", model.dim(), u0.len())?;
    if u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    let mut states = Vec::with_capacity(k + 1);
    states.push(u0.to_vec());
    for step in 1..=k {
        let next = step_at(model, &states[step - 1], seed, stream, step)?;
        states.push(next);
    }
    Ok(Trajectory { states, seed, stream })
}

/// Order-preserving parallel map with early error propagation.
pub(crate) fn par_try_map<R: Send>(n: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    (0..n).into_par_iter().map(f).collect()
}

pub(crate) fn to_scalar<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Monte Carlo sampling of attainability sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPlan {
    /// Cloud size at every stage.
    pub points: usize,
    /// Mesh levels per kick coordinate (includes both endpoints).
    pub levels: usize,
    pub seed: u64,
}

impl Default for CloudPlan {
    fn default() -> Self {
        CloudPlan {
            points: 10_000,
            levels: 9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct AttainabilityCloud<T> {
    pub points: Vec<Vec<T>>,
    /// Largest norm in the cloud at stages `0..=k`.
    pub stage_max_norm: Vec<f64>,
}

/// Sampled `𝒜(k, B)`: each stage maps a random parent through `S` and adds a
/// kick whose coordinates are drawn from a uniform mesh of `[−1, 1]`.
/// Parent and mesh choices depend only on `(seed, point, stage)`, so clouds
/// grown from equally sized sources share their random numbers.
pub fn attainability_cloud<T: Scalar>(
    model: &RdsModel<T>,
    source: &[Vec<T>],
    k: usize,
    plan: &CloudPlan,
) -> Result<AttainabilityCloud<T>> {
    if source.is_empty() {
        return Err(Error::InvalidInput("empty source set".into()));
    }
    if plan.points == 0 || plan.levels < 2 {
        return Err(Error::InvalidInput("cloud plan needs points ≥ 1 and levels ≥ 2".into()));
    }
    for u in source {
        check_dim("source point", model.dim(), u.len())?;
    }
    let max_norm = |c: &[Vec<T>]| c.iter().map(|u| norm2(u).as_f64()).fold(0.0, f64::max);
    let mut cloud: Vec<Vec<T>> = source.to_vec();
    let mut stage_max_norm = vec![max_norm(&cloud)];
    let step = 2.0 / (plan.levels - 1) as f64;
    for stage in 1..=k {
        let prev = &cloud;
        let next = par_try_map(plan.points, |i| {
            let mut rng = stream_rng(plan.seed, Purpose::Cloud, i as u64, stage as u64);
            let parent = rng.random_range(0..prev.len());
            let xi: Vec<f64> = (0..model.kicks().dim())
                .map(|_| -1.0 + step * rng.random_range(0..plan.levels) as f64)
                .collect();
            let mut v = model.map().apply(&prev[parent])?;
            model.kick_image(&mut v, &xi);
            Ok(v)
        })?;
        cloud = next;
        stage_max_norm.push(max_norm(&cloud));
    }
    Ok(AttainabilityCloud {
        points: cloud,
        stage_max_norm,
    })
}

/// Hausdorff distance between two finite clouds.
pub fn hausdorff<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> f64 {
    let one_sided = |x: &[Vec<T>], y: &[Vec<T>]| {
        x.par_iter()
            .map(|p| y.iter().map(|q| dist2(p, q).as_f64()).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

#[derive(Clone, Debug, Serialize)]
pub struct HausdorffScan {
    pub radius: f64,
    pub k: usize,
    /// Decreasing.
    pub eps: Vec<f64>,
    pub distances: Vec<f64>,
    /// Distances nonincreasing along the decreasing ε grid.
    pub monotone: bool,
}

/// `d_H(𝒜(k, B_{R+ε}), 𝒜(k, B_R))` along a decreasing ε grid, with the balls
/// sampled as dilations of one fixed point set.
pub fn hausdorff_scan<T: Scalar>(
    model: &RdsModel<T>,
    radius: f64,
    eps: &[f64],
    k: usize,
    plan: &CloudPlan,
) -> Result<HausdorffScan> {
    if eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidInput("ε grid must be positive".into()));
    }
    let dim = model.dim();
    let base: Vec<Vec<f64>> = (0..plan.points)
        .map(|i| {
            let mut rng = stream_rng(plan.seed, Purpose::Sampling, i as u64, 0);
            uniform_in_ball(dim, 1.0, &mut rng)
        })
        .collect();
    let ball = |r: f64| -> Vec<Vec<T>> {
        base.iter()
            .map(|z| z.iter().map(|&x| T::of(r * x)).collect())
            .collect()
    };
    let reference = attainability_cloud(model, &ball(radius), k, plan)?.points;
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let distances = eps
        .iter()
        .map(|&e| Ok(hausdorff(&attainability_cloud(model, &ball(radius + e), k, plan)?.points, &reference)))
        .collect::<Result<Vec<_>>>()?;
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(HausdorffScan {
        radius,
        k,
        eps,
        distances,
        monotone,
    })
}

/// Ensemble size, horizon and seed for per-start ensembles. Trajectory `j`
/// from start `i` uses stream `i · per_start + j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub per_start: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HittingReport {
    pub eps: f64,
    /// `τ_ε` per start and replicate; `None` when censored at the horizon.
    pub times: Vec<Vec<Option<usize>>>,
    pub censored_fraction: f64,
    /// Largest δ (bisection, capped at `DELTA_CAP`) with
    /// `max_start mean e^{δτ} ≤ 2`, censored times counted at the horizon.
    pub delta: f64,
    pub exp_moment: Vec<f64>,
    pub tail: Option<TailFit>,
}

const DELTA_CAP: f64 = 50.0;

/// Largest δ ∈ [0, cap] with `max_i mean_j e^{δ t_ij} ≤ 2`.
fn exp_moment_delta(groups: &[Vec<f64>]) -> f64 {
    let worst = |d: f64| {
        groups
            .iter()
            .map(|g| stats::log_mean_exp(&g.iter().map(|t| d * t).collect::<Vec<_>>()))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let target = 2f64.ln();
    if worst(DELTA_CAP) <= target {
        return DELTA_CAP;
    }
    let (mut lo, mut hi) = (0.0, DELTA_CAP);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if worst(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `τ_ε = min{k ≥ 0 : |u_k| ≤ ε}` over ensembles from each start.
pub fn hitting_time_stats<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    starts: &[Vec<T>],
    eps: f64,
    plan: &EnsemblePlan,
) -> Result<HittingReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("ε must be positive".into()));
    }
    for u in starts {
        check_dim("start", model.dim(), u.len())?;
    }
    let per = plan.per_start;
    let flat = par_try_map(starts.len() * per, |idx| {
        let mut u = starts[idx / per].clone();
        for k in 0..=plan.horizon {
            if norm2(&u).as_f64() <= eps {
                return Ok(Some(k));
            }
            if k < plan.horizon {
                u = step_at(model, &u, plan.seed, idx as u64, k + 1)?;
            }
        }
        Ok(None)
    })?;
    let times: Vec<Vec<Option<usize>>> = flat.chunks(per.max(1)).map(|c| c.to_vec()).collect();
    let as_f = |t: &Option<usize>| t.unwrap_or(plan.horizon) as f64;
    let groups: Vec<Vec<f64>> = times.iter().map(|g| g.iter().map(as_f).collect()).collect();
    let delta = exp_moment_delta(&groups);
    let exp_moment = groups
        .iter()
        .map(|g| stats::log_mean_exp(&g.iter().map(|t| delta * t).collect::<Vec<_>>()).exp())
        .collect();
    let censored = flat.iter().filter(|t| t.is_none()).count();
    let all: Vec<usize> = flat.iter().map(|t| t.unwrap_or(plan.horizon)).collect();
    Ok(HittingReport {
        eps,
        times,
        censored_fraction: censored as f64 / flat.len().max(1) as f64,
        delta,
        exp_moment,
        tail: stats::geometric_tail(&all, 20),
    })
}

/// Grid hash of a cloud on its first (up to) three coordinates, used to
/// answer "is `u` within ε of the cloud" exactly.
pub struct CloudIndex<'a, T> {
    points: &'a [Vec<T>],
    cell: f64,
    proj: usize,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a, T: Scalar> CloudIndex<'a, T> {
    pub fn new(points: &'a [Vec<T>], cell: f64) -> Self {
        let proj = points.first().map_or(0, |p| p.len().min(3));
        let mut idx = CloudIndex {
            points,
            cell,
            proj,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = idx.key(p);
            idx.cells.entry(key).or_default().push(i);
        }
        idx
    }

    fn key(&self, p: &[T]) -> [i64; 3] {
        let mut key = [0i64; 3];
        for (c, x) in key.iter_mut().zip(p).take(self.proj) {
            *c = (x.as_f64() / self.cell).floor() as i64;
        }
        key
    }

    /// Whether some cloud point lies within `eps ≤ cell` of `u`.
    pub fn within(&self, u: &[T], eps: f64) -> bool {
        debug_assert!(eps <= self.cell * (1.0 + 1e-12));
        let center = self.key(u);
        let span = |d: usize| if d < self.proj { -1..=1 } else { 0..=0 };
        for a in span(0) {
            for b in span(1) {
                for c in span(2) {
                    let key = [center[0] + a, center[1] + b, center[2] + c];
                    if let Some(ids) = self.cells.get(&key) {
                        if ids.iter().any(|&i| dist2(u, &self.points[i]).as_f64() <= eps) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Median nearest-neighbour distance over (a deterministic subsample of at
/// most 1000 points of) the cloud.
pub fn cloud_resolution<T: Scalar>(points: &[Vec<T>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let stride = (points.len() / 1000).max(1);
    let mut nn: Vec<f64> = (0..points.len())
        .step_by(stride)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| dist2(&points[i], q).as_f64())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

#[derive(Clone, Debug, Serialize)]
pub struct AttractionReport {
    pub eps: f64,
    pub resolution: f64,
    /// `N^ε` per start and replicate.
    pub counts: Vec<Vec<usize>>,
    /// Trajectories still outside `𝒜_ε` at the horizon.
    pub censored: usize,
    pub tail: Option<TailFit>,
    /// `δ/2` from the tail fit, and `mean e^{αN^ε}` per start.
    pub alpha: f64,
    pub exp_moment: Vec<f64>,
}

/// `N^ε = #{1 ≤ m ≤ K : dist(u_m, 𝒜̂) > ε}` over ensembles from each start.
pub fn attraction_counter<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    cloud: &[Vec<T>],
    eps: f64,
    starts: &[Vec<T>],
    plan: &EnsemblePlan,
) -> Result<AttractionReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty attractor cloud".into()));
    }
    let resolution = cloud_resolution(cloud);
    if !(eps > 0.0) || eps < resolution {
        return Err(Error::Precondition(format!(
            "ε = {eps:e} is below the cloud resolution {resolution:e}"
        )));
    }
    for u in starts {
        check_dim("start", model.dim(), u.len())?;
    }
    let index = CloudIndex::new(cloud, eps);
    let per = plan.per_start;
    let flat = par_try_map(starts.len() * per, |idx| {
        let mut u = starts[idx / per].clone();
        let mut count = 0usize;
        let mut outside = false;
        for m in 1..=plan.horizon {
            u = step_at(model, &u, plan.seed, idx as u64, m)?;
            outside = !index.within(&u, eps);
            count += outside as usize;
        }
        Ok((count, outside))
    })?;
    let all: Vec<usize> = flat.iter().map(|c| c.0).collect();
    let tail = stats::geometric_tail(&all, 20);
    let alpha = tail.map_or(0.0, |t| (t.delta / 2.0).max(0.0));
    let counts: Vec<Vec<usize>> = all.chunks(per.max(1)).map(|c| c.to_vec()).collect();
    let exp_moment = counts
        .iter()
        .map(|g| stats::log_mean_exp(&g.iter().map(|&n| alpha * n as f64).collect::<Vec<_>>()).exp())
        .collect();
    Ok(AttractionReport {
        eps,
        resolution,
        counts,
        censored: flat.iter().filter(|c| c.1).count(),
        tail,
        alpha,
        exp_moment,
    })
}

/// What [`verify_map_conditions`] samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSamplePlan {
    pub radii: Vec<f64>,
    /// Random points per radius (on top of coordinate probes).
    pub samples: usize,
    /// Iterates examined for the norm decay.
    pub n_max: usize,
    /// Floor `r` in `|S^n u| ≤ a|u| ∨ r`.
    pub r: f64,
    /// Projection dimensions `N` for the smoothing constant.
    pub projections: Vec<usize>,
    /// Random pairs per radius for the smoothing constant, and pairs drawn
    /// from the pool for the subcontraction check.
    pub pairs: usize,
    /// Number of leading coordinates probed along axes.
    pub axis_probes: usize,
    pub e_tol: f64,
    pub seed: u64,
}

impl Default for MapSamplePlan {
    fn default() -> Self {
        MapSamplePlan {
            radii: vec![1.0],
            samples: 32,
            n_max: 8,
            r: 0.0,
            projections: vec![1, 2, 4],
            pairs: 64,
            axis_probes: 4,
            e_tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormDecay {
    pub radius: f64,
    /// `a(n) = max |S^n u| / |u|` over samples with `|S^n u| > r`.
    pub a_n: Vec<f64>,
    /// First `n` whose tail supremum of `a(·)` is below one, and that supremum.
    pub n0: Option<usize>,
    pub a: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Smoothing {
    pub radius: f64,
    pub dims: Vec<usize>,
    pub gamma: Vec<f64>,
    pub monotone: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Subcontraction {
    pub pairs: usize,
    pub max_ratio: f64,
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MapConditionsReport {
    pub decay: Vec<NormDecay>,
    pub smoothing: Vec<Smoothing>,
    pub subcontraction: Option<Subcontraction>,
}

fn axis<T: Scalar>(dim: usize, j: usize, r: f64) -> Vec<T> {
    let mut u = vec![T::zero(); dim];
    u[j] = T::of(r);
    u
}

fn tail_projection_norm<T: Scalar>(a: &[T], b: &[T], n: usize) -> f64 {
    a.iter()
        .zip(b)
        .skip(n)
        .map(|(&x, &y)| ((x - y) * (x - y)).as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Empirical norm decay, smoothing constants `γ_N(R)` and, when a pool of
/// points is given, the subcontraction ratio in the map's auxiliary metric.
pub fn verify_map_conditions<T: Scalar>(
    map: &dyn TimeOneMap<T>,
    plan: &MapSamplePlan,
    pool: Option<&[Vec<T>]>,
) -> Result<MapConditionsReport> {
    let dim = map.dim();
    let mut decay = Vec::new();
    let mut smoothing = Vec::new();
    for (ri, &radius) in plan.radii.iter().enumerate() {
        let mut probes: Vec<Vec<T>> = (0..plan.axis_probes.min(dim)).map(|j| axis(dim, j, radius)).collect();
        probes.extend((0..plan.samples).map(|i| {
            let mut rng = stream_rng(plan.seed, Purpose::Sampling, (ri * 1_000_000 + i) as u64, 0);
            to_scalar(&uniform_in_ball(dim, radius, &mut rng))
        }));
        let ratios = par_try_map(probes.len(), |i| {
            let u0 = &probes[i];
            let n0 = norm2(u0).as_f64();
            let mut u = u0.clone();
            let mut out = Vec::with_capacity(plan.n_max);
            for _ in 0..plan.n_max {
                u = map.apply(&u)?;
                let n = norm2(&u).as_f64();
                out.push(if n > plan.r && n0 > 0.0 { n / n0 } else { 0.0 });
            }
            Ok(out)
        })?;
        let a_n: Vec<f64> = (0..plan.n_max)
            .map(|n| ratios.iter().map(|r| r[n]).fold(0.0, f64::max))
            .collect();
        let mut tail_sup = vec![0.0f64; plan.n_max + 1];
        for n in (0..plan.n_max).rev() {
            tail_sup[n] = tail_sup[n + 1].max(a_n[n]);
        }
        let n0 = (0..plan.n_max).find(|&n| tail_sup[n] < 1.0);
        decay.push(NormDecay {
            radius,
            a: n0.map_or(f64::NAN, |n| tail_sup[n]),
            n0: n0.map(|n| n + 1),
            a_n,
        });

        let mut dims = plan.projections.clone();
        dims.retain(|&n| n < dim);
        dims.sort_unstable();
        dims.dedup();
        // random pairs, shared by all N
        let pairs: Vec<(Vec<T>, Vec<T>)> = (0..plan.pairs)
            .map(|i| {
                let mut rng = stream_rng(plan.seed, Purpose::Sampling, (ri * 1_000_000 + i) as u64, 1);
                (
                    to_scalar(&uniform_in_ball(dim, radius, &mut rng)),
                    to_scalar(&uniform_in_ball(dim, radius, &mut rng)),
                )
            })
            .collect();
        let images = par_try_map(pairs.len(), |i| Ok((map.apply(&pairs[i].0)?, map.apply(&pairs[i].1)?)))?;
        let zero_image = map.apply(&vec![T::zero(); dim])?;
        let mut gamma = Vec::with_capacity(dims.len());
        for &n in &dims {
            let mut g: f64 = 0.0;
            for ((u1, u2), (s1, s2)) in pairs.iter().zip(&images) {
                let d = dist2(u1, u2).as_f64();
                if d > 0.0 {
                    g = g.max(tail_projection_norm(s1, s2, n) / d);
                }
            }
            // aligned probes along e_{N+1}: from the origin, and around a random point
            let e = axis::<T>(dim, n, radius);
            g = g.max(tail_projection_norm(&map.apply(&e)?, &zero_image, n) / radius);
            let mut rng = stream_rng(plan.seed, Purpose::Sampling, (ri * 1_000_000 + n) as u64, 2);
            let base: Vec<T> = to_scalar(&uniform_in_ball(dim, 0.5 * radius, &mut rng));
            let mut shifted = base.clone();
            let h = 0.25 * radius;
            shifted[n] += T::of(h);
            let d = dist2(&base, &shifted).as_f64();
            g = g.max(tail_projection_norm(&map.apply(&shifted)?, &map.apply(&base)?, n) / d);
            gamma.push(g);
        }
        let monotone = gamma.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
            && (gamma.len() < 2 || gamma[gamma.len() - 1] < gamma[0]);
        smoothing.push(Smoothing {
            radius,
            dims,
            gamma,
            monotone,
        });
    }
    let subcontraction = match pool {
        Some(pool) => Some(subcontraction_check(map, pool, plan.pairs, plan.e_tol, plan.seed)?),
        None => None,
    };
    Ok(MapConditionsReport {
        decay,
        smoothing,
        subcontraction,
    })
}

/// `max d′(S u, S v)/d′(u, v)` over `pairs` random distinct pairs of the
/// pool (all pairs when fewer exist).
pub fn subcontraction_check<T: Scalar>(
    map: &dyn TimeOneMap<T>,
    pool: &[Vec<T>],
    pairs: usize,
    tol: f64,
    seed: u64,
) -> Result<Subcontraction> {
    if pool.len() < 2 {
        return Err(Error::InvalidInput("subcontraction check needs at least two points".into()));
    }
    let images = par_try_map(pool.len(), |i| map.apply(&pool[i]))?;
    let n = pool.len();
    let total = n * (n - 1) / 2;
    let chosen: Vec<(usize, usize)> = if pairs >= total {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = stream_rng(seed, Purpose::Sampling, 0, 3);
        (0..pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let ratios: Vec<f64> = chosen
        .par_iter()
        .map(|&(i, j)| {
            let d = map.aux_distance(&pool[i], &pool[j]).as_f64();
            if d > 0.0 {
                map.aux_distance(&images[i], &images[j]).as_f64() / d
            } else {
                0.0
            }
        })
        .collect();
    let (mut max_ratio, mut worst) = (0.0, None);
    for (r, &p) in ratios.iter().zip(&chosen) {
        if *r > max_ratio || r.is_nan() {
            max_ratio = *r;
            worst = Some(p);
        }
    }
    Ok(Subcontraction {
        pairs: chosen.len(),
        max_ratio,
        worst,
        tol,
        pass: max_ratio <= 1.0 + tol,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AbsorptionReport {
    pub rho: f64,
    pub start_radius: f64,
    pub horizon: usize,
    pub trajectories: usize,
    /// One past the last step any trajectory spent outside `B_ρ`.
    pub k0: usize,
    pub pass: bool,
}

/// Runs trajectories from the sphere of radius `3ρ` and records when they
/// enter `B_ρ` for good.
pub fn absorbing_ball_check<T: Scalar>(
    model: &RdsModel<T>,
    trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<AbsorptionReport> {
    let rho = model.rho().as_f64();
    let start_radius = 3.0 * rho;
    let last_out = par_try_map(trajectories, |i| {
        let mut rng = stream_rng(seed, Purpose::Sampling, i as u64, 4);
        let dir = unit_direction(model.dim(), &mut rng);
        let mut u: Vec<T> = dir.iter().map(|&x| T::of(start_radius * x)).collect();
        let mut last = 0usize;
        for k in 1..=horizon {
            u = step_at(model, &u, seed, i as u64, k)?;
            if norm2(&u).as_f64() > rho {
                last = k;
            }
        }
        Ok(last)
    })?;
    let k0 = last_out.iter().copied().max().unwrap_or(0);
    Ok(AbsorptionReport {
        rho,
        start_radius,
        horizon,
        trajectories,
        k0,
        pass: k0 < horizon,
    })
}
