//! Coupled pairs of trajectories: kicks on the first `N` coordinates are
//! maximally coupled one coordinate at a time, kicks on the remaining
//! coordinates are shared.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::FiniteChainModel;
use crate::error::{check_dim, Error, Result};
use crate::feynman_kac::{particle_semigroup, ParticleConfig, PotentialFn};
use crate::rds_core::{bump_cdf, bump_density, par_try_map, sample_bump, MarkovModel, RdsModel};
use crate::rng::{stream_rng, Purpose, StreamRng};
use crate::scalar::{dist2, Scalar};
use crate::stats::{self, KsResult};

/// Quadrature tolerance for the coupling constants.
pub const QUAD_TOL: f64 = 1e-10;

/// One draw of the maximal coupling of `b·ξ` and `δ + b·ξ′`, `ξ, ξ′ ~ p`.
/// On the coupled event `ξ′ = ξ − δ/b` exactly.
pub fn maximal_coupling_1d(delta: f64, b: f64, rng: &mut impl Rng) -> (f64, f64, bool) {
    let s = delta / b;
    let xi = sample_bump(rng);
    let px = bump_density(xi);
    if rng.random::<f64>() * px <= bump_density(xi - s) {
        return (xi, xi - s, true);
    }
    loop {
        let eta = sample_bump(rng);
        if rng.random::<f64>() * bump_density(eta) > bump_density(eta + s) {
            return (xi, eta, false);
        }
    }
}

/// `TV(p, p(· − s))` by adaptive quadrature, split where the two densities
/// cross.
pub fn tv_shift(s: f64) -> f64 {
    let s = s.abs();
    if s >= 2.0 {
        return 1.0;
    }
    let overlap = |x: f64| bump_density(x).min(bump_density(x - s));
    let left = stats::integrate(&overlap, s - 1.0, 0.5 * s, QUAD_TOL);
    let right = stats::integrate(&overlap, 0.5 * s, 1.0, QUAD_TOL);
    (1.0 - left - right).max(0.0)
}

/// Lipschitz constant of `s ↦ TV(p, p(· − s))`, from finite differences of
/// the quadrature values on a grid of `[0, 2]`.
pub fn tv_lipschitz() -> f64 {
    let h = 1e-4;
    (0..200)
        .map(|i| {
            let s = 2.0 * i as f64 / 200.0;
            (tv_shift(s + h) - tv_shift(s)) / h
        })
        .fold(0.0, f64::max)
}

/// `C_N = Σ_{j ≤ N} Lip(TV)/b_j`: decoupling probability per unit distance.
pub fn coupling_constant<T: Scalar>(b: &[T], n: usize) -> f64 {
    let lip = tv_lipschitz();
    b.iter().take(n).map(|x| lip / x.as_f64()).sum()
}

/// Output of one coupled transition.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledStep<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    /// Kicks added to each side (empty for models without additive kicks).
    pub kick_u: Vec<T>,
    pub kick_v: Vec<T>,
    /// Every coupled coordinate agreed.
    pub agree: bool,
}

/// Markov models with a coupling of two copies.
pub trait CoupledModel<T: Scalar>: MarkovModel<T> {
    /// One coupled transition from `(u, v)` with `n` coupled coordinates.
    fn coupled_step(&self, n: usize, u: &[T], v: &[T], rng: &mut StreamRng) -> Result<CoupledStep<T>>;
}

impl<T: Scalar> CoupledModel<T> for RdsModel<T> {
    fn coupled_step(&self, n: usize, u: &[T], v: &[T], rng: &mut StreamRng) -> Result<CoupledStep<T>> {
        let kicks = self.kicks();
        if n > kicks.dim() {
            return Err(Error::Precondition(format!(
                "cannot couple {n} coordinates with {} kicked ones",
                kicks.dim()
            )));
        }
        let mut su = self.map().apply(u)?;
        let mut sv = self.map().apply(v)?;
        let mut kick_u = Vec::with_capacity(kicks.dim());
        let mut kick_v = Vec::with_capacity(kicks.dim());
        let mut agree = true;
        for (j, &b) in kicks.b().iter().enumerate() {
            if j < n {
                // u receives ξ′, v receives ξ: agreement iff S(u)_j + bξ′ = S(v)_j + bξ
                let delta = (su[j] - sv[j]).as_f64();
                let (xi, xi_p, coupled) = maximal_coupling_1d(delta, b.as_f64(), rng);
                let (ku, kv) = (b * T::of(xi_p), b * T::of(xi));
                su[j] += ku;
                if coupled {
                    sv[j] = su[j];
                } else {
                    sv[j] += kv;
                    agree = false;
                }
                kick_u.push(ku);
                kick_v.push(kv);
            } else {
                let k = b * T::of(sample_bump(rng));
                su[j] += k;
                sv[j] += k;
                kick_u.push(k);
                kick_v.push(k);
            }
        }
        Ok(CoupledStep {
            u: su,
            v: sv,
            kick_u,
            kick_v,
            agree,
        })
    }
}

impl<T: Scalar> CoupledModel<T> for FiniteChainModel<T> {
    /// Maximal coupling of the two transition rows; `n` is ignored.
    fn coupled_step(&self, _n: usize, u: &[T], v: &[T], rng: &mut StreamRng) -> Result<CoupledStep<T>> {
        let (i, j) = (self.state_index(u), self.state_index(v));
        let p = self.kernel().p();
        let size = self.kernel().n();
        let common: Vec<f64> = (0..size).map(|s| p[(i, s)].min(p[(j, s)]).as_f64()).collect();
        let beta: f64 = common.iter().sum();
        let pick = |w: &[f64], rng: &mut StreamRng| {
            let total: f64 = w.iter().sum();
            let mut x = rng.random::<f64>() * total;
            for (s, &ws) in w.iter().enumerate() {
                if x < ws {
                    return s;
                }
                x -= ws;
            }
            w.iter().rposition(|&ws| ws > 0.0).unwrap_or(0)
        };
        let (a, b) = if rng.random::<f64>() < beta {
            let s = pick(&common, rng);
            (s, s)
        } else {
            let ru: Vec<f64> = (0..size).map(|s| p[(i, s)].as_f64() - common[s]).collect();
            let rv: Vec<f64> = (0..size).map(|s| p[(j, s)].as_f64() - common[s]).collect();
            (pick(&ru, rng), pick(&rv, rng))
        };
        Ok(CoupledStep {
            u: self.point(a).to_vec(),
            v: self.point(b).to_vec(),
            kick_u: Vec::new(),
            kick_v: Vec::new(),
            agree: a == b,
        })
    }
}

/// A coupled pair of trajectories.
#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct CoupledPair<T> {
    pub u: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub n: usize,
    /// `agree[k−1]`: the coupled coordinates agree after step `k`.
    pub agree: Vec<bool>,
    /// Uncoupled kicks identical bit for bit at every step.
    pub tail_identical: bool,
    pub seed: u64,
    pub stream: u64,
}

pub fn coupled_trajectory<T: Scalar, M: CoupledModel<T> + ?Sized>(
    model: &M,
    n: usize,
    u0: &[T],
    v0: &[T],
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<CoupledPair<T>> {
    check_dim("first start", model.dim(), u0.len())?;
    check_dim("second start", model.dim(), v0.len())?;
    let mut u = vec![u0.to_vec()];
    let mut v = vec![v0.to_vec()];
    let mut agree = Vec::with_capacity(steps);
    let mut tail_identical = true;
    for k in 1..=steps {
        let mut rng = stream_rng(seed, Purpose::Coupling, stream, k as u64);
        let st = model.coupled_step(n, &u[k - 1], &v[k - 1], &mut rng)?;
        tail_identical &= st
            .kick_u
            .iter()
            .zip(&st.kick_v)
            .skip(n)
            .all(|(a, b)| a.to_bits_eq(b));
        agree.push(st.agree);
        u.push(st.u);
        v.push(st.v);
    }
    Ok(CoupledPair {
        u,
        v,
        n,
        agree,
        tail_identical,
        seed,
        stream,
    })
}

trait BitsEq {
    fn to_bits_eq(&self, other: &Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(&self, other: &Self) -> bool {
        // both types are IEEE; compare through f64, which is injective on them
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}

/// KS tests of the coupled kicks' marginals against the kick law, one per
/// side and coupled coordinate.
#[derive(Clone, Debug, Serialize)]
pub struct MarginalReport {
    pub samples: usize,
    pub tests: Vec<(String, KsResult)>,
    pub min_p_value: f64,
}

/// Draws `samples` coupled steps from the fixed pair `(u, v)` and tests
/// `kick_j / b_j` on both sides against the density `p`.
pub fn marginal_ks_check<T: Scalar>(
    model: &RdsModel<T>,
    n: usize,
    u: &[T],
    v: &[T],
    samples: usize,
    seed: u64,
) -> Result<MarginalReport> {
    let steps = par_try_map(samples, |i| {
        let mut rng = stream_rng(seed, Purpose::Coupling, i as u64, 0);
        model.coupled_step(n, u, v, &mut rng)
    })?;
    let b = model.kicks().b();
    let mut tests = Vec::new();
    for j in 0..n.min(b.len()) {
        for (side, pick) in [("u", 0), ("v", 1)] {
            let mut xs: Vec<f64> = steps
                .iter()
                .map(|s| {
                    let k = if pick == 0 { s.kick_u[j] } else { s.kick_v[j] };
                    (k / b[j]).as_f64()
                })
                .collect();
            tests.push((format!("{side}:{j}"), stats::ks_one_sample(&mut xs, bump_cdf)));
        }
    }
    let min_p_value = tests.iter().map(|t| t.1.p_value).fold(1.0, f64::min);
    Ok(MarginalReport {
        samples,
        tests,
        min_p_value,
    })
}

/// Conditional squeezing on the all-agree event.
#[derive(Clone, Debug, Serialize)]
pub struct SqueezingReport {
    pub gamma_n: f64,
    pub tol: f64,
    /// Per `r = 1..=r_max`: pairs still agreeing and their largest
    /// `|u_r − v_r| / (γ_N^r |u_0 − v_0|)`.
    pub counts: Vec<usize>,
    pub max_ratio: Vec<f64>,
    pub pass: bool,
    pub inconclusive: bool,
    /// `P(first disagreement at step r)` and the fitted log-slope.
    pub first_disagreement: Vec<f64>,
    pub decoupling_slope: Option<f64>,
}

pub fn squeezing_check<T: Scalar, M: CoupledModel<T> + ?Sized>(
    model: &M,
    n: usize,
    pairs: &[(Vec<T>, Vec<T>)],
    r_max: usize,
    gamma_n: f64,
    tol: f64,
    seed: u64,
) -> Result<SqueezingReport> {
    let runs = par_try_map(pairs.len(), |i| {
        coupled_trajectory(model, n, &pairs[i].0, &pairs[i].1, r_max, seed, i as u64)
    })?;
    let mut counts = vec![0usize; r_max];
    let mut max_ratio = vec![0.0f64; r_max];
    let mut first = vec![0usize; r_max];
    for run in &runs {
        let d0 = dist2(&run.u[0], &run.v[0]).as_f64();
        if d0 == 0.0 {
            continue;
        }
        for r in 1..=r_max {
            if !run.agree[r - 1] {
                first[r - 1] += 1;
                break;
            }
            counts[r - 1] += 1;
            let ratio = dist2(&run.u[r], &run.v[r]).as_f64() / (gamma_n.powi(r as i32) * d0);
            max_ratio[r - 1] = max_ratio[r - 1].max(ratio);
        }
    }
    let total = runs.len().max(1) as f64;
    let first_disagreement: Vec<f64> = first.iter().map(|&c| c as f64 / total).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = first
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 10)
        .map(|(r, &c)| ((r + 1) as f64, (c as f64 / total).ln()))
        .unzip();
    let decoupling_slope = stats::ols(&xs, &ys).map(|f| f.slope);
    let inconclusive = counts.iter().all(|&c| c == 0);
    Ok(SqueezingReport {
        gamma_n,
        tol,
        pass: !inconclusive && max_ratio.iter().all(|&r| r <= 1.0 + tol),
        counts,
        max_ratio,
        inconclusive,
        first_disagreement,
        decoupling_slope,
    })
}

/// Smallest `N` in `dims` (ascending) whose empirical `γ_N` is below `c`.
pub fn select_projection(dims: &[usize], gamma: &[f64], c: f64) -> Option<usize> {
    dims.iter().zip(gamma).find(|(_, &g)| g < c).map(|(&n, _)| n)
}

/// Empirical decoupling probability from a fixed pair over many one-step
/// couplings, with the quadrature bound `C_N |u − v|`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecouplingReport {
    pub samples: usize,
    pub probability: f64,
    pub sigma: f64,
    /// `Σ_{j≤N} TV(δ_j/b_j)` for the actual shifts.
    pub exact: f64,
    pub bound: f64,
}

pub fn decoupling_check<T: Scalar>(
    model: &RdsModel<T>,
    n: usize,
    u: &[T],
    v: &[T],
    samples: usize,
    seed: u64,
) -> Result<DecouplingReport> {
    let misses: usize = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, Purpose::Coupling, i as u64, 1);
            model.coupled_step(n, u, v, &mut rng).map(|s| usize::from(!s.agree))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let su = model.map().apply(u)?;
    let sv = model.map().apply(v)?;
    let b = model.kicks().b();
    let agree_prob: f64 = (0..n)
        .map(|j| 1.0 - tv_shift((su[j] - sv[j]).as_f64() / b[j].as_f64()))
        .product();
    let p = misses as f64 / samples as f64;
    Ok(DecouplingReport {
        samples,
        probability: p,
        sigma: (p * (1.0 - p) / samples as f64).sqrt(),
        exact: 1.0 - agree_prob,
        bound: coupling_constant(b, n) * dist2(u, v).as_f64(),
    })
}

/// Empirical constant in the refined Feller bound.
#[derive(Clone, Debug, Serialize)]
pub struct FellerBoundReport {
    pub c: f64,
    /// Per `k = 1..=k_max`: the smallest `C` making the bound hold on every
    /// resolvable `(f, pair)`, and how many cells were too noisy.
    pub big_c: Vec<f64>,
    pub inconclusive: Vec<usize>,
    /// OLS slope of `C_k` against `k` and whether it is significantly
    /// positive.
    pub trend: Option<f64>,
    pub grows: bool,
}

/// `|𝔓_k f(v) − 𝔓_k f(v′)| ≤ (C‖f‖_∞ + c^k‖f‖_L) sup_cloud 𝔓_k 𝟏 |v − v′|`
/// with every semigroup value estimated by particles (common random numbers
/// across the two starts). `f_norms[i] = (‖f‖_∞, ‖f‖_L)`.
#[allow(clippy::too_many_arguments)]
pub fn feller_bound_check<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &PotentialFn<T>,
    fs: &[&(dyn Fn(&[T]) -> f64 + Sync)],
    f_norms: &[(f64, f64)],
    pairs: &[(Vec<T>, Vec<T>)],
    cloud: &[Vec<T>],
    k_max: usize,
    c: f64,
    cfg: &ParticleConfig,
) -> Result<FellerBoundReport> {
    if fs.len() != f_norms.len() {
        return Err(Error::InvalidInput("one norm pair per test function".into()));
    }
    let one = |_: &[T]| 1.0;
    let mut big_c = Vec::with_capacity(k_max);
    let mut inconclusive = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mass = cloud
            .iter()
            .map(|u| particle_semigroup(model, v, &one, u, k, cfg).map(|e| e.mean))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let mut ck: f64 = 0.0;
        let mut noisy = 0;
        for (fi, f) in fs.iter().enumerate() {
            let (sup, lnorm) = f_norms[fi];
            for (a, b) in pairs {
                let d = dist2(a, b).as_f64();
                if d == 0.0 || sup == 0.0 {
                    continue;
                }
                let ea = particle_semigroup(model, v, *f, a, k, cfg)?;
                let eb = particle_semigroup(model, v, *f, b, k, cfg)?;
                let diff = (ea.mean - eb.mean).abs();
                let noise = ea.stderr.hypot(eb.stderr);
                if diff <= 3.0 * noise {
                    noisy += 1;
                    continue;
                }
                ck = ck.max((diff / (mass * d) - c.powi(k as i32) * lnorm) / sup);
            }
        }
        big_c.push(ck);
        inconclusive.push(noisy);
    }
    let ks: Vec<f64> = (1..=k_max).map(|k| k as f64).collect();
    let fit = stats::ols(&ks, &big_c);
    Ok(FellerBoundReport {
        c,
        trend: fit.map(|f| f.slope),
        grows: fit.is_some_and(|f| f.slope > 3.0 * f.slope_se && f.slope > 0.0),
        big_c,
        inconclusive,
    })
}

/// Per-coordinate coupling statistics requested from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingPlan {
    pub n: usize,
    /// Squeezing factor; estimated from the map when absent.
    pub gamma_n: Option<f64>,
    pub pairs: usize,
    pub r_max: usize,
    pub samples: usize,
    pub tol: f64,
}

impl Default for CouplingPlan {
    fn default() -> Self {
        CouplingPlan {
            n: 4,
            gamma_n: None,
            pairs: 1000,
            r_max: 5,
            samples: 100_000,
            tol: 1e-2,
        }
    }
}
