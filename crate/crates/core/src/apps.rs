//! Statistics of occupation measures: large deviations, rate functions,
//! fluctuations and law-of-large-numbers times.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::feynman_kac::PressureCurve;
use crate::kernel_lab::{build_tilted_matrix, perron_triple, perron_value, FiniteKernel, PotentialVector};
use crate::measure_metrics::DiscreteMeasure;
use crate::rds_core::{par_try_map, simulate, MarkovModel, Trajectory};
use crate::scalar::Scalar;
use crate::stats::{self, LinearFit, TailFit};

/// `ζ_k`: equal weights on `u_0, …, u_{k−1}`.
#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct OccupationMeasure<T> {
    pub measure: DiscreteMeasure<T>,
    pub k: usize,
    pub seed: u64,
    pub stream: u64,
}

pub fn occupation_measure<T: Scalar>(traj: &Trajectory<T>, k: usize) -> Result<OccupationMeasure<T>> {
    if k < 1 {
        return Err(Error::InvalidInput("occupation measure needs k ≥ 1".into()));
    }
    if traj.len() < k {
        return Err(Error::Precondition(format!(
            "trajectory has {} states, fewer than k = {k}",
            traj.len()
        )));
    }
    Ok(OccupationMeasure {
        measure: DiscreteMeasure::empirical(traj.states[..k].to_vec())?,
        k,
        seed: traj.seed,
        stream: traj.stream,
    })
}

/// `(1/k) Σ_{n<k} f(u_n)` for every `k = 1..=len`.
pub fn running_means<T: Scalar>(traj: &Trajectory<T>, f: &(dyn Fn(&[T]) -> f64 + Sync)) -> Vec<f64> {
    let mut acc = 0.0;
    traj.states
        .iter()
        .enumerate()
        .map(|(n, u)| {
            acc += f(u);
            acc / (n + 1) as f64
        })
        .collect()
}

fn ensemble<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    f: &(dyn Fn(&[T]) -> f64 + Sync),
    u0: &[T],
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    par_try_map(n, |i| {
        let traj = simulate(model, u0, horizon, seed, i as u64)?;
        Ok(running_means(&traj, f))
    })
}

/// `Λ(α) = log λ_{αf}` on `A`, exact.
pub fn log_perron<T: Scalar>(kernel: &FiniteKernel<T>, f: &[T], alpha: f64) -> Result<f64> {
    let v = PotentialVector::new(kernel, f.to_vec())?.scaled(T::of(alpha));
    let m = build_tilted_matrix(kernel, &v)?;
    Ok(perron_value(&m, kernel.a())?.as_f64().ln())
}

/// One point of a Legendre transform.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LegendrePoint {
    pub x: f64,
    pub rate: f64,
    pub alpha: f64,
    /// The maximiser sits on the boundary of the `α` range.
    pub saturated: bool,
}

const GOLDEN_TOL: f64 = 1e-10;

fn golden_max(g: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c)?, g(d)?);
    while b - a > GOLDEN_TOL {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d)?;
        }
    }
    let m = 0.5 * (a + b);
    Ok((m, g(m)?))
}

/// `I^f(x) = sup_{|α| ≤ alpha_max} (αx − log λ_{αf})` from exact Perron values:
/// a grid scan locates the maximiser, golden-section search refines it.
pub fn legendre_exact<T: Scalar>(
    kernel: &FiniteKernel<T>,
    f: &[T],
    xs: &[f64],
    alpha_max: f64,
) -> Result<Vec<LegendrePoint>> {
    check_dim("observable", kernel.n(), f.len())?;
    let grid = 64;
    let alphas: Vec<f64> = (0..=grid)
        .map(|i| -alpha_max + 2.0 * alpha_max * i as f64 / grid as f64)
        .collect();
    let lam = alphas
        .iter()
        .map(|&a| log_perron(kernel, f, a))
        .collect::<Result<Vec<_>>>()?;
    xs.iter()
        .map(|&x| {
            let best = (0..alphas.len())
                .max_by(|&i, &j| (alphas[i] * x - lam[i]).total_cmp(&(alphas[j] * x - lam[j])))
                .unwrap_or(0);
            let lo = alphas[best.saturating_sub(1)];
            let hi = alphas[(best + 1).min(grid)];
            let g = |a: f64| log_perron(kernel, f, a).map(|l| a * x - l);
            let (alpha, rate) = golden_max(&g, lo, hi)?;
            Ok(LegendrePoint {
                x,
                rate: rate.max(0.0),
                alpha,
                saturated: best == 0 || best == grid,
            })
        })
        .collect()
}

/// `Î^f(x) = max_α (αx − Q̂(αf))` over the estimated curve.
pub fn legendre_from_curve(curve: &PressureCurve, xs: &[f64]) -> Vec<LegendrePoint> {
    xs.iter()
        .map(|&x| {
            let (i, rate) = curve
                .alphas
                .iter()
                .zip(&curve.q)
                .map(|(a, q)| a * x - q)
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, 0.0));
            LegendrePoint {
                x,
                rate: rate.max(0.0),
                alpha: curve.alphas.get(i).copied().unwrap_or(0.0),
                saturated: i == 0 || i + 1 == curve.alphas.len(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpPlan {
    pub xs: Vec<f64>,
    pub ks: Vec<usize>,
    pub trajectories: usize,
    pub seed: u64,
}

/// Empirical `P{⟨f,ζ_k⟩ ≥ x}` (or `≤ x` below the mean) at one `(x, k)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LdpCell {
    pub x: f64,
    pub k: usize,
    pub count: usize,
    pub probability: f64,
    pub wilson: (f64, f64),
    /// `−(1/k) log P̂`, absent when unobservable.
    pub rate: Option<f64>,
    pub observable: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpEmpirical {
    /// Ensemble mean of `⟨f,ζ_K⟩` at the largest `k`.
    pub mean: f64,
    pub trajectories: usize,
    pub cells: Vec<LdpCell>,
    /// Per `x`: minus the OLS slope of `log P̂ + ½ log k` against `k` over
    /// observable cells; the slope cancels constant prefactors and the shift
    /// removes the `k^{−1/2}` one.
    pub slope_rate: Vec<Option<f64>>,
}

/// Empirical deviation probabilities of `⟨f,ζ_k⟩` from `n` independent
/// trajectories, with Wilson intervals at two standard deviations.
pub fn ldp_empirical<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    f: &(dyn Fn(&[T]) -> f64 + Sync),
    u0: &[T],
    plan: &LdpPlan,
) -> Result<LdpEmpirical> {
    let k_max = plan.ks.iter().copied().max().unwrap_or(0);
    if k_max < 1 || plan.trajectories < 2 {
        return Err(Error::InvalidInput("ldp needs k ≥ 1 and at least two trajectories".into()));
    }
    let means = ensemble(model, f, u0, k_max - 1, plan.trajectories, plan.seed)?;
    let spread = means
        .iter()
        .flat_map(|m| m.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if spread.1 - spread.0 <= 1e-12 * (1.0 + spread.1.abs()) {
        return Err(Error::Precondition("observable is constant on the sampled states".into()));
    }
    let n = means.len();
    let mean = stats::mean(&means.iter().map(|m| m[k_max - 1]).collect::<Vec<_>>());
    let mut cells = Vec::new();
    let mut slope_rate = Vec::new();
    for &x in &plan.xs {
        let above = x >= mean;
        let (mut ks, mut logs) = (Vec::new(), Vec::new());
        for &k in &plan.ks {
            let count = means
                .iter()
                .filter(|m| if above { m[k - 1] >= x } else { m[k - 1] <= x })
                .count();
            let p = count as f64 / n as f64;
            let wilson = stats::wilson(count, n, 2.0);
            let observable = wilson.0 > 0.0;
            if observable {
                ks.push(k as f64);
                logs.push(p.ln() + 0.5 * (k as f64).ln());
            }
            cells.push(LdpCell {
                x,
                k,
                count,
                probability: p,
                wilson,
                rate: observable.then(|| -p.ln() / k as f64),
                observable,
            });
        }
        slope_rate.push(stats::ols(&ks, &logs).map(|fit| -fit.slope));
    }
    Ok(LdpEmpirical {
        mean,
        trajectories: n,
        cells,
        slope_rate,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LdpRow {
    pub x: f64,
    pub legendre: f64,
    pub empirical: Option<f64>,
    pub relative_error: Option<f64>,
}

/// Side-by-side table of Legendre and empirical rates.
pub fn ldp_level1(legendre: &[LegendrePoint], empirical: &LdpEmpirical) -> Vec<LdpRow> {
    legendre
        .iter()
        .zip(&empirical.slope_rate)
        .map(|(l, e)| LdpRow {
            x: l.x,
            legendre: l.rate,
            empirical: *e,
            relative_error: e.filter(|_| l.rate > 0.0).map(|e| (e - l.rate).abs() / l.rate),
        })
        .collect()
}

/// Lower bound on the level-2 rate `sup_V (⟨V,σ⟩ − log λ_V)` over a span.
#[derive(Clone, Debug, Serialize)]
pub struct RateEval {
    /// `+∞` when `σ` charges states outside `A`.
    pub value: f64,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub family_size: usize,
}

/// Coefficients are kept in `[−COEFF_BOX, COEFF_BOX]`.
pub const COEFF_BOX: f64 = 50.0;

/// Bumps of radius `min_sep` around each `A`-state, then each coordinate and
/// its square.
pub fn default_family<T: Scalar>(kernel: &FiniteKernel<T>) -> Vec<Vec<T>> {
    let n = kernel.n();
    let sep = kernel.min_sep().as_f64();
    let sep = if sep.is_finite() { sep } else { 1.0 };
    let mut fam: Vec<Vec<T>> = kernel
        .a()
        .iter()
        .map(|&c| (0..n).map(|i| T::of((1.0 - kernel.dist(i, c).as_f64() / sep).max(0.0))).collect())
        .collect();
    let dim = kernel.points()[0].len();
    for d in 0..dim {
        fam.push((0..n).map(|i| kernel.points()[i][d]).collect());
        fam.push((0..n).map(|i| kernel.points()[i][d] * kernel.points()[i][d]).collect());
    }
    fam
}

/// `Φ(c) = ⟨V_c,σ⟩ − log λ_{V_c}` with `V_c = Σ c_i φ_i` and its gradient
/// `Φᵀ(σ − h∘μ)`.
fn rate_objective(m_aa: &[Vec<f64>], sigma: &[f64], basis: &[Vec<f64>], c: &[f64]) -> Result<(f64, Vec<f64>)> {
    let na = sigma.len();
    let v: Vec<f64> = (0..na).map(|i| basis.iter().zip(c).map(|(b, ci)| ci * b[i]).sum()).collect();
    let rows: Vec<Vec<f64>> = (0..na)
        .map(|i| (0..na).map(|j| m_aa[i][j] * v[j].exp()).collect())
        .collect();
    let m = crate::linalg::Matrix::from_rows(rows)?;
    let all: Vec<usize> = (0..na).collect();
    let t = perron_triple(&m, &all)?;
    let value = v.iter().zip(sigma).map(|(a, b)| a * b).sum::<f64>() - t.lambda.ln();
    let grad = basis
        .iter()
        .map(|b| (0..na).map(|i| b[i] * (sigma[i] - t.h[i] * t.mu[i])).sum())
        .collect();
    Ok((value, grad))
}

/// Maximises over the span of `family` (each a function on the states) by
/// projected gradient ascent with backtracking; the objective is concave.
pub fn rate_function_eval<T: Scalar>(
    kernel: &FiniteKernel<T>,
    sigma: &[T],
    family: &[Vec<T>],
) -> Result<RateEval> {
    check_dim("measure", kernel.n(), sigma.len())?;
    let total: f64 = sigma.iter().map(|s| s.as_f64()).sum();
    if sigma.iter().any(|s| !(s.as_f64() >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("σ must be a probability vector".into()));
    }
    for f in family {
        check_dim("family member", kernel.n(), f.len())?;
    }
    if (0..kernel.n()).any(|i| !kernel.in_a(i) && sigma[i] > T::zero()) {
        return Ok(RateEval {
            value: f64::INFINITY,
            coefficients: Vec::new(),
            iterations: 0,
            family_size: family.len(),
        });
    }
    let a = kernel.a();
    let m_aa: Vec<Vec<f64>> = a
        .iter()
        .map(|&i| a.iter().map(|&j| kernel.p()[(i, j)].as_f64()).collect())
        .collect();
    let s: Vec<f64> = a.iter().map(|&i| sigma[i].as_f64()).collect();
    let basis: Vec<Vec<f64>> = family
        .iter()
        .map(|f| a.iter().map(|&i| f[i].as_f64()).collect())
        .collect();
    let mut c = vec![0.0; basis.len()];
    let (mut val, mut grad) = rate_objective(&m_aa, &s, &basis, &c)?;
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < 5000 {
        iterations += 1;
        let mut moved = false;
        while step > 1e-14 {
            let trial: Vec<f64> = c
                .iter()
                .zip(&grad)
                .map(|(ci, gi)| (ci + step * gi).clamp(-COEFF_BOX, COEFF_BOX))
                .collect();
            let dx2: f64 = trial.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dx2 == 0.0 {
                break;
            }
            let (tv, tg) = rate_objective(&m_aa, &s, &basis, &trial)?;
            if tv >= val + 1e-4 * dx2 / step {
                moved = dx2.sqrt() > 1e-12 || tv - val > 1e-14;
                c = trial;
                val = tv;
                grad = tg;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(RateEval {
        value: val.max(0.0),
        coefficients: c,
        iterations,
        family_size: basis.len(),
    })
}

/// Asymptotic variance check: `Var(k^{−1/2} Σ_{n<k} V(u_n))` over an ensemble.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CltReport {
    pub k: usize,
    pub trajectories: usize,
    pub variance: f64,
    /// Standard error of the variance (normal approximation).
    pub stderr: f64,
}

pub fn clt_variance<T: Scalar, M: MarkovModel<T> + ?Sized>(
    model: &M,
    v: &(dyn Fn(&[T]) -> f64 + Sync),
    u0: &[T],
    k: usize,
    trajectories: usize,
    seed: u64,
) -> Result<CltReport> {
    if k < 1 || trajectories < 2 {
        return Err(Error::InvalidInput("clt needs k ≥ 1 and two trajectories".into()));
    }
    let sums: Vec<f64> = ensemble(model, v, u0, k - 1, trajectories, seed)?
        .into_iter()
        .map(|m| m[k - 1] * (k as f64).sqrt())
        .collect();
    let variance = stats::variance(&sums);
    Ok(CltReport {
        k,
        trajectories,
        variance,
        stderr: variance * (2.0 / (trajectories - 1) as f64).sqrt(),
    })
}

/// Law-of-large-numbers times `T = 1 + last k` at which
/// `|⟨f,ζ_k⟩ − mean| > C k^{−1/2+ε}`.
#[derive(Clone, Debug, Serialize)]
pub struct SllnReport {
    pub eps: f64,
    pub c: f64,
    pub times: Vec<usize>,
    pub censored_fraction: f64,
    /// Exponential tail fits of `P(T > m)` over growing windows
    /// `m ≤ frac·max T`, `frac ∈ {¼, ½, 1}`.
    pub exp_fits: Vec<Option<TailFit>>,
    /// The fitted exponential rate falls as the window widens.
    pub exp_fit_degrades: bool,
    /// Fit of `log P(T > m)` against `log m`.
    pub power_fit: Option<LinearFit>,
    /// The power law explains the tail better than the exponential.
    pub heavy_tail_favoured: bool,
}

pub fn slln_time<T: Scalar>(
    trajectories: &[Trajectory<T>],
    f: &(dyn Fn(&[T]) -> f64 + Sync),
    mean: f64,
    eps: f64,
    c: f64,
) -> Result<SllnReport> {
    if !(0.0..=0.5).contains(&eps) || !(c > 0.0) {
        return Err(Error::InvalidInput("need 0 ≤ ε ≤ 1/2 and C > 0".into()));
    }
    let mut censored = 0;
    let times: Vec<usize> = trajectories
        .iter()
        .map(|traj| {
            let means = running_means(traj, f);
            let last = means
                .iter()
                .enumerate()
                .rev()
                .find(|(i, m)| {
                    let k = (i + 1) as f64;
                    (*m - mean).abs() > c * k.powf(eps - 0.5)
                })
                .map(|(i, _)| i + 1);
            if last == Some(means.len()) {
                censored += 1;
            }
            1 + last.unwrap_or(0)
        })
        .collect();
    let max = times.iter().copied().max().unwrap_or(1);
    let exp_fits: Vec<Option<TailFit>> = [0.25, 0.5, 1.0]
        .iter()
        .map(|&frac| {
            let cap = ((max as f64 * frac).ceil() as usize).max(2);
            let clipped: Vec<usize> = times.iter().map(|&t| t.min(cap)).collect();
            stats::geometric_tail(&clipped, 10)
        })
        .collect();
    let deltas: Vec<f64> = exp_fits.iter().flatten().map(|t| t.delta).collect();
    let exp_fit_degrades = deltas.len() >= 2 && deltas[deltas.len() - 1] < 0.9 * deltas[0];
    let surv = stats::survival_counts(&times, max);
    let n = times.len().max(1) as f64;
    let (mut lx, mut ly, mut mx) = (Vec::new(), Vec::new(), Vec::new());
    for (m, &cnt) in surv.iter().enumerate().skip(1) {
        if cnt >= 10 {
            lx.push((m as f64).ln());
            mx.push(m as f64);
            ly.push((cnt as f64 / n).ln());
        }
    }
    let power_fit = stats::ols(&lx, &ly);
    let exp_r2 = stats::ols(&mx, &ly).map(|f| f.r2);
    let heavy_tail_favoured = matches!((power_fit, exp_r2), (Some(p), Some(e)) if p.r2 > e);
    Ok(SllnReport {
        eps,
        c,
        censored_fraction: censored as f64 / n,
        times,
        exp_fits,
        exp_fit_degrades,
        power_fit,
        heavy_tail_favoured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FiniteChainModel;
    use crate::linalg::Matrix;

    fn chain() -> FiniteKernel<f64> {
        let p = Matrix::from_rows(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.2, 0.5],
        ])
        .unwrap();
        FiniteKernel::new(vec![vec![0.0], vec![1.0], vec![2.0]], p, vec![0, 1, 2]).unwrap()
    }

    #[test]
    fn occupation_of_constant_path_is_dirac() {
        let traj = Trajectory {
            states: vec![vec![1.0, 2.0]; 5],
            seed: 0,
            stream: 0,
        };
        let z = occupation_measure(&traj, 5).unwrap();
        assert_eq!(z.measure.len(), 1);
        assert!(occupation_measure(&traj, 0).is_err());
        assert!(occupation_measure(&traj, 6).is_err());
    }

    #[test]
    fn legendre_vanishes_at_mean() {
        let k = chain();
        let f = vec![0.0, 1.0, 2.0];
        // doubly stochastic: uniform stationary law, mean 1
        let pts = legendre_exact(&k, &f, &[1.0, 1.5], 4.0).unwrap();
        assert!(pts[0].rate.abs() < 1e-9);
        assert!(pts[1].rate > 0.0);
    }

    #[test]
    fn rate_zero_at_stationary_and_infinite_off_a() {
        let k = chain();
        let fam = default_family(&k);
        let r = rate_function_eval(&k, &[1.0 / 3.0; 3], &fam).unwrap();
        assert!(r.value.abs() < 1e-8);
        let p = Matrix::from_rows(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let k2 = FiniteKernel::new(vec![vec![0.0], vec![1.0]], p, vec![1]).unwrap();
        let r = rate_function_eval(&k2, &[0.5, 0.5], &default_family(&k2)).unwrap();
        assert_eq!(r.value, f64::INFINITY);
    }

    #[test]
    fn constant_observable_rejected() {
        let m = FiniteChainModel::new(chain()).unwrap();
        let plan = LdpPlan {
            xs: vec![1.0],
            ks: vec![5],
            trajectories: 10,
            seed: 0,
        };
        let err = ldp_empirical(&m, &|_: &[f64]| 3.0, &[0.0], &plan).unwrap_err();
        assert!(err.is_precondition());
    }

    #[test]
    fn zero_observable_needs_one_step() {
        let traj = Trajectory {
            states: vec![vec![0.5]; 20],
            seed: 0,
            stream: 0,
        };
        let r = slln_time(&[traj], &|_: &[f64]| 0.0, 0.0, 0.1, 1.0).unwrap();
        assert_eq!(r.times, vec![1]);
        assert_eq!(r.censored_fraction, 0.0);
    }
}
