//! Estimators and small numerical helpers shared by the Monte Carlo modules.
//! Everything here is `f64`.

use serde::Serialize;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// `log(mean(exp(l_i)))` without overflow.
pub fn log_mean_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (ls.iter().map(|l| (l - m).exp()).sum::<f64>() / ls.len() as f64).ln()
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope under iid residuals.
    pub slope_se: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_se = if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        slope_se,
    })
}

/// Least-squares quadratic `y ≈ c0 + c1 x + c2 x²`; returns `[c0, c1, c2]`.
pub fn quadratic_fit(xs: &[f64], ys: &[f64]) -> Option<[f64; 3]> {
    if xs.len() < 3 {
        return None;
    }
    let mx = mean(xs);
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let t = x - mx;
        let row = [1.0, t, t * t];
        for i in 0..3 {
            atb[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let a = crate::linalg::Matrix::from_rows(ata.iter().map(|r| r.to_vec()).collect()).ok()?;
    let c = crate::linalg::solve(&a, &atb).ok()?;
    // back to the un-centred basis
    Some([
        c[0] - c[1] * mx + c[2] * mx * mx,
        c[1] - 2.0 * c[2] * mx,
        c[2],
    ])
}

/// Wilson score interval for a binomial proportion at `z` standard deviations.
pub fn wilson(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Asymptotic Kolmogorov survival function `P(K > t)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * t * t).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
        n,
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> KsResult {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
        n: n.min(m),
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Empirical survival `P(X ≥ m)` for `m = 0..=max`.
pub fn survival_counts(values: &[usize], max: usize) -> Vec<usize> {
    let mut hist = vec![0usize; max + 2];
    for &v in values {
        hist[v.min(max + 1)] += 1;
    }
    let mut out = vec![0usize; max + 1];
    let mut acc = hist[max + 1];
    for m in (0..=max).rev() {
        acc += hist[m];
        out[m] = acc;
    }
    out
}

/// Fit of a geometric tail `P(X ≥ m) ≤ Λ e^{-δ m}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailFit {
    pub delta: f64,
    pub lambda: f64,
    pub r2: f64,
    pub points: usize,
}

/// Regresses `log P̂(X ≥ m)` on `m` over `m ≥ 1` cells holding at least
/// `min_count` samples; `Λ` is the smallest constant making the bound hold on
/// every fitted cell.
pub fn geometric_tail(values: &[usize], min_count: usize) -> Option<TailFit> {
    let max = values.iter().copied().max().unwrap_or(0);
    let surv = survival_counts(values, max);
    let n = values.len() as f64;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (m, &c) in surv.iter().enumerate().skip(1) {
        if c >= min_count {
            xs.push(m as f64);
            ys.push((c as f64 / n).ln());
        }
    }
    if xs.len() < 2 {
        return None;
    }
    let fit = ols(&xs, &ys)?;
    let delta = -fit.slope;
    let lambda = xs
        .iter()
        .zip(&ys)
        .map(|(m, y)| (y + delta * m).exp())
        .fold(0.0, f64::max);
    Some(TailFit {
        delta,
        lambda,
        r2: fit.r2,
        points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = ols(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_recovers_parabola() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.5 + 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.75 * x * x).collect();
        let c = quadratic_fit(&xs, &ys).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!((c[1] + 2.0).abs() < 1e-9);
        assert!((c[2] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn simpson_integrates_polynomials_and_kinks() {
        let v = integrate(&|x: f64| x * x * x - x, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        let k = integrate(&|x: f64| x.abs(), -1.0, 2.0, 1e-10);
        assert!((k - 2.5).abs() < 1e-9);
    }

    #[test]
    fn wilson_contains_zero_only_for_no_successes() {
        assert_eq!(wilson(0, 100, 1.96).0, 0.0);
        let (lo, hi) = wilson(50, 100, 1.96);
        assert!(lo > 0.39 && hi < 0.61);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Reference: P(K > 1.36) ≈ 0.0494, P(K > 1.95) ≈ 0.0010
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.95) - 0.0010).abs() < 2e-4);
    }

    #[test]
    fn ks_accepts_uniform_grid() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_one_sample(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(r.statistic < 1e-3 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let v = log_mean_exp(&[1000.0, 1000.0]);
        assert!((v - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_tail_of_exact_geometric() {
        // counts with P(X ≥ m) = 2^{-m}
        let mut vals = Vec::new();
        for m in 0..12usize {
            let count = 1usize << (11 - m);
            vals.extend(std::iter::repeat_n(m, count));
        }
        let fit = geometric_tail(&vals, 4).unwrap();
        assert!((fit.delta - std::f64::consts::LN_2).abs() < 0.05);
    }
}
