//! Exact finite-state kernels.
//!
//! A [`FiniteKernel`] is a nonnegative matrix on `n` embedded states together
//! with an invariant subset `A`. Tilting by a potential gives the matrix
//! `M(i,j) = P(i,j)·e^{V_j}` whose Perron triple, powers and normalized
//! semigroup are computed here exactly, along with the four structural
//! conditions on the kernel and the Kantorovich contraction of the normalized
//! dual semigroup.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{solve, Matrix};
use crate::measure_metrics::{d_theta, kantorovich_theta, DiscreteMeasure};
use crate::scalar::{dist2, dot, Scalar};
use crate::stats;

/// Stopping tolerance for power iteration (relative residual).
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 100_000;
/// Threshold for "positive" mass in the irreducibility check.
pub const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteKernel<T> {
    points: Vec<Vec<T>>,
    p: Matrix<T>,
    a: Vec<usize>,
}

/// On-disk form of a kernel with an optional potential. `A` holds 0-based
/// state indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct KernelFile<T> {
    pub points: Vec<Vec<T>>,
    #[serde(rename = "P")]
    pub p: Matrix<T>,
    #[serde(rename = "A")]
    pub a: Vec<usize>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<T>>,
}

impl<T: Scalar> FiniteKernel<T> {
    pub fn new(points: Vec<Vec<T>>, p: Matrix<T>, mut a: Vec<usize>) -> Result<Self> {
        let n = p.rows();
        if n == 0 {
            return Err(Error::InvalidInput("kernel with no states".into()));
        }
        check_dim("kernel columns", n, p.cols())?;
        check_dim("embedded points", n, points.len())?;
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("points must have at least one coordinate".into()));
        }
        for pt in &points {
            check_dim("point dimension", d, pt.len())?;
            if pt.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("non-finite point coordinate".into()));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if dist2(&points[i], &points[j]) == T::zero() {
                    return Err(Error::InvalidInput(format!("states {i} and {j} share a point")));
                }
            }
        }
        for i in 0..n {
            let row = p.row(i);
            if row.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has a negative or non-finite entry")));
            }
            if !row.iter().any(|&x| x > T::zero()) {
                return Err(Error::InvalidInput(format!("row {i} vanishes")));
            }
        }
        a.sort_unstable();
        a.dedup();
        if a.is_empty() {
            return Err(Error::InvalidInput("invariant set A is empty".into()));
        }
        if let Some(&bad) = a.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("A contains state {bad} ≥ n = {n}")));
        }
        let mut in_a = vec![false; n];
        for &i in &a {
            in_a[i] = true;
        }
        for &i in &a {
            for j in 0..n {
                if !in_a[j] && p[(i, j)] != T::zero() {
                    return Err(Error::InvalidInput(format!(
                        "A is not invariant: P({i},{j}) > 0 leaves A"
                    )));
                }
            }
        }
        Ok(FiniteKernel { points, p, a })
    }

    pub fn from_file(f: KernelFile<T>) -> Result<(Self, Option<Vec<T>>)> {
        let k = FiniteKernel::new(f.points, f.p, f.a)?;
        if let Some(v) = &f.v {
            check_dim("potential", k.n(), v.len())?;
        }
        Ok((k, f.v))
    }

    pub fn to_file(&self, v: Option<&[T]>) -> KernelFile<T> {
        KernelFile {
            points: self.points.clone(),
            p: self.p.clone(),
            a: self.a.clone(),
            v: v.map(<[T]>::to_vec),
        }
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn p(&self) -> &Matrix<T> {
        &self.p
    }

    pub fn a(&self) -> &[usize] {
        &self.a
    }

    pub fn in_a(&self, i: usize) -> bool {
        self.a.binary_search(&i).is_ok()
    }

    /// States outside `A`, ascending.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.in_a(i)).collect()
    }

    pub fn dist(&self, i: usize, j: usize) -> T {
        dist2(&self.points[i], &self.points[j])
    }

    pub fn diam(&self) -> T {
        let n = self.n();
        let mut d = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                d = d.max(self.dist(i, j));
            }
        }
        d
    }

    /// Smallest distance between distinct states (infinite for one state).
    pub fn min_sep(&self) -> T {
        let n = self.n();
        let mut d = T::infinity();
        for i in 0..n {
            for j in i + 1..n {
                d = d.min(self.dist(i, j));
            }
        }
        d
    }

    /// True when every row sums to one within `tol`.
    pub fn is_stochastic(&self, tol: f64) -> bool {
        (0..self.n()).all(|i| (self.p.row(i).iter().copied().sum::<T>() - T::one()).abs() <= T::tol(tol))
    }

    /// Lipschitz seminorm of a function on the states.
    pub fn lipschitz(&self, f: &[T]) -> T {
        let n = self.n();
        let mut l = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                l = l.max((f[i] - f[j]).abs() / self.dist(i, j));
            }
        }
        l
    }

    /// `‖f‖_∞ + Lip(f)`
    pub fn lip_norm(&self, f: &[T]) -> T {
        crate::scalar::max_abs(f) + self.lipschitz(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialVector<T> {
    v: Vec<T>,
    lip: T,
    osc: T,
}

impl<T: Scalar> PotentialVector<T> {
    pub fn new(kernel: &FiniteKernel<T>, v: Vec<T>) -> Result<Self> {
        check_dim("potential", kernel.n(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("potential has a non-finite value".into()));
        }
        let max = v.iter().copied().fold(T::neg_infinity(), T::max);
        let min = v.iter().copied().fold(T::infinity(), T::min);
        let lip = kernel.lipschitz(&v);
        Ok(PotentialVector { v, lip, osc: max - min })
    }

    pub fn zero(kernel: &FiniteKernel<T>) -> Self {
        PotentialVector {
            v: vec![T::zero(); kernel.n()],
            lip: T::zero(),
            osc: T::zero(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.v
    }

    pub fn lip(&self) -> T {
        self.lip
    }

    pub fn osc(&self) -> T {
        self.osc
    }

    /// `V + c`
    pub fn shifted(&self, c: T) -> Self {
        PotentialVector {
            v: self.v.iter().map(|&x| x + c).collect(),
            lip: self.lip,
            osc: self.osc,
        }
    }

    /// `αV`
    pub fn scaled(&self, alpha: T) -> Self {
        PotentialVector {
            v: self.v.iter().map(|&x| x * alpha).collect(),
            lip: self.lip * alpha.abs(),
            osc: self.osc * alpha.abs(),
        }
    }
}

/// Perron value, right eigenfunction and left eigenmeasure, with
/// `Σμ = 1` and `⟨h, μ⟩ = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenTriple<T> {
    pub lambda: T,
    pub h: Vec<T>,
    pub mu: Vec<T>,
}

impl<T: Scalar> EigenTriple<T> {
    /// Relative residuals `‖Mh − λh‖_∞/λ‖h‖_∞` and `‖μᵀM − λμᵀ‖₁/λ`.
    pub fn residuals(&self, m: &Matrix<T>) -> (T, T) {
        let mh = m.mul_vec(&self.h);
        let r = mh
            .iter()
            .zip(&self.h)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - self.lambda * b).abs()));
        let mm = m.vec_mul(&self.mu);
        let l: T = mm.iter().zip(&self.mu).map(|(&a, &b)| (a - self.lambda * b).abs()).sum();
        (r / (self.lambda * crate::scalar::max_abs(&self.h)), l / self.lambda)
    }
}

/// `M(i,j) = P(i,j)·e^{V_j}`
pub fn build_tilted_matrix<T: Scalar>(kernel: &FiniteKernel<T>, v: &PotentialVector<T>) -> Result<Matrix<T>> {
    check_dim("potential", kernel.n(), v.values().len())?;
    let w: Vec<T> = v.values().iter().map(|x| x.exp()).collect();
    let mut m = kernel.p().clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m[(i, j)] *= w[j];
        }
    }
    Ok(m)
}

fn validate_operator<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    if !m.is_square() || m.rows() == 0 {
        return Err(Error::InvalidInput("operator must be a nonempty square matrix".into()));
    }
    if m.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(Error::InvalidInput("operator has a negative or non-finite entry".into()));
    }
    if m.iter().all(|&x| x == T::zero()) {
        return Err(Error::InvalidInput("zero operator".into()));
    }
    Ok(())
}

/// Power iteration for the Perron pair of a nonnegative matrix. A diagonal
/// shift is applied on a second attempt to break periodicity.
fn power_iteration<T: Scalar>(m: &Matrix<T>, tol: f64, max_iters: usize) -> Result<(T, Vec<T>)> {
    let n = m.rows();
    let tol = T::tol(tol);
    let row_sum_mean = m.iter().copied().sum::<T>() / T::of(n as f64);
    let mut last = f64::INFINITY;
    for shift in [T::zero(), row_sum_mean] {
        let mut x = vec![T::one() / T::of(n as f64); n];
        for _ in 0..max_iters {
            let mut y = m.mul_vec(&x);
            let lam = y.iter().copied().sum::<T>() / x.iter().copied().sum::<T>();
            let xmax = crate::scalar::max_abs(&x);
            let res = y
                .iter()
                .zip(&x)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - lam * b).abs()));
            if !(lam > T::zero()) {
                return Err(Error::Numerical("Perron value is not positive".into()));
            }
            let rel = res / (lam * xmax);
            last = rel.as_f64();
            if rel <= tol {
                return Ok((lam, x));
            }
            if shift != T::zero() {
                for (yi, &xi) in y.iter_mut().zip(&x) {
                    *yi += shift * xi;
                }
            }
            let s: T = y.iter().copied().sum();
            x = y.into_iter().map(|v| v / s).collect();
        }
    }
    Err(Error::NonConvergence {
        iters: max_iters,
        residual: last,
    })
}

/// Perron value and right/left eigenvectors of the block `M_AA`.
fn perron_on_block<T: Scalar>(m: &Matrix<T>, a: &[usize]) -> Result<(T, Vec<T>, Vec<T>)> {
    let maa = m.restrict(a);
    let (lam, h) = power_iteration(&maa, POWER_TOL, POWER_MAX_ITERS)?;
    let (_, mu) = power_iteration(&maa.transpose(), POWER_TOL, POWER_MAX_ITERS)?;
    Ok((lam, h, mu))
}

/// Spectral radius of `M` restricted to `A`.
pub fn perron_value<T: Scalar>(m: &Matrix<T>, a: &[usize]) -> Result<T> {
    validate_operator(m)?;
    Ok(power_iteration(&m.restrict(a), POWER_TOL, POWER_MAX_ITERS)?.0)
}

/// The eigen-triple of `M` with the eigenmeasure supported on `A`.
///
/// `λ` and the restrictions of `h` and `μ` to `A` come from power iteration
/// on `M_AA`. Off `A`, the eigen-relation reads `(λI − M_BB) h_B = M_BA h_A`
/// and is solved directly; a solution that is not strictly positive means the
/// transient block grows at least as fast as `λ`.
pub fn perron_triple<T: Scalar>(m: &Matrix<T>, a: &[usize]) -> Result<EigenTriple<T>> {
    validate_operator(m)?;
    let n = m.rows();
    let mut in_a = vec![false; n];
    for &i in a {
        if i >= n {
            return Err(Error::InvalidInput(format!("A contains state {i} ≥ n = {n}")));
        }
        in_a[i] = true;
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("invariant set A is empty".into()));
    }
    for &i in a {
        for j in 0..n {
            if !in_a[j] && m[(i, j)] != T::zero() {
                return Err(Error::Precondition(format!("A is not invariant under M: M({i},{j}) > 0")));
            }
        }
    }
    let (lam, ha, mua) = perron_on_block(m, a)?;
    if ha.iter().chain(&mua).any(|&x| !(x > T::zero())) {
        return Err(Error::Precondition("M restricted to A is not irreducible".into()));
    }
    let b: Vec<usize> = (0..n).filter(|&i| !in_a[i]).collect();
    let mut h = vec![T::zero(); n];
    let mut mu = vec![T::zero(); n];
    for (k, &i) in a.iter().enumerate() {
        h[i] = ha[k];
        mu[i] = mua[k];
    }
    if !b.is_empty() {
        let mbb = m.restrict(&b);
        let mut lhs = mbb.scale(-T::one());
        for k in 0..b.len() {
            lhs[(k, k)] += lam;
        }
        let rhs = m.block(&b, a).mul_vec(&ha);
        let hb = solve(&lhs, &rhs).map_err(|_| {
            Error::NoPositiveEigenfunction("transient block has spectral radius equal to λ".into())
        })?;
        if let Some(k) = hb.iter().position(|&x| !(x > T::zero())) {
            return Err(Error::NoPositiveEigenfunction(format!(
                "eigenfunction is not positive at state {} (transient block outgrows λ)",
                b[k]
            )));
        }
        for (k, &i) in b.iter().enumerate() {
            h[i] = hb[k];
        }
    }
    let s: T = mu.iter().copied().sum();
    mu.iter_mut().for_each(|x| *x /= s);
    let c = dot(&h, &mu);
    h.iter_mut().for_each(|x| *x /= c);
    Ok(EigenTriple { lambda: lam, h, mu })
}

/// `h_k = (1/k) Σ_{n=1}^{k} M^n 𝟏` for an `M` already divided by its Perron
/// value.
pub fn cesaro_average<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Vec<T>> {
    if k < 1 {
        return Err(Error::InvalidInput("Cesàro average needs k ≥ 1".into()));
    }
    if !m.is_square() {
        return Err(Error::InvalidInput("operator must be square".into()));
    }
    let n = m.rows();
    let mut g = vec![T::one(); n];
    let mut acc = vec![T::zero(); n];
    for _ in 0..k {
        g = m.mul_vec(&g);
        for (a, &x) in acc.iter_mut().zip(&g) {
            *a += x;
        }
    }
    let kk = T::of(k as f64);
    Ok(acc.into_iter().map(|x| x / kk).collect())
}

/// Residual series `r_k` with the exponential envelope fitted to it.
#[derive(Clone, Debug, Serialize)]
pub struct MetFit {
    /// `r_1, …, r_{k_max}`
    pub residuals: Vec<f64>,
    /// Fitted rate; `+∞` when the residuals hit the floor too early to fit.
    pub gamma: f64,
    /// Smallest `C` with `r_k ≤ C e^{−γk}` on the fit window.
    pub c: f64,
    /// Inclusive range of `k` used for the fit.
    pub window: (usize, usize),
}

/// `r_k = max_u |λ^{−k}(M^k f)(u) − ⟨f,μ⟩h(u)|` for `f` scaled to unit
/// `‖·‖_∞ + Lip` norm, with `γ` from least squares on `log r_k` over the
/// last half of the window before the residuals reach the floating floor.
pub fn met_residuals<T: Scalar>(
    kernel: &FiniteKernel<T>,
    v: &PotentialVector<T>,
    triple: &EigenTriple<T>,
    f: &[T],
    k_max: usize,
) -> Result<MetFit> {
    check_dim("test function", kernel.n(), f.len())?;
    check_dim("eigenfunction", kernel.n(), triple.h.len())?;
    if k_max < 1 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    let m = build_tilted_matrix(kernel, v)?;
    let norm = kernel.lip_norm(f);
    let g0: Vec<T> = if norm > T::zero() {
        f.iter().map(|&x| x / norm).collect()
    } else {
        f.to_vec()
    };
    let mean = dot(&g0, &triple.mu);
    // λ^{−k}M^k f − ⟨f,μ⟩h = λ^{−k}M^k(f − ⟨f,μ⟩h): iterating the deflated
    // vector keeps rounding error relative to the residual itself. The
    // h-component is zero in exact arithmetic; removing it every step stops
    // rounding in (λ, h, μ) from settling into a constant floor.
    let mut e: Vec<T> = g0.iter().zip(&triple.h).map(|(&a, &b)| a - mean * b).collect();
    let mut residuals = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        e = m.mul_vec(&e).into_iter().map(|x| x / triple.lambda).collect();
        let drift = dot(&e, &triple.mu);
        for (x, &hh) in e.iter_mut().zip(&triple.h) {
            *x -= drift * hh;
        }
        residuals.push(crate::scalar::max_abs(&e).as_f64());
    }
    Ok(fit_envelope(residuals, T::min_positive_value().sqrt().as_f64()))
}

/// Exponential envelope of a residual series (index 0 is `k = 1`).
///
/// The window ends at the first residual below `floor`, or earlier where the
/// series comes within a factor ten of its minimum: past that point rounding
/// error, which grows linearly in `k`, dominates.
pub fn fit_envelope(residuals: Vec<f64>, floor: f64) -> MetFit {
    let min = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let cut = floor.max(10.0 * min);
    let usable = residuals.iter().position(|&r| r < cut).unwrap_or(residuals.len());
    let start = usable / 2;
    if usable - start < 3 {
        let c = residuals[..usable].iter().copied().fold(0.0, f64::max);
        return MetFit {
            residuals,
            gamma: f64::INFINITY,
            c,
            window: (start + 1, usable),
        };
    }
    let ks: Vec<f64> = (start..usable).map(|i| (i + 1) as f64).collect();
    let ls: Vec<f64> = residuals[start..usable].iter().map(|r| r.ln()).collect();
    let fit = stats::ols(&ks, &ls).expect("window has distinct abscissae");
    let gamma = -fit.slope;
    let c = ks
        .iter()
        .zip(&residuals[start..usable])
        .map(|(k, r)| r * (gamma * k).exp())
        .fold(0.0, f64::max);
    MetFit {
        residuals,
        gamma,
        c,
        window: (start + 1, usable),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConditionParams {
    /// Radius for the irreducibility balls and the neighbourhood `A_r`.
    pub r: f64,
    /// The constant multiplying `‖f‖_L` in the Feller inequality.
    pub c: f64,
    pub k_max: usize,
}

impl Default for KernelConditionParams {
    fn default() -> Self {
        KernelConditionParams { r: 0.5, c: 0.5, k_max: 60 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FellerWitness {
    pub function: String,
    pub k: usize,
    pub pair: (usize, usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct FellerCheck {
    /// Empirical constant `C` for the given `c`.
    pub big_c: f64,
    pub c: f64,
    pub witness: Option<FellerWitness>,
    /// Names of the test functions examined; the check is necessary only.
    pub family: Vec<String>,
    pub note: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct IrreducibilityCheck {
    /// `(m, p)` when some `m ≤ k_max` reaches `p ≥ P_FLOOR` on every pair.
    pub found: Option<(usize, f64)>,
    /// Worst `(u, û)` at `k_max` when nothing was found.
    pub failure: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationCheck {
    /// `λ^{−k} max_u (M^k 𝟏_{X∖A_r})(u)` for `k = 1..k_max`.
    pub sequence: Vec<f64>,
    pub decays: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpBoundCheck {
    /// `λ^{−k} ‖M^k 𝟏‖_∞` for `k = 1..k_max`.
    pub sequence: Vec<f64>,
    pub sup_observed: f64,
    /// `Λ`, present only when the running sup stopped growing.
    pub big_lambda: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub params: KernelConditionParams,
    pub feller: FellerCheck,
    pub irreducibility: IrreducibilityCheck,
    pub concentration: ConcentrationCheck,
    pub expbound: ExpBoundCheck,
    pub verdicts: Verdicts,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Verdicts {
    pub feller: bool,
    pub irreducibility: bool,
    pub concentration: bool,
    pub expbound: bool,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        let v = self.verdicts;
        v.feller && v.irreducibility && v.concentration && v.expbound
    }
}

/// Checks the four structural conditions on the tilted kernel.
pub fn verify_kernel_conditions<T: Scalar>(
    kernel: &FiniteKernel<T>,
    v: &PotentialVector<T>,
    params: KernelConditionParams,
) -> Result<ConditionReport> {
    if params.k_max < 2 || !(params.r > 0.0) || !(params.c > 0.0) {
        return Err(Error::InvalidInput("need k_max ≥ 2, r > 0 and c > 0".into()));
    }
    let n = kernel.n();
    let m = build_tilted_matrix(kernel, v)?;
    let lam = perron_value(&m, kernel.a())?;
    let mn = m.scale(T::one() / lam);

    // (i) on a finite family of test functions
    let mut family: Vec<(String, Vec<T>)> = Vec::new();
    let width = if n > 1 { kernel.min_sep() } else { T::one() };
    for s in 0..n {
        let f = (0..n)
            .map(|j| (T::one() - kernel.dist(j, s) / width).max(T::zero()))
            .collect();
        family.push((format!("bump:{s}"), f));
    }
    for c in 0..kernel.points()[0].len() {
        family.push((format!("coord:{c}"), kernel.points().iter().map(|p| p[c]).collect()));
    }
    if let Ok(t) = perron_triple(&m, kernel.a()) {
        family.push(("h".into(), t.h));
    }
    let c = T::of(params.c);
    let mut big_c = T::zero();
    let mut witness = None;
    let mut ones = vec![T::one(); n];
    let mut gs: Vec<Vec<T>> = family.iter().map(|(_, f)| f.clone()).collect();
    let norms: Vec<(T, T)> = family
        .iter()
        .map(|(_, f)| (crate::scalar::max_abs(f), kernel.lip_norm(f)))
        .collect();
    for k in 1..=params.k_max {
        ones = mn.mul_vec(&ones);
        let mass = crate::scalar::max_abs(&ones);
        for (fi, g) in gs.iter_mut().enumerate() {
            *g = mn.mul_vec(g);
            let (sup, lnorm) = norms[fi];
            if sup == T::zero() {
                continue;
            }
            for i in 0..n {
                for j in i + 1..n {
                    let ratio = (g[i] - g[j]).abs() / (mass * kernel.dist(i, j));
                    let cand = (ratio - c * lnorm) / sup;
                    if cand > big_c {
                        big_c = cand;
                        witness = Some(FellerWitness {
                            function: family[fi].0.clone(),
                            k,
                            pair: (i, j),
                        });
                    }
                }
            }
        }
    }
    let feller = FellerCheck {
        big_c: big_c.as_f64(),
        c: params.c,
        witness,
        family: family.into_iter().map(|(s, _)| s).collect(),
        note: "sampled-f verification",
    };

    // (ii) first m with min_{u, û∈A} M^m(u, B_r(û)) ≥ P_FLOOR
    let r = T::of(params.r);
    let mut power = Matrix::identity(n);
    let mut irr = IrreducibilityCheck {
        found: None,
        failure: None,
    };
    let mut worst = (0, 0);
    for step in 1..=params.k_max {
        power = power.matmul(&m)?;
        let mut pmin = T::infinity();
        for u in 0..n {
            for &ah in kernel.a() {
                let mass: T = (0..n)
                    .filter(|&j| kernel.dist(j, ah) < r)
                    .map(|j| power[(u, j)])
                    .sum();
                if mass < pmin {
                    pmin = mass;
                    worst = (u, ah);
                }
            }
        }
        if pmin.as_f64() >= P_FLOOR {
            irr.found = Some((step, pmin.as_f64()));
            break;
        }
        // keep the powers from under- or overflowing
        let s = crate::scalar::max_abs(&power.row(0).to_vec()).max(T::min_positive_value());
        if s > T::of(1e100) || s < T::of(1e-100) {
            power = power.scale(T::one() / s);
        }
    }
    if irr.found.is_none() {
        irr.failure = Some(worst);
    }

    // (iii) decay of the normalized mass away from A_r
    let outside: Vec<T> = (0..n)
        .map(|j| {
            let near = kernel.a().iter().any(|&i| kernel.dist(i, j) < r);
            if near {
                T::zero()
            } else {
                T::one()
            }
        })
        .collect();
    let mut g = outside;
    let mut seq = Vec::with_capacity(params.k_max);
    for _ in 0..params.k_max {
        g = mn.mul_vec(&g);
        seq.push(crate::scalar::max_abs(&g).as_f64());
    }
    let decays = sequence_decays(&seq);

    // (iv) running sup of the normalized total mass
    let mut ones = vec![T::one(); n];
    let mut exp_seq = Vec::with_capacity(params.k_max);
    for _ in 0..params.k_max {
        ones = mn.mul_vec(&ones);
        exp_seq.push(crate::scalar::max_abs(&ones).as_f64());
    }
    let sup_observed = exp_seq.iter().copied().fold(0.0, f64::max);
    let split = (3 * exp_seq.len()) / 4;
    let head = exp_seq[..split].iter().copied().fold(0.0, f64::max);
    let tail = exp_seq[split..].iter().copied().fold(0.0, f64::max);
    let stopped = sup_observed.is_finite() && tail <= head * (1.0 + 1e-3);

    let verdicts = Verdicts {
        feller: big_c.is_finite(),
        irreducibility: irr.found.is_some(),
        concentration: decays,
        expbound: stopped,
    };
    Ok(ConditionReport {
        lambda: lam.as_f64(),
        params,
        feller,
        irreducibility: irr,
        concentration: ConcentrationCheck { sequence: seq, decays },
        expbound: ExpBoundCheck {
            sequence: exp_seq,
            sup_observed,
            big_lambda: stopped.then_some(sup_observed),
        },
        verdicts,
    })
}

/// Verdict for a nonnegative sequence that should tend to zero: it either
/// reaches negligible size or decays log-linearly over its second half.
fn sequence_decays(seq: &[f64]) -> bool {
    let max = seq.iter().copied().fold(0.0, f64::max);
    let last = *seq.last().unwrap_or(&0.0);
    if last <= 1e-8 * max.max(1.0) {
        return true;
    }
    let start = seq.len() / 2;
    let ks: Vec<f64> = (start..seq.len()).map(|k| k as f64).collect();
    let ls: Vec<f64> = seq[start..].iter().map(|x| x.ln()).collect();
    match stats::ols(&ks, &ls) {
        Some(fit) => fit.slope < -1e-4 && last < seq[start],
        None => false,
    }
}

/// `𝒮_k g = λ^{−k} h^{−1} M^k(g h)`
pub fn normalized_semigroup_apply<T: Scalar>(
    m: &Matrix<T>,
    triple: &EigenTriple<T>,
    g: &[T],
    k: usize,
) -> Result<Vec<T>> {
    check_dim("function", m.rows(), g.len())?;
    check_dim("eigenfunction", m.rows(), triple.h.len())?;
    if let Some(i) = triple.h.iter().position(|&x| x == T::zero()) {
        return Err(Error::ZeroEigenfunction(i));
    }
    let mut x: Vec<T> = g.iter().zip(&triple.h).map(|(&a, &b)| a * b).collect();
    for _ in 0..k {
        x = m.mul_vec(&x).into_iter().map(|v| v / triple.lambda).collect();
    }
    Ok(x.into_iter().zip(&triple.h).map(|(a, &b)| a / b).collect())
}

/// Row `u` of the dual normalized semigroup: the probability vector
/// `j ↦ λ^{−k} M^k(u,j) h_j / h_u`, given `M^k` already divided by `λ^k`.
fn dual_row<T: Scalar>(power: &Matrix<T>, h: &[T], u: usize) -> Vec<T> {
    let w: Vec<T> = power.row(u).iter().zip(h).map(|(&p, &hj)| p * hj / h[u]).collect();
    let s: T = w.iter().copied().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionFactor {
    pub factor: f64,
    pub worst_pair: Option<(usize, usize)>,
}

/// Maximum over pairs of distinct states of
/// `K_θ(𝒮*_m δ_u, 𝒮*_m δ_v) / d_θ(u, v)`.
pub fn kantorovich_contraction_factor<T: Scalar>(
    kernel: &FiniteKernel<T>,
    m: &Matrix<T>,
    triple: &EigenTriple<T>,
    theta: T,
    steps: usize,
) -> Result<ContractionFactor> {
    contraction_impl(kernel, m, triple, theta, steps, None)
}

fn contraction_impl<T: Scalar>(
    kernel: &FiniteKernel<T>,
    m: &Matrix<T>,
    triple: &EigenTriple<T>,
    theta: T,
    steps: usize,
    stop_above: Option<f64>,
) -> Result<ContractionFactor> {
    let n = kernel.n();
    check_dim("operator", n, m.rows())?;
    if theta * kernel.diam() < T::one() - T::tol(1e-12) {
        return Err(Error::Precondition(format!("θ = {theta} is below 1/diam")));
    }
    if let Some(i) = triple.h.iter().position(|&x| !(x > T::zero())) {
        return Err(Error::ZeroEigenfunction(i));
    }
    if n < 2 {
        return Ok(ContractionFactor {
            factor: 0.0,
            worst_pair: None,
        });
    }
    if steps == 0 {
        return Ok(ContractionFactor {
            factor: 1.0,
            worst_pair: Some((0, 1)),
        });
    }
    let power = m.scale(T::one() / triple.lambda).pow(steps)?;
    let rows: Vec<DiscreteMeasure<T>> = (0..n)
        .map(|u| DiscreteMeasure::new(kernel.points().to_vec(), dual_row(&power, &triple.h, u)))
        .collect::<Result<_>>()?;
    let mut best = 0.0;
    let mut worst = None;
    for u in 0..n {
        for v in u + 1..n {
            let k = kantorovich_theta(&rows[u], &rows[v], theta)?.as_f64();
            let ratio = k / d_theta(&kernel.points()[u], &kernel.points()[v], theta).as_f64();
            if ratio > best {
                best = ratio;
                worst = Some((u, v));
                if stop_above.is_some_and(|s| best > s) {
                    return Ok(ContractionFactor {
                        factor: best,
                        worst_pair: worst,
                    });
                }
            }
        }
    }
    Ok(ContractionFactor {
        factor: best,
        worst_pair: worst,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionSearch {
    pub theta: f64,
    pub steps: usize,
    pub factor: f64,
}

/// Searches `θ ∈ {2^j / diam}` (up to the value at which `d_θ` saturates on
/// every pair) and `m ≤ m_max` for a contraction factor at most one half.
/// Returns the first hit in order of increasing `m`, then increasing `θ`.
pub fn contraction_search<T: Scalar>(
    kernel: &FiniteKernel<T>,
    m: &Matrix<T>,
    triple: &EigenTriple<T>,
    m_max: usize,
) -> Result<Option<ContractionSearch>> {
    let diam = kernel.diam();
    if kernel.n() < 2 {
        return Ok(Some(ContractionSearch {
            theta: 1.0,
            steps: 1,
            factor: 0.0,
        }));
    }
    let mut thetas = Vec::new();
    let mut th = T::one() / diam;
    loop {
        thetas.push(th);
        if th * kernel.min_sep() >= T::one() {
            break;
        }
        th = th + th;
    }
    for steps in 1..=m_max {
        for &theta in &thetas {
            let f = contraction_impl(kernel, m, triple, theta, steps, Some(0.5))?;
            if f.factor <= 0.5 {
                return Ok(Some(ContractionSearch {
                    theta: theta.as_f64(),
                    steps,
                    factor: f.factor,
                }));
            }
        }
    }
    Ok(None)
}
