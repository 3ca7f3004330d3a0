//! Distances between finitely supported measures.
//!
//! Both distances reduce to small linear programs. The dual-Lipschitz norm is
//! solved over function values at the atoms, the truncated Kantorovich
//! distance over transport plans between the positive and negative parts of
//! the signed difference. The programs are solved in `f64` whatever the scalar
//! type and the optimum is converted back.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dist2, Scalar};

/// Atoms closer than this are merged.
pub const MERGE_RADIUS: f64 = 1e-12;

/// A nonnegative measure with finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(Vec<T>, T)>", into = "Vec<(Vec<T>, T)>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DiscreteMeasure<T> {
    support: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Builds a measure, merging atoms closer than [`MERGE_RADIUS`].
    pub fn new(support: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        crate::error::check_dim("measure weights", support.len(), weights.len())?;
        let dim = support.first().map_or(0, Vec::len);
        for (p, &w) in support.iter().zip(&weights) {
            crate::error::check_dim("atom dimension", dim, p.len())?;
            if !(w >= T::zero()) || !w.is_finite() {
                return Err(Error::InvalidInput(format!("atom weight {w} is not a finite nonnegative number")));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("atom with non-finite coordinate".into()));
            }
        }
        let (support, weights) = merge_atoms(support, weights);
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn dirac(point: Vec<T>) -> Self {
        DiscreteMeasure {
            support: vec![point],
            weights: vec![T::one()],
        }
    }

    /// Equal weights `1/len` on the given points (repeats accumulate).
    pub fn empirical(points: Vec<Vec<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empirical measure of no points".into()));
        }
        let w = T::one() / T::of(points.len() as f64);
        let n = points.len();
        Self::new(points, vec![w; n])
    }

    pub fn support(&self) -> &[Vec<T>] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn total_mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// True when the total mass is one up to `tol` (never tighter than the
    /// scalar type can resolve).
    pub fn is_probability(&self, tol: f64) -> bool {
        (self.total_mass() - T::one()).abs() <= T::tol(tol) * T::of(self.len().max(1) as f64)
    }

    /// `⟨f, μ⟩`
    pub fn integrate(&self, f: impl Fn(&[T]) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| f(p) * w.as_f64())
            .sum()
    }
}

impl<T: Scalar> TryFrom<Vec<(Vec<T>, T)>> for DiscreteMeasure<T> {
    type Error = Error;
    fn try_from(atoms: Vec<(Vec<T>, T)>) -> Result<Self> {
        let (support, weights) = atoms.into_iter().unzip();
        DiscreteMeasure::new(support, weights)
    }
}

impl<T: Scalar> From<DiscreteMeasure<T>> for Vec<(Vec<T>, T)> {
    fn from(m: DiscreteMeasure<T>) -> Self {
        m.support.into_iter().zip(m.weights).collect()
    }
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Sorts atoms lexicographically and merges neighbours within
/// [`MERGE_RADIUS`]. Weights may be signed.
fn merge_atoms<T: Scalar>(support: Vec<Vec<T>>, weights: Vec<T>) -> (Vec<Vec<T>>, Vec<T>) {
    let mut idx: Vec<usize> = (0..support.len()).collect();
    idx.sort_by(|&i, &j| lex_cmp(&support[i], &support[j]));
    let r = T::of(MERGE_RADIUS);
    let mut out_s: Vec<Vec<T>> = Vec::with_capacity(support.len());
    let mut out_w: Vec<T> = Vec::with_capacity(support.len());
    for i in idx {
        if let Some(last) = out_s.last() {
            if dist2(last, &support[i]) <= r {
                *out_w.last_mut().unwrap() += weights[i];
                continue;
            }
        }
        out_s.push(support[i].clone());
        out_w.push(weights[i]);
    }
    (out_s, out_w)
}

/// Atoms of `μ1 − μ2` with nonzero weight, as `f64`.
fn signed_difference<T: Scalar>(a: &DiscreteMeasure<T>, b: &DiscreteMeasure<T>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if !a.is_empty() && !b.is_empty() {
        crate::error::check_dim("measure dimension", a.dim(), b.dim())?;
    }
    let mut support = Vec::with_capacity(a.len() + b.len());
    let mut weights = Vec::with_capacity(a.len() + b.len());
    for (p, &w) in a.support.iter().zip(&a.weights) {
        support.push(p.iter().map(|x| x.as_f64()).collect::<Vec<f64>>());
        weights.push(w.as_f64());
    }
    for (p, &w) in b.support.iter().zip(&b.weights) {
        support.push(p.iter().map(|x| x.as_f64()).collect());
        weights.push(-w.as_f64());
    }
    let scale = weights.iter().map(|w| w.abs()).fold(0.0, f64::max);
    let (s, w) = merge_atoms(support, weights);
    let cut = 1e-15 * scale;
    Ok(s.into_iter().zip(w).filter(|(_, w)| w.abs() > cut).unzip())
}

fn lp_error(e: impl std::fmt::Display) -> Error {
    Error::Lp(e.to_string())
}

/// `sup { |⟨f, μ1⟩ − ⟨f, μ2⟩| : ‖f‖_∞ + Lip(f) ≤ 1 }`.
///
/// Only atoms where the measures differ enter the program: a function that
/// is admissible on those atoms extends to the whole space with the same sup
/// bound and Lipschitz constant.
pub fn dual_lipschitz<T: Scalar>(a: &DiscreteMeasure<T>, b: &DiscreteMeasure<T>) -> Result<T> {
    let (pts, w) = signed_difference(a, b)?;
    let n = pts.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let f: Vec<_> = w.iter().map(|&wi| lp.add_var(wi, (-1.0, 1.0))).collect();
    let s = lp.add_var(0.0, (0.0, 1.0));
    let t = lp.add_var(0.0, (0.0, 1.0));
    lp.add_constraint([(s, 1.0), (t, 1.0)], ComparisonOp::Le, 1.0);
    for i in 0..n {
        lp.add_constraint([(f[i], 1.0), (s, -1.0)], ComparisonOp::Le, 0.0);
        lp.add_constraint([(f[i], -1.0), (s, -1.0)], ComparisonOp::Le, 0.0);
        for j in i + 1..n {
            let d = dist2(&pts[i], &pts[j]);
            lp.add_constraint([(f[i], 1.0), (f[j], -1.0), (t, -d)], ComparisonOp::Le, 0.0);
            lp.add_constraint([(f[j], 1.0), (f[i], -1.0), (t, -d)], ComparisonOp::Le, 0.0);
        }
    }
    let sol = lp.solve().map_err(lp_error)?.into_solution().map_err(|_| Error::Lp("solver interrupted".into()))?;
    Ok(T::of(sol.objective().max(0.0)))
}

/// The truncated distance `1 ∧ θ|u − v|`.
pub fn d_theta<T: Scalar>(u: &[T], v: &[T], theta: T) -> T {
    (theta * dist2(u, v)).min(T::one())
}

/// Kantorovich distance between probability measures for the cost
/// `1 ∧ θ d`, as the value of the optimal transport problem.
pub fn kantorovich_theta<T: Scalar>(a: &DiscreteMeasure<T>, b: &DiscreteMeasure<T>, theta: T) -> Result<T> {
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(Error::InvalidInput(format!("θ must be positive, got {theta}")));
    }
    for m in [a, b] {
        if !m.is_probability(1e-12) {
            return Err(Error::Precondition(format!(
                "Kantorovich distance needs probability measures (mass {})",
                m.total_mass()
            )));
        }
    }
    let (pts, w) = signed_difference(a, b)?;
    let th = theta.as_f64();
    let src: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let dst: Vec<usize> = (0..w.len()).filter(|&i| w[i] < 0.0).collect();
    if src.is_empty() || dst.is_empty() {
        return Ok(T::zero());
    }
    let cost = |i: usize, j: usize| (th * dist2(&pts[i], &pts[j])).min(1.0);
    let out_mass: f64 = src.iter().map(|&i| w[i]).sum();
    // every atom pair at cost 1: the value is the total variation
    if src.iter().all(|&i| dst.iter().all(|&j| cost(i, j) >= 1.0)) {
        return Ok(T::of(out_mass.min(1.0)));
    }
    let in_mass: f64 = dst.iter().map(|&j| -w[j]).sum();
    let slack = (1.0 + 1e-9) * out_mass / in_mass;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut plan = Vec::with_capacity(src.len() * dst.len());
    for &i in &src {
        for &j in &dst {
            plan.push(lp.add_var(cost(i, j), (0.0, f64::INFINITY)));
        }
    }
    let m = dst.len();
    for (a_idx, &i) in src.iter().enumerate() {
        let row: Vec<_> = (0..m).map(|b_idx| (plan[a_idx * m + b_idx], 1.0)).collect();
        lp.add_constraint(row, ComparisonOp::Eq, w[i]);
    }
    for (b_idx, &j) in dst.iter().enumerate() {
        let col: Vec<_> = (0..src.len()).map(|a_idx| (plan[a_idx * m + b_idx], 1.0)).collect();
        lp.add_constraint(col, ComparisonOp::Le, -w[j] * slack);
    }
    let sol = lp.solve().map_err(lp_error)?.into_solution().map_err(|_| Error::Lp("solver interrupted".into()))?;
    Ok(T::of(sol.objective().clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub kantorovich: f64,
    pub dual_lipschitz: f64,
    /// `K_θ / (1 + θ)`
    pub lower: f64,
    /// `diam · K_θ`
    pub upper: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Absolute slack allowed in both sandwich inequalities.
pub const SANDWICH_TOL: f64 = 1e-9;

/// Evaluates both sides of `K_θ/(1+θ) ≤ ‖μ1−μ2‖*_L ≤ diam·K_θ`.
pub fn verify_metric_sandwich<T: Scalar>(
    a: &DiscreteMeasure<T>,
    b: &DiscreteMeasure<T>,
    theta: T,
    diam: T,
) -> Result<SandwichReport> {
    if !(diam > T::zero()) {
        return Err(Error::InvalidInput("diameter must be positive".into()));
    }
    if theta * diam < T::one() - T::tol(1e-12) {
        return Err(Error::Precondition(format!(
            "θ = {theta} is below 1/diam = {}",
            T::one() / diam
        )));
    }
    let k = kantorovich_theta(a, b, theta)?.as_f64();
    let dl = dual_lipschitz(a, b)?.as_f64();
    let th = theta.as_f64();
    let lower = k / (1.0 + th);
    let upper = diam.as_f64() * k;
    let tol = SANDWICH_TOL.max(T::tol(1e-12).as_f64() * 16.0);
    Ok(SandwichReport {
        kantorovich: k,
        dual_lipschitz: dl,
        lower,
        upper,
        lower_holds: lower <= dl + tol,
        upper_holds: dl <= upper + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], ws: &[f64]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::new(xs.iter().map(|&x| vec![x]).collect(), ws.to_vec()).unwrap()
    }

    #[test]
    fn dirac_pair_closed_form() {
        for x in [0.1, 0.5, 2.0, 7.0] {
            let v = dual_lipschitz(&line(&[0.0], &[1.0]), &line(&[x], &[1.0])).unwrap();
            assert!((v - 2.0 * x / (x + 2.0)).abs() < 1e-9, "x={x}: {v}");
        }
        let far = dual_lipschitz(&line(&[0.0], &[1.0]), &line(&[1e6], &[1.0])).unwrap();
        assert!((far - 2.0).abs() < 1e-5);
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let m = line(&[0.0, 1.0, 3.0], &[0.2, 0.3, 0.5]);
        assert_eq!(dual_lipschitz(&m, &m).unwrap(), 0.0);
        assert_eq!(kantorovich_theta(&m, &m, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn kantorovich_of_diracs() {
        let a = line(&[0.0], &[1.0]);
        assert!((kantorovich_theta(&a, &line(&[0.1], &[1.0]), 4.0).unwrap() - 0.4).abs() < 1e-12);
        assert!((kantorovich_theta(&a, &line(&[0.5], &[1.0]), 4.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kantorovich_two_atoms_matches_plan_enumeration() {
        // μ1 = 0.3δ_0 + 0.7δ_1, μ2 = 0.6δ_0.5 + 0.4δ_2; plans are a one-parameter family
        let a = line(&[0.0, 1.0], &[0.3, 0.7]);
        let b = line(&[0.5, 2.0], &[0.6, 0.4]);
        let theta = 0.8;
        let c = |x: f64, y: f64| (theta * (x - y).abs()).min(1.0);
        let mut best = f64::INFINITY;
        for i in 0..=30_000 {
            let p = 0.3 * i as f64 / 30_000.0; // mass 0 -> 0.5
            let q = 0.6 - p; // mass 1 -> 0.5
            if q < 0.0 || q > 0.7 {
                continue;
            }
            let cost = p * c(0.0, 0.5) + (0.3 - p) * c(0.0, 2.0) + q * c(1.0, 0.5) + (0.7 - q) * c(1.0, 2.0);
            best = best.min(cost);
        }
        let k = kantorovich_theta(&a, &b, theta).unwrap();
        assert!((k - best).abs() < 1e-6, "{k} vs {best}");
    }

    #[test]
    fn sandwich_rejects_small_theta() {
        let a = line(&[0.0], &[1.0]);
        let b = line(&[1.0], &[1.0]);
        let err = verify_metric_sandwich(&a, &b, 0.1, 2.0).unwrap_err();
        assert!(err.is_precondition());
        let r = verify_metric_sandwich(&a, &b, 0.5, 2.0).unwrap();
        assert!(r.holds());
    }

    #[test]
    fn merging_and_serde() {
        let m = line(&[1.0, 1.0, 0.0], &[0.25, 0.25, 0.5]);
        assert_eq!(m.len(), 2);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[[0.0],0.5],[[1.0],0.5]]");
        let back: DiscreteMeasure<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<DiscreteMeasure<f64>>("[[[0.0],-1.0]]").is_err());
    }

    #[test]
    fn non_probability_rejected() {
        let a = line(&[0.0], &[0.5]);
        assert!(kantorovich_theta(&a, &a, 1.0).unwrap_err().is_precondition());
    }

    #[test]
    fn works_in_single_precision() {
        let a = DiscreteMeasure::<f32>::dirac(vec![0.0]);
        let b = DiscreteMeasure::<f32>::dirac(vec![2.0]);
        assert!((dual_lipschitz(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }
}
