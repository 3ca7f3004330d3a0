//! Deterministic time-one maps `S`.
//!
//! [`BurgersMap`] integrates the viscous Burgers equation on the circle for
//! one time unit with a dealiased spectral Galerkin scheme. [`ToyDiagonalMap`]
//! is a diagonal contraction with an optional cut-off quadratic coupling whose
//! constants are known in closed form.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{dist2, norm2, Scalar};

/// Norm above which an integration is declared to have blown up.
pub const BLOWUP_NORM: f64 = 1e6;

/// A deterministic map on `ℝ^dim`.
pub trait TimeOneMap<T: Scalar>: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn apply(&self, u: &[T]) -> Result<Vec<T>>;

    /// The auxiliary metric `d′` in which the map should be 1-Lipschitz.
    /// Euclidean unless the map says otherwise.
    fn aux_distance(&self, u: &[T], v: &[T]) -> T {
        dist2(u, v)
    }

    /// Parameters worth recording next to results.
    fn describe(&self) -> serde_json::Value;
}

/// `S(u)_j = γ_j (u_j + q χ(|u|) u_{j+1}²)`, with `χ` a C¹ cut-off equal to
/// one on `|u| ≤ R` and zero beyond `2R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ToyDiagonalMap<T> {
    gamma: Vec<T>,
    q: T,
    cutoff: T,
}

impl<T: Scalar> ToyDiagonalMap<T> {
    pub fn new(gamma: Vec<T>, q: T, cutoff: T) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::InvalidInput("toy map needs at least one factor".into()));
        }
        if gamma.iter().any(|&g| !(g > T::zero()) || !g.is_finite()) {
            return Err(Error::InvalidInput("factors must be positive".into()));
        }
        if gamma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("factors must be nonincreasing".into()));
        }
        if !(q >= T::zero()) || !(cutoff > T::zero()) {
            return Err(Error::InvalidInput("need q ≥ 0 and a positive cut-off radius".into()));
        }
        Ok(ToyDiagonalMap { gamma, q, cutoff })
    }

    /// Linear map with `γ_j = γ_1 r^{j−1}`.
    pub fn geometric(dim: usize, first: T, ratio: T) -> Result<Self> {
        let gamma = (0..dim).map(|j| first * ratio.powi(j as i32)).collect();
        Self::new(gamma, T::zero(), T::one())
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn q(&self) -> T {
        self.q
    }

    fn chi(&self, r: T) -> T {
        let s = (r - self.cutoff) / self.cutoff;
        if s <= T::zero() {
            T::one()
        } else if s >= T::one() {
            T::zero()
        } else {
            T::one() - s * s * (T::of(3.0) - T::of(2.0) * s)
        }
    }
}

impl<T: Scalar> TimeOneMap<T> for ToyDiagonalMap<T> {
    fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn apply(&self, u: &[T]) -> Result<Vec<T>> {
        check_dim("state", self.dim(), u.len())?;
        let n = u.len();
        let coupling = if self.q > T::zero() {
            self.q * self.chi(norm2(u))
        } else {
            T::zero()
        };
        Ok((0..n)
            .map(|j| {
                let next = if j + 1 < n { u[j + 1] * u[j + 1] } else { T::zero() };
                self.gamma[j] * (u[j] + coupling * next)
            })
            .collect())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "map": "toy",
            "gamma": self.gamma.iter().map(|g| g.as_f64()).collect::<Vec<_>>(),
            "q": self.q.as_f64(),
            "cutoff": self.cutoff.as_f64(),
        })
    }
}

/// Time-one map of `∂_t u = ν ∂_x² u − u ∂_x u` on the circle `[0, 2π)` for
/// zero-mean `u`.
///
/// The state is the vector of coefficients of `u` in the orthonormal basis
/// `cos(x)/√π, sin(x)/√π, cos(2x)/√π, …` up to wavenumber `M`, so its
/// Euclidean norm is the L² norm of `u`. Time stepping is second-order
/// exponential time differencing (diffusion integrated exactly); the quadratic
/// term is evaluated on a `4M`-point grid, which is alias-free for products
/// of modes up to `M`.
pub struct BurgersMap<T: Scalar> {
    nu: T,
    modes: usize,
    steps: usize,
    dt: T,
    grid: usize,
    decay: Vec<T>,
    phi1: Vec<T>,
    phi2: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> fmt::Debug for BurgersMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BurgersMap")
            .field("nu", &self.nu)
            .field("modes", &self.modes)
            .field("dt", &self.dt)
            .finish()
    }
}

/// `(e^z − 1)/z` and `(e^z − 1 − z)/z²`, by series near zero.
fn etd_coefficients(z: f64) -> (f64, f64) {
    if z.abs() < 1e-2 {
        let p1 = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0 + z.powi(4) / 120.0;
        let p2 = 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0 + z.powi(4) / 720.0;
        (p1, p2)
    } else {
        let e = z.exp_m1();
        (e / z, (e - z) / (z * z))
    }
}

impl<T: Scalar> BurgersMap<T> {
    /// `dt` is rounded so that an integer number of steps spans one time unit.
    pub fn new(nu: T, modes: usize, dt: T) -> Result<Self> {
        if !(nu > T::zero()) || !nu.is_finite() {
            return Err(Error::InvalidInput("viscosity must be positive".into()));
        }
        if modes == 0 {
            return Err(Error::InvalidInput("need at least one Fourier mode".into()));
        }
        if !(dt > T::zero()) || dt > T::one() {
            return Err(Error::InvalidInput("time step must lie in (0, 1]".into()));
        }
        let steps = (1.0 / dt.as_f64()).round().max(1.0) as usize;
        let h = 1.0 / steps as f64;
        let grid = 4 * modes;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid);
        let inv = planner.plan_fft_inverse(grid);
        let (mut decay, mut phi1, mut phi2) = (Vec::new(), Vec::new(), Vec::new());
        for k in 1..=modes {
            let z = -nu.as_f64() * (k * k) as f64 * h;
            let (p1, p2) = etd_coefficients(z);
            decay.push(T::of(z.exp()));
            phi1.push(T::of(h * p1));
            phi2.push(T::of(h * p2));
        }
        Ok(BurgersMap {
            nu,
            modes,
            steps,
            dt: T::of(h),
            grid,
            decay,
            phi1,
            phi2,
            fwd,
            inv,
        })
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of physical grid points used for products and norms.
    pub fn grid_size(&self) -> usize {
        self.grid
    }

    fn to_modes(&self, u: &[T]) -> Vec<Complex<T>> {
        let s = T::one() / (T::of(2.0) * T::PI().sqrt());
        (0..self.modes)
            .map(|k| Complex::new(u[2 * k] * s, -u[2 * k + 1] * s))
            .collect()
    }

    fn from_modes(&self, c: &[Complex<T>]) -> Vec<T> {
        let s = T::of(2.0) * T::PI().sqrt();
        let mut u = Vec::with_capacity(2 * self.modes);
        for z in c {
            u.push(z.re * s);
            u.push(-z.im * s);
        }
        u
    }

    fn fill_spectrum(&self, c: &[Complex<T>], buf: &mut [Complex<T>]) {
        buf.iter_mut().for_each(|z| *z = Complex::new(T::zero(), T::zero()));
        for (k, z) in c.iter().enumerate() {
            buf[k + 1] = *z;
            buf[self.grid - k - 1] = z.conj();
        }
    }

    /// `−(ik/2) (u²)^_k` for `k = 1..M`.
    fn nonlinear(&self, c: &[Complex<T>], buf: &mut [Complex<T>], scratch: &mut [Complex<T>], out: &mut [Complex<T>]) {
        self.fill_spectrum(c, buf);
        self.inv.process_with_scratch(buf, scratch);
        for z in buf.iter_mut() {
            *z = Complex::new(z.re * z.re, T::zero());
        }
        self.fwd.process_with_scratch(buf, scratch);
        let g = T::of(self.grid as f64);
        for (k, o) in out.iter_mut().enumerate() {
            let sq = buf[k + 1] / g;
            let kk = T::of((k + 1) as f64) * T::of(0.5);
            // −(i k/2)(a + ib) = (k/2)(b − ia)
            *o = Complex::new(kk * sq.im, -kk * sq.re);
        }
    }

    /// Values of `u` on the grid `x_j = 2πj/(4M)`.
    pub fn to_grid(&self, u: &[T]) -> Result<Vec<T>> {
        check_dim("Burgers state", 2 * self.modes, u.len())?;
        let c = self.to_modes(u);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.grid];
        self.fill_spectrum(&c, &mut buf);
        self.inv.process(&mut buf);
        Ok(buf.into_iter().map(|z| z.re).collect())
    }

    /// `‖u‖_{L¹}` by the periodic trapezoid rule on the grid.
    pub fn l1_norm(&self, u: &[T]) -> Result<T> {
        let g = self.to_grid(u)?;
        let h = T::of(2.0) * T::PI() / T::of(self.grid as f64);
        Ok(g.iter().map(|x| x.abs()).sum::<T>() * h)
    }

    pub fn l1_distance(&self, u: &[T], v: &[T]) -> Result<T> {
        check_dim("Burgers state", u.len(), v.len())?;
        let d: Vec<T> = u.iter().zip(v).map(|(&a, &b)| a - b).collect();
        self.l1_norm(&d)
    }

    /// Advective Courant number `dt · max|u| · M` of a state.
    pub fn courant(&self, u: &[T]) -> Result<T> {
        let g = self.to_grid(u)?;
        Ok(self.dt * crate::scalar::max_abs(&g) * T::of(self.modes as f64))
    }
}

impl<T: Scalar> TimeOneMap<T> for BurgersMap<T> {
    fn dim(&self) -> usize {
        2 * self.modes
    }

    fn apply(&self, u: &[T]) -> Result<Vec<T>> {
        check_dim("Burgers state", 2 * self.modes, u.len())?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite Burgers state".into()));
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut c = self.to_modes(u);
        let mut buf = vec![zero; self.grid];
        let mut scratch = vec![zero; self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())];
        let mut nu_ = vec![zero; self.modes];
        let mut na = vec![zero; self.modes];
        let mut a = vec![zero; self.modes];
        let limit = T::of(BLOWUP_NORM * BLOWUP_NORM);
        for step in 0..self.steps {
            self.nonlinear(&c, &mut buf, &mut scratch, &mut nu_);
            for k in 0..self.modes {
                a[k] = c[k] * self.decay[k] + nu_[k] * self.phi1[k];
            }
            self.nonlinear(&a, &mut buf, &mut scratch, &mut na);
            let mut energy = T::zero();
            for k in 0..self.modes {
                c[k] = a[k] + (na[k] - nu_[k]) * self.phi2[k];
                energy += c[k].norm_sqr();
            }
            // coefficient energy is |u|² / (4π)
            let e = energy * T::of(4.0) * T::PI();
            if !(e <= limit) {
                return Err(Error::BlowUp {
                    step: step + 1,
                    detail: format!("L² norm exceeded {BLOWUP_NORM:e}; reduce dt"),
                });
            }
        }
        Ok(self.from_modes(&c))
    }

    fn aux_distance(&self, u: &[T], v: &[T]) -> T {
        self.l1_distance(u, v).unwrap_or(T::nan())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "map": "burgers",
            "nu": self.nu.as_f64(),
            "modes": self.modes,
            "dt": self.dt.as_f64(),
            "grid": self.grid,
        })
    }
}
