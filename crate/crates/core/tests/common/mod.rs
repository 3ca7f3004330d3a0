//! Shared generators and dense-linear-algebra oracles for integration tests.
#![allow(dead_code)]

use fklab::kernel_lab::{FiniteKernel, PotentialVector};
use fklab::linalg::Matrix;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random kernel on `n ≤ 20` points in the unit square with a random
/// invariant set `A`. Rows on `A` are stochastic and sparse, with a cycle
/// through `A` for irreducibility; rows off `A` send mass `1 − β` into `A`
/// and `β ≤ 0.3` among themselves.
pub fn random_kernel(r: &mut ChaCha8Rng, n_max: usize) -> FiniteKernel<f64> {
    let n = r.random_range(2..=n_max);
    let n_a = r.random_range(1..=n);
    let mut states: Vec<usize> = (0..n).collect();
    states.shuffle(r);
    let a: Vec<usize> = states[..n_a].to_vec();
    let b: Vec<usize> = states[n_a..].to_vec();
    let mut p = vec![vec![0.0; n]; n];
    for (k, &i) in a.iter().enumerate() {
        for &j in &a {
            if r.random::<f64>() < 0.4 {
                p[i][j] = r.random::<f64>();
            }
        }
        let next = a[(k + 1) % n_a];
        p[i][next] += 0.2 + r.random::<f64>();
        if k == 0 {
            p[i][i] += 0.2 + r.random::<f64>();
        }
        let s: f64 = p[i].iter().sum();
        p[i].iter_mut().for_each(|x| *x /= s);
    }
    for &i in &b {
        let beta = 0.05 + 0.25 * r.random::<f64>();
        let mut to_a: Vec<f64> = a.iter().map(|_| r.random::<f64>() + 0.01).collect();
        let sa: f64 = to_a.iter().sum();
        to_a.iter_mut().for_each(|x| *x *= (1.0 - beta) / sa);
        for (k, &j) in a.iter().enumerate() {
            p[i][j] = to_a[k];
        }
        let mut to_b: Vec<f64> = b.iter().map(|_| r.random::<f64>()).collect();
        let sb: f64 = to_b.iter().sum();
        to_b.iter_mut().for_each(|x| *x *= beta / sb);
        for (k, &j) in b.iter().enumerate() {
            p[i][j] = to_b[k];
        }
    }
    let points = loop {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let ok = (0..n).all(|i| (i + 1..n).all(|j| {
            let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
            d > 1e-3
        }));
        if ok {
            break pts;
        }
    };
    FiniteKernel::new(points, Matrix::from_rows(p).unwrap(), a).unwrap()
}

/// Smooth potential `V(x) = a sin(ω·x + φ)` with `|a| ≤ 0.5`.
pub fn random_potential(r: &mut ChaCha8Rng, k: &FiniteKernel<f64>) -> PotentialVector<f64> {
    let amp = r.random_range(-0.5..0.5);
    let w = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
    let phase = r.random_range(0.0..6.3);
    let v = k
        .points()
        .iter()
        .map(|p| amp * (w[0] * p[0] + w[1] * p[1] + phase).sin())
        .collect();
    PotentialVector::new(k, v).unwrap()
}

pub fn to_dense(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub struct DenseOracle {
    pub lambda: f64,
    /// Modulus of the second eigenvalue of the full matrix.
    pub lambda2: f64,
    pub h: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Perron data from a dense eigensolver: eigenvalues from the real Schur
/// form, eigenvectors as SVD null vectors of `M − λI` and its transpose.
pub fn dense_oracle(m: &Matrix<f64>) -> DenseOracle {
    let d = to_dense(m);
    let n = d.nrows();
    let mut mods: Vec<f64> = d.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mods.sort_by(|a, b| b.total_cmp(a));
    let lambda = mods[0];
    let lambda2 = if n > 1 { mods[1] } else { 0.0 };
    let shifted = &d - DMatrix::identity(n, n) * lambda;
    let null = |a: DMatrix<f64>| -> Vec<f64> {
        let svd = a.svd(true, true);
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        let v = svd.v_t.unwrap();
        let mut x: Vec<f64> = (0..n).map(|j| v[(k, j)]).collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|y| *y /= s);
        x
    };
    let h = null(shifted.clone());
    let mut mu = null(shifted.transpose());
    mu.iter_mut().for_each(|x| {
        if x.abs() < 1e-14 {
            *x = 0.0
        }
    });
    let c: f64 = h.iter().zip(&mu).map(|(a, b)| a * b).sum();
    let h = h.into_iter().map(|x| x / c).collect();
    DenseOracle { lambda, lambda2, h, mu }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
