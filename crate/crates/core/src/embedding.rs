//! A finite stochastic kernel run as a chain on its own points, so that the
//! Monte Carlo machinery can be checked against exact matrix computations.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::kernel_lab::FiniteKernel;
use crate::rds_core::MarkovModel;
use crate::rng::StreamRng;
use crate::scalar::{dist2, Scalar};

#[derive(Clone, Debug)]
pub struct FiniteChainModel<T> {
    kernel: FiniteKernel<T>,
    cumulative: Vec<Vec<f64>>,
}

impl<T: Scalar> FiniteChainModel<T> {
    /// Rows of the kernel must sum to one.
    pub fn new(kernel: FiniteKernel<T>) -> Result<Self> {
        if !kernel.is_stochastic(1e-9) {
            return Err(Error::Precondition("embedding needs a stochastic kernel".into()));
        }
        let n = kernel.n();
        let cumulative = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                let mut c: Vec<f64> = (0..n)
                    .map(|j| {
                        acc += kernel.p()[(i, j)].as_f64();
                        acc
                    })
                    .collect();
                c[n - 1] = f64::INFINITY;
                c
            })
            .collect();
        Ok(FiniteChainModel { kernel, cumulative })
    }

    pub fn kernel(&self) -> &FiniteKernel<T> {
        &self.kernel
    }

    /// Index of the kernel point nearest to `u` (exact for embedded states).
    pub fn state_index(&self, u: &[T]) -> usize {
        let pts = self.kernel.points();
        if let Some(i) = pts.iter().position(|p| p.as_slice() == u) {
            return i;
        }
        (0..pts.len())
            .min_by(|&a, &b| dist2(&pts[a], u).as_f64().total_cmp(&dist2(&pts[b], u).as_f64()))
            .unwrap_or(0)
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.kernel.points()[i]
    }

    /// Next state index from row `i`, one uniform draw.
    pub fn next_index(&self, i: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.cumulative[i];
        let j = row.partition_point(|&c| c <= u);
        // skip zero-probability states that share a cumulative value
        let mut j = j.min(row.len() - 1);
        while self.kernel.p()[(i, j)] == T::zero() && j + 1 < row.len() {
            j += 1;
        }
        j
    }

    /// Lifts a function on states to a function on embedded points.
    pub fn lift<'a>(&'a self, values: &'a [T]) -> impl Fn(&[T]) -> T + Send + Sync + 'a {
        move |u| values[self.state_index(u)]
    }
}

impl<T: Scalar> MarkovModel<T> for FiniteChainModel<T> {
    fn dim(&self) -> usize {
        self.kernel.points()[0].len()
    }

    fn step(&self, u: &[T], rng: &mut StreamRng) -> Result<Vec<T>> {
        check_dim("embedded state", self.dim(), u.len())?;
        let j = self.next_index(self.state_index(u), rng);
        Ok(self.point(j).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng::{stream_rng, Purpose};

    #[test]
    fn transition_frequencies_match_row() {
        let p = Matrix::from_rows(vec![vec![0.2, 0.0, 0.8], vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let k = FiniteKernel::new(vec![vec![0.0], vec![1.0], vec![2.0]], p, vec![2]).unwrap();
        let m = FiniteChainModel::new(k).unwrap();
        let mut rng = stream_rng(0, Purpose::Sampling, 0, 0);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[m.next_index(0, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 1e5 - 0.2).abs() < 0.01);
        assert_eq!(m.state_index(&[1.9]), 2);
    }

    #[test]
    fn substochastic_kernel_rejected() {
        let p = Matrix::from_rows(vec![vec![0.5, 0.0], vec![0.0, 1.0]]).unwrap();
        let k = FiniteKernel::new(vec![vec![0.0], vec![1.0]], p, vec![1]).unwrap();
        assert!(FiniteChainModel::new(k).is_err());
    }
}
