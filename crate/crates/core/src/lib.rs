//! Feynman–Kac semigroups of kick-forced random dynamical systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel_lab`] — exact finite-state kernels, tilted operators, Perron
//!   triples, convergence rates and the structural checks on a kernel;
//! * [`measure_metrics`] — dual-Lipschitz and truncated Kantorovich distances
//!   between finitely supported measures;
//! * [`dynamics_maps`] — deterministic time-one maps (spectral Burgers, a
//!   diagonal toy family);
//! * [`rds_core`] — the kicked system `u_k = S(u_{k-1}) + η_k`, ensembles,
//!   hitting/attraction statistics and map diagnostics;
//! * [`feynman_kac`] — Monte Carlo and particle estimates of the weighted
//!   semigroup, the pressure function and its curvature;
//! * [`coupling_lab`] — maximal couplings of kicks and the bounds they yield;
//! * [`apps`] — occupation measures, large deviations, rate functions and
//!   law-of-large-numbers times;
//! * [`cli`] — configuration, orchestration and export behind the `fk-lab`
//!   binary.
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the common `f64` instantiation.

pub mod apps;
pub mod cli;
pub mod config;
pub mod coupling_lab;
pub mod dynamics_maps;
pub mod embedding;
pub mod error;
pub mod feynman_kac;
pub mod io;
pub mod kernel_lab;
pub mod linalg;
pub mod measure_metrics;
pub mod rds_core;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type FiniteKernel = kernel_lab::FiniteKernel<f64>;
pub type PotentialVector = kernel_lab::PotentialVector<f64>;
pub type EigenTriple = kernel_lab::EigenTriple<f64>;
pub type DiscreteMeasure = measure_metrics::DiscreteMeasure<f64>;
pub type KickLaw = rds_core::KickLaw<f64>;
pub type RdsModel = rds_core::RdsModel<f64>;
pub type Trajectory = rds_core::Trajectory<f64>;
pub type BurgersMap = dynamics_maps::BurgersMap<f64>;
pub type ToyDiagonalMap = dynamics_maps::ToyDiagonalMap<f64>;
pub type FiniteChainModel = embedding::FiniteChainModel<f64>;
pub type PotentialFn = feynman_kac::PotentialFn<f64>;

/// Single-precision instantiations.
pub mod f32 {
    pub type Matrix = crate::linalg::Matrix<f32>;
    pub type FiniteKernel = crate::kernel_lab::FiniteKernel<f32>;
    pub type PotentialVector = crate::kernel_lab::PotentialVector<f32>;
    pub type EigenTriple = crate::kernel_lab::EigenTriple<f32>;
    pub type DiscreteMeasure = crate::measure_metrics::DiscreteMeasure<f32>;
    pub type KickLaw = crate::rds_core::KickLaw<f32>;
    pub type RdsModel = crate::rds_core::RdsModel<f32>;
    pub type Trajectory = crate::rds_core::Trajectory<f32>;
    pub type BurgersMap = crate::dynamics_maps::BurgersMap<f32>;
    pub type ToyDiagonalMap = crate::dynamics_maps::ToyDiagonalMap<f32>;
    pub type FiniteChainModel = crate::embedding::FiniteChainModel<f32>;
    pub type PotentialFn = crate::feynman_kac::PotentialFn<f32>;
}
