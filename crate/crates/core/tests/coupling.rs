use std::sync::Arc;

use fklab::coupling_lab::*;
use fklab::dynamics_maps::ToyDiagonalMap;
use fklab::embedding::FiniteChainModel;
use fklab::feynman_kac::{particle_semigroup, ParticleConfig, PotentialFn};
use fklab::kernel_lab::*;
use fklab::linalg::Matrix;
use fklab::rds_core::{bump_cdf, KickLaw, RdsModel};
use fklab::rng::{stream_rng, Purpose};

fn toy() -> RdsModel<f64> {
    let map = ToyDiagonalMap::geometric(4, 0.6, 0.5).unwrap();
    RdsModel::new(Arc::new(map), KickLaw::power_law(4, 0.5, 1.0).unwrap(), 2.0).unwrap()
}

fn chain() -> FiniteChainModel<f64> {
    let p = Matrix::from_rows(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.3, 0.1, 0.6]]).unwrap();
    FiniteChainModel::new(FiniteKernel::new(vec![vec![0.0], vec![1.0], vec![2.0]], p, vec![0, 1, 2]).unwrap()).unwrap()
}

#[test]
fn total_variation_of_a_shift_has_closed_form() {
    // overlap of the bump with its shift by s is 2 F(−s/2), by symmetry
    for s in [0.0, 0.1, 0.5, 1.0, 1.7, 2.0, 3.0] {
        let want = 1.0 - 2.0 * bump_cdf(-s / 2.0);
        assert!((tv_shift(s) - want).abs() < 1e-9, "s={s}");
    }
    assert!((tv_lipschitz() - 15.0 / 16.0).abs() < 1e-6);
}

#[test]
fn coupling_constant_sums_over_coupled_coordinates() {
    let b = [0.5, 0.25, 0.125];
    let want = 15.0 / 16.0 * (2.0 + 4.0);
    assert!((coupling_constant(&b, 2) - want).abs() < 1e-5);
}

#[test]
fn identical_starts_stay_together() {
    let m = toy();
    let u = vec![0.3, -0.2, 0.1, 0.0];
    let run = coupled_trajectory(&m, 3, &u, &u, 25, 1, 0).unwrap();
    assert!(run.agree.iter().all(|&a| a));
    assert_eq!(run.u, run.v);
    assert!(run.tail_identical);
}

#[test]
fn rds_refuses_more_coupled_than_kicked_coordinates() {
    let m = toy();
    let mut r = stream_rng(0, Purpose::Coupling, 0, 1);
    assert!(m.coupled_step(5, &[0.0; 4], &[0.0; 4], &mut r).is_err());
}

#[test]
fn chain_coupling_is_maximal_with_correct_marginals() {
    let c = chain();
    let (i, j) = (0usize, 2usize);
    let p = c.kernel().p();
    let overlap: f64 = (0..3).map(|s| p[(i, s)].min(p[(j, s)])).sum();
    let n = 200_000;
    let mut agree = 0;
    let mut cu = [0usize; 3];
    let mut cv = [0usize; 3];
    for t in 0..n {
        let mut r = stream_rng(3, Purpose::Coupling, t, 1);
        let s = c.coupled_step(1, c.point(i), c.point(j), &mut r).unwrap();
        agree += usize::from(s.agree);
        cu[c.state_index(&s.u)] += 1;
        cv[c.state_index(&s.v)] += 1;
    }
    let z = |hits: usize, p: f64| (hits as f64 / n as f64 - p).abs() / (p * (1.0 - p) / n as f64).sqrt();
    assert!(z(agree, overlap) < 4.0);
    for s in 0..3 {
        assert!(z(cu[s], p[(i, s)]) < 4.0);
        assert!(z(cv[s], p[(j, s)]) < 4.0);
    }
}

#[test]
fn feller_constant_matches_exact_semigroup() {
    let c = chain();
    let k = c.kernel().clone();
    let vv = PotentialVector::new(&k, vec![0.0, 0.4, -0.3]).unwrap();
    let pot = PotentialFn::on_chain(&c, &vv);
    let m = build_tilted_matrix(&k, &vv).unwrap();
    let fvals = [1.0, 0.0, -1.0];
    let f = move |u: &[f64]| fvals[u[0].round() as usize];
    let cfg = ParticleConfig {
        particles: 20_000,
        seed: 5,
        ..Default::default()
    };
    // exact 𝔓_k f = M^k f
    let power = |g: &[f64], steps: usize| (0..steps).fold(g.to_vec(), |acc, _| m.mul_vec(&acc));
    for steps in [1, 3] {
        let exact = power(&fvals, steps);
        let est = particle_semigroup(&c, &pot, &f, &[0.0], steps, &cfg).unwrap();
        assert!((est.mean - exact[0]).abs() <= 4.0 * est.stderr + 1e-12);
    }
    let pairs = vec![(vec![0.0], vec![2.0])];
    let (sup, lip) = (1.0, 1.0);
    let rep = feller_bound_check(&c, &pot, &[&f], &[(sup, lip)], &pairs, c.kernel().points(), 2, 0.05, &cfg).unwrap();
    for steps in 1..=2 {
        let pf = power(&fvals, steps);
        let mass = power(&[1.0; 3], steps).into_iter().fold(0.0, f64::max);
        let exact_c = ((pf[0] - pf[2]).abs() / (mass * 2.0) - 0.05f64.powi(steps as i32) * lip) / sup;
        assert!(exact_c > 0.0);
        assert_eq!(rep.inconclusive[steps - 1], 0);
        assert!((rep.big_c[steps - 1] - exact_c).abs() < 0.05, "k={steps}: {} vs {exact_c}", rep.big_c[steps - 1]);
    }
}
