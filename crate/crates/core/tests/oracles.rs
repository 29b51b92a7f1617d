//! Library results against brute-force references built in the test kit.

use ddpc_testkit::{data_matrices, enumerate_active_sets, projection_normal_equations, random_qp, random_trajectory, rng};
use gamma_ddpc::hankel::stack_ddpc_blocks;
use gamma_ddpc::lq::lq_factorize;
use gamma_ddpc::qp::{solve, QpSettings, QpStatus};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn qp_matches_active_set_enumeration() {
    let mut r = rng(11);
    for case in 0..60 {
        let n = r.random_range(1..=12);
        let n_eq = r.random_range(0..=2.min(n - 1));
        let n_in = r.random_range(0..=5);
        let p = random_qp(&mut r, n, n_eq, n_in);
        let reference = enumerate_active_sets(&p, 1e-9).expect("feasible by construction");
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "case {case}");
        let scale = reference.x.amax().max(1.0);
        assert!((&s.x - &reference.x).amax() <= 1e-6 * scale, "case {case}");
        assert!((s.objective - reference.objective).abs() <= 1e-6 * reference.objective.abs().max(1.0));
    }
}

#[test]
fn lq_projection_matches_normal_equations() {
    let mut r = rng(5);
    for &(m, p, rho, horizon, len) in &[(1, 1, 2, 5, 60), (2, 1, 3, 4, 120), (1, 2, 2, 6, 200), (2, 2, 2, 3, 90)] {
        let traj = random_trajectory(&mut r, m, p, len);
        let f = lq_factorize(&stack_ddpc_blocks(&traj, rho, horizon).unwrap()).unwrap();
        let (zp, uf, yf) = data_matrices(&traj, rho, horizon);
        let reference = projection_normal_equations(&zp, &uf, &yf).unwrap();
        let ours = &f.l31 * &f.q1 + &f.l32 * &f.q2;
        assert!(rel(&ours, &reference) < 1e-8);

        let mut s = DMatrix::zeros(zp.nrows() + uf.nrows() + yf.nrows(), zp.ncols());
        s.rows_mut(0, zp.nrows()).copy_from(&zp);
        s.rows_mut(zp.nrows(), uf.nrows()).copy_from(&uf);
        s.rows_mut(zp.nrows() + uf.nrows(), yf.nrows()).copy_from(&yf);
        assert!((f.l() * f.q() - &s).amax() < 1e-10);
        let qqt = f.q() * f.q().transpose();
        assert!((qqt - DMatrix::identity(s.nrows(), s.nrows())).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn qp_agrees_with_enumeration_on_small_problems(seed in any::<u64>(), n in 1usize..6, n_in in 0usize..5) {
        let mut r = rng(seed);
        let p = random_qp(&mut r, n, 0, n_in);
        let reference = enumerate_active_sets(&p, 1e-9).unwrap();
        let s = solve(&p, &QpSettings::default()).unwrap();
        prop_assert!((s.objective - reference.objective).abs() <= 1e-6 * reference.objective.abs().max(1.0));
    }
}
