//! Brute-force reference solutions used to check the library from the outside.
//! Nothing here calls into the solver or factorization code under test.

use gamma_ddpc::lq::LqFactors;
use gamma_ddpc::qp::QpProblem;
use gamma_ddpc::trajectory::Trajectory;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

#[derive(Debug, Clone)]
pub struct Enumerated {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Number of candidate active sets whose equality-constrained optimum was
    /// feasible.
    pub feasible_sets: usize,
}

/// Tries every assignment of each inequality row to inactive, at lower bound
/// or at upper bound, solves the resulting equality-constrained QP through its
/// KKT system and keeps the best feasible point. Requires a positive definite
/// Hessian on the equality nullspace for the answer to be the optimum.
pub fn enumerate_active_sets(p: &QpProblem, feas_tol: f64) -> Option<Enumerated> {
    let n = p.f.len();
    let k = p.a_in.nrows();
    let mut best: Option<Enumerated> = None;
    let mut feasible_sets = 0;
    let total = 3usize.pow(k as u32);
    for code in 0..total {
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for i in 0..p.a_eq.nrows() {
            rows.push((p.a_eq.row(i).transpose(), p.b_eq[i]));
        }
        let mut c = code;
        let mut skip = false;
        for i in 0..k {
            let choice = c % 3;
            c /= 3;
            let bound = match choice {
                0 => continue,
                1 => p.lb[i],
                _ => p.ub[i],
            };
            if !bound.is_finite() || (choice == 2 && p.lb[i] == p.ub[i]) {
                skip = true;
                break;
            }
            rows.push((p.a_in.row(i).transpose(), bound));
        }
        if skip {
            continue;
        }
        let a = rows.len();
        let mut kkt = DMatrix::zeros(n + a, n + a);
        let mut rhs = DVector::zeros(n + a);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for i in 0..n {
            rhs[i] = -p.f[i];
        }
        for (j, (row, b)) in rows.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + j)] = row[i];
                kkt[(n + j, i)] = row[i];
            }
            rhs[n + j] = *b;
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let ax = &p.a_in * &x;
        let eq_ok = (&p.a_eq * &x - &p.b_eq).iter().all(|r| r.abs() <= feas_tol);
        let in_ok = (0..k).all(|i| ax[i] >= p.lb[i] - feas_tol && ax[i] <= p.ub[i] + feas_tol);
        if !(eq_ok && in_ok) {
            continue;
        }
        feasible_sets += 1;
        let objective = 0.5 * x.dot(&(&p.h * &x)) + p.f.dot(&x);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(Enumerated {
                x,
                objective,
                feasible_sets: 0,
            });
        }
    }
    best.map(|mut b| {
        b.feasible_sets = feasible_sets;
        b
    })
}

/// Random strictly convex QP with `n_eq + n_in` rows, feasible by
/// construction around a hidden point. Some rows are one-sided, some two-sided
/// and the linear term is large enough that several rows tend to bind.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, n_eq: usize, n_in: usize) -> QpProblem {
    let g = gaussian(rng, n, n);
    let h = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = gaussian(rng, n, 1).column(0) * 5.0;
    let x0 = gaussian(rng, n, 1).column(0).into_owned();
    let a_eq = gaussian(rng, n_eq, n);
    let b_eq = &a_eq * &x0;
    let a_in = gaussian(rng, n_in, n);
    let ax0 = &a_in * &x0;
    let mut lb = DVector::zeros(n_in);
    let mut ub = DVector::zeros(n_in);
    for i in 0..n_in {
        let lo = ax0[i] - rng.random_range(0.0..1.0);
        let hi = ax0[i] + rng.random_range(0.0..1.0);
        match rng.random_range(0..3) {
            0 => {
                lb[i] = lo;
                ub[i] = f64::INFINITY;
            }
            1 => {
                lb[i] = f64::NEG_INFINITY;
                ub[i] = hi;
            }
            _ => {
                lb[i] = lo;
                ub[i] = hi;
            }
        }
    }
    QpProblem::unconstrained(h, f.into_owned())
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, lb, ub)
}

/// Scaled block-Hankel matrix built sample by sample: block row `i`, column
/// `j` holds `signal(:, start + i + j) / sqrt(n_cols)`.
pub fn hankel(signal: &DMatrix<f64>, start: usize, block_rows: usize, n_cols: usize) -> DMatrix<f64> {
    let d = signal.nrows();
    let s = 1.0 / (n_cols as f64).sqrt();
    let mut out = DMatrix::zeros(d * block_rows, n_cols);
    for i in 0..block_rows {
        for j in 0..n_cols {
            for c in 0..d {
                out[(i * d + c, j)] = signal[(c, start + i + j)] * s;
            }
        }
    }
    out
}

/// Past joint data, future inputs and future outputs for horizons
/// `(rho, horizon)` using every admissible column.
pub fn data_matrices(traj: &Trajectory, rho: usize, horizon: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, p, len) = (traj.input_dim(), traj.output_dim(), traj.len());
    let n_cols = len - rho - horizon;
    let mut z = DMatrix::zeros(m + p, len);
    for t in 0..len {
        for i in 0..m {
            z[(i, t)] = traj.inputs()[(i, t)];
        }
        for i in 0..p {
            z[(m + i, t)] = traj.outputs()[(i, t)];
        }
    }
    (
        hankel(&z, 0, rho, n_cols),
        hankel(traj.inputs(), rho, horizon, n_cols),
        hankel(traj.outputs(), rho, horizon, n_cols),
    )
}

/// Orthogonal projection of the future outputs onto the row space of the
/// past data and future inputs, from the normal equations.
pub fn projection_normal_equations(zp: &DMatrix<f64>, uf: &DMatrix<f64>, yf: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let r = zp.nrows() + uf.nrows();
    let mut phi = DMatrix::zeros(r, zp.ncols());
    phi.rows_mut(0, zp.nrows()).copy_from(zp);
    phi.rows_mut(zp.nrows(), uf.nrows()).copy_from(uf);
    let gram = &phi * phi.transpose();
    let inv = gram.cholesky()?.inverse();
    Some(yf * phi.transpose() * inv * phi)
}

/// Independent white-noise trajectory; almost surely yields full-rank data
/// matrices when long enough.
pub fn random_trajectory(rng: &mut ChaCha8Rng, m: usize, p: usize, len: usize) -> Trajectory {
    Trajectory::new(gaussian(rng, m, len), gaussian(rng, p, len)).expect("consistent dimensions")
}

/// Unconstrained tracking step solved from the normal equations:
/// `½Σ‖y_k - y_r‖²_Q + ½Σ‖u_k - u_r‖²_R + β2‖γ2‖² + β3‖γ3‖²` with
/// `γ1 = L11⁻¹ z_init`. An infinite weight removes its block from the
/// unknowns altogether. Returns `(u_f, γ2, γ3)`.
#[allow(clippy::too_many_arguments)]
pub fn tracking_step(
    f: &LqFactors,
    z_init: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u_ref: &DVector<f64>,
    y_ref: &DVector<f64>,
    beta2: f64,
    beta3: f64,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let g1 = f.l11.clone().full_piv_lu().solve(z_init)?;
    let (n2, n3) = (f.l22.ncols(), f.l33.ncols());
    let (mt, pt) = (f.l22.nrows(), f.l33.nrows());
    let (m, p) = (r.nrows(), q.nrows());
    let k2 = if beta2.is_finite() { n2 } else { 0 };
    let k3 = if beta3.is_finite() { n3 } else { 0 };
    let n = k2 + k3;

    let mut bu = DMatrix::zeros(mt, n);
    let mut by = DMatrix::zeros(pt, n);
    if k2 > 0 {
        bu.columns_mut(0, k2).copy_from(&f.l22);
        by.columns_mut(0, k2).copy_from(&f.l32);
    }
    if k3 > 0 {
        by.columns_mut(k2, k3).copy_from(&f.l33);
    }
    let eu = &f.l21 * &g1 - DVector::from_fn(mt, |i, _| u_ref[i % m]);
    let ey = &f.l31 * &g1 - DVector::from_fn(pt, |i, _| y_ref[i % p]);
    let mut rbar = DMatrix::zeros(mt, mt);
    for k in 0..mt / m {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(r);
    }
    let mut qbar = DMatrix::zeros(pt, pt);
    for k in 0..pt / p {
        qbar.view_mut((k * p, k * p), (p, p)).copy_from(q);
    }

    let mut h = bu.transpose() * &rbar * &bu + by.transpose() * &qbar * &by;
    for i in 0..n {
        h[(i, i)] += 2.0 * if i < k2 { beta2 } else { beta3 };
    }
    let g = bu.transpose() * &rbar * &eu + by.transpose() * &qbar * &ey;
    let xi = if n > 0 { -h.full_piv_lu().solve(&g)? } else { DVector::zeros(0) };

    let mut g2 = DVector::zeros(n2);
    let mut g3 = DVector::zeros(n3);
    if k2 > 0 {
        g2.copy_from(&xi.rows(0, k2));
    }
    if k3 > 0 {
        g3.copy_from(&xi.rows(k2, k3));
    }
    let u = &f.l21 * &g1 + &f.l22 * &g2;
    Some((u, g2, g3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_on_a_box() {
        // min ½‖x‖² - (2, -3)ᵀx over [-1, 1]²: clamp of (2, -3)
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-2.0, 3.0])).with_bounds(
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        );
        let e = enumerate_active_sets(&p, 1e-12).unwrap();
        assert!((e.x[0] - 1.0).abs() < 1e-12 && (e.x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_of_a_row_already_in_the_span_is_itself() {
        let mut r = rng(1);
        let zp = gaussian(&mut r, 3, 40);
        let uf = gaussian(&mut r, 2, 40);
        let yf = zp.rows(0, 2) * 2.0 + uf.rows(0, 2) * 0.5;
        let proj = projection_normal_equations(&zp, &uf, &yf).unwrap();
        assert!((proj - yf).amax() < 1e-10);
    }
}
