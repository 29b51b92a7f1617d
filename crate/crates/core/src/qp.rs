//! Dense convex QP by a primal active-set method.
//!
//! ```text
//! minimize    ½ xᵀ H x + fᵀ x
//! subject to  A_eq x = b_eq
//!             lb <= A_in x <= ub
//! ```
//!
//! Equalities are eliminated first (`x = x_p + Z y`). A feasible start for the
//! inequalities comes from a phase-one LP (`min s` over `A y + s >= c`,
//! `s >= 0`) solved by the same active-set iteration, which handles zero
//! curvature by stepping along the projected gradient until a constraint
//! blocks.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    /// May hold `-inf` for rows without a lower bound.
    pub lb: DVector<f64>,
    /// May hold `+inf` for rows without an upper bound.
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_inequalities(mut self, a_in: DMatrix<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.a_in = a_in;
        self.lb = lb;
        self.ub = ub;
        self
    }

    /// Variable bounds `lb <= x <= ub` as inequality rows.
    pub fn with_bounds(self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        let n = self.f.len();
        self.with_inequalities(DMatrix::identity(n, n), lb, ub)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.f.len();
        let dim = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                })
            }
        };
        dim("Hessian rows", n, self.h.nrows())?;
        dim("Hessian columns", n, self.h.ncols())?;
        dim("equality matrix columns", n, self.a_eq.ncols())?;
        dim("equality right-hand side", self.a_eq.nrows(), self.b_eq.len())?;
        dim("inequality matrix columns", n, self.a_in.ncols())?;
        dim("inequality lower bounds", self.a_in.nrows(), self.lb.len())?;
        dim("inequality upper bounds", self.a_in.nrows(), self.ub.len())?;
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-12 * scale {
            return Err(invalid("Hessian is not symmetric"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.h)
            || !self.f.iter().all(|v| v.is_finite())
            || !finite(&self.a_eq)
            || !self.b_eq.iter().all(|v| v.is_finite())
            || !finite(&self.a_in)
        {
            return Err(invalid("QP data must be finite"));
        }
        for i in 0..self.lb.len() {
            if self.lb[i].is_nan() || self.ub[i].is_nan() || self.lb[i] > self.ub[i] {
                return Err(Error::Infeasible { rows: vec![i] });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    /// The inequality rows admit no point; see [`QpSolution::violated`].
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    /// Equality multipliers `ν` with `H x + f = A_eqᵀ ν + A_inᵀ λ`.
    pub eq_multipliers: DVector<f64>,
    /// Signed inequality multipliers: positive on an active lower bound,
    /// negative on an active upper bound.
    pub in_multipliers: DVector<f64>,
    /// Inequality rows in the final working set.
    pub active: Vec<usize>,
    /// Rows still violated when the problem is infeasible.
    pub violated: Vec<usize>,
    pub kkt: KktResiduals,
}

/// One-sided constraint `a·y >= c` in the reduced coordinates.
#[derive(Debug, Clone)]
struct Halfspace {
    a: DVector<f64>,
    c: f64,
    row: usize,
    /// +1 for a lower bound, -1 for an upper bound (stored negated).
    sign: f64,
}

/// Orthonormal basis of the nullspace of the rows of `a` (`k x n`, full row
/// rank), as the trailing columns of a full QR of `aᵀ`.
fn nullspace(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = a.nrows();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let mut padded = DMatrix::zeros(n, n);
    padded.columns_mut(0, k).tr_copy_from(a);
    let q = padded.qr().q();
    q.columns(k, n - k).into_owned()
}

enum CoreOutcome {
    Converged,
    MaxIterations,
}

struct CoreResult {
    y: DVector<f64>,
    working: Vec<usize>,
    lambdas: Vec<f64>,
    iterations: usize,
    outcome: CoreOutcome,
}

/// Primal active-set iteration from a feasible `y0` over `cons`.
fn active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    cons: &[Halfspace],
    y0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CoreResult> {
    let n = g.len();
    let mut y = y0;
    let mut working: Vec<usize> = Vec::new();
    let h_scale = h.amax().max(1.0);
    for iter in 0..max_iter {
        let grad = h * &y + g;
        let grad_scale = grad.amax().max(1.0);
        let mut a_w = DMatrix::zeros(working.len(), n);
        for (r, &i) in working.iter().enumerate() {
            a_w.row_mut(r).tr_copy_from(&cons[i].a);
        }
        let z = nullspace(&a_w, n);
        let gz = z.transpose() * &grad;

        let mut direction: Option<(DVector<f64>, f64)> = None;
        if z.ncols() > 0 && gz.amax() > 1e-13 * grad_scale {
            let hz = z.transpose() * h * &z;
            let eig = hz.symmetric_eigen();
            let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let zero_tol = 1e-10 * h_scale.max(lam_max);
            let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min_eig < -1e-8 * h_scale {
                return Err(Error::NotPositiveSemidefinite {
                    min_eigenvalue: min_eig,
                });
            }
            let coeffs = eig.eigenvectors.transpose() * &gz;
            let mut flat = DVector::zeros(gz.len());
            let mut newton = DVector::zeros(gz.len());
            for (j, &ev) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(j);
                if ev <= zero_tol {
                    flat += v * coeffs[j];
                } else {
                    newton -= v * (coeffs[j] / ev);
                }
            }
            if flat.amax() > 1e-12 * grad_scale {
                // zero curvature: objective decreases linearly along -flat
                direction = Some((&z * (-flat), f64::INFINITY));
            } else {
                let p = &z * newton;
                if p.amax() > 1e-14 * (1.0 + y.amax()) {
                    direction = Some((p, 1.0));
                }
            }
        }

        match direction {
            Some((p, alpha_max)) => {
                let mut alpha = alpha_max;
                let mut blocking = None;
                for (i, con) in cons.iter().enumerate() {
                    if working.contains(&i) {
                        continue;
                    }
                    let ap = con.a.dot(&p);
                    if ap < -1e-13 * con.a.amax().max(1e-300) * p.amax() {
                        let slack = con.a.dot(&y) - con.c;
                        let step = (slack / -ap).max(0.0);
                        if step < alpha {
                            alpha = step;
                            blocking = Some(i);
                        }
                    }
                }
                if alpha.is_infinite() {
                    return Err(Error::Unbounded);
                }
                y += p * alpha;
                if let Some(i) = blocking {
                    working.push(i);
                }
            }
            None => {
                if working.is_empty() {
                    return Ok(CoreResult {
                        y,
                        working,
                        lambdas: Vec::new(),
                        iterations: iter + 1,
                        outcome: CoreOutcome::Converged,
                    });
                }
                // grad = A_Wᵀ λ
                let gram = &a_w * a_w.transpose();
                let rhs = &a_w * &grad;
                let lambdas = gram
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .or_else(|| gram.lu().solve(&rhs))
                    .ok_or_else(|| invalid("degenerate working set"))?;
                let (worst, min_l) = lambdas
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (j, &l)| if l < acc.1 { (j, l) } else { acc });
                if min_l >= -tol * grad_scale {
                    return Ok(CoreResult {
                        y,
                        lambdas: lambdas.iter().copied().collect(),
                        working,
                        iterations: iter + 1,
                        outcome: CoreOutcome::Converged,
                    });
                }
                working.remove(worst);
            }
        }
    }
    Ok(CoreResult {
        y,
        lambdas: vec![0.0; working.len()],
        working,
        iterations: max_iter,
        outcome: CoreOutcome::MaxIterations,
    })
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.dim();
    let tol = settings.tol;

    // Rows with lb == ub are equalities.
    let mut eq_rows: Vec<(DVector<f64>, f64)> = (0..problem.a_eq.nrows())
        .map(|i| (problem.a_eq.row(i).transpose(), problem.b_eq[i]))
        .collect();
    let mut pinned = Vec::new();
    for i in 0..problem.a_in.nrows() {
        if problem.lb[i] == problem.ub[i] {
            eq_rows.push((problem.a_in.row(i).transpose(), problem.lb[i]));
            pinned.push(i);
        }
    }
    let a_eq = DMatrix::from_fn(eq_rows.len(), n, |r, c| eq_rows[r].0[c]);
    let b_eq = DVector::from_fn(eq_rows.len(), |r, _| eq_rows[r].1);

    // Particular solution and nullspace via SVD of the (padded) equality rows.
    let (x_p, z) = if a_eq.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let k = a_eq.nrows();
        let rows = k.max(n);
        let mut padded = DMatrix::zeros(rows, n);
        padded.rows_mut(0, k).copy_from(&a_eq);
        let svd = padded.svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V");
        let s_max = svd.singular_values.amax();
        let rank_tol = 1e-12 * s_max.max(1e-300) * n as f64;
        let mut x_p = DVector::zeros(n);
        let mut null_cols = Vec::new();
        for j in 0..svd.singular_values.len() {
            let s = svd.singular_values[j];
            if s > rank_tol {
                let ub: f64 = (0..k).map(|r| u[(r, j)] * b_eq[r]).sum();
                x_p += v_t.row(j).transpose() * (ub / s);
            } else {
                null_cols.push(j);
            }
        }
        let resid = &a_eq * &x_p - &b_eq;
        let b_scale = b_eq.amax().max(1.0);
        if resid.amax() > 1e-9 * b_scale {
            let rows = (0..resid.len())
                .filter(|&r| resid[r].abs() > 1e-9 * b_scale)
                .map(|r| if r < problem.a_eq.nrows() { r } else { pinned[r - problem.a_eq.nrows()] })
                .collect();
            return Err(Error::Infeasible { rows });
        }
        let z = DMatrix::from_fn(n, null_cols.len(), |r, c| v_t[(null_cols[c], r)]);
        (x_p, z)
    };
    let nz = z.ncols();

    let h_r = z.transpose() * &problem.h * &z;
    let g_r = z.transpose() * (&problem.h * &x_p + &problem.f);
    if nz > 0 {
        let min_eig = h_r.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-8 * problem.h.amax().max(1.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
    }

    let mut cons = Vec::new();
    for i in 0..problem.a_in.nrows() {
        if pinned.contains(&i) {
            continue;
        }
        let row = problem.a_in.row(i).transpose();
        let a_r = z.transpose() * &row;
        let base = row.dot(&x_p);
        let scale = a_r.amax();
        if problem.lb[i].is_finite() {
            cons.push(Halfspace {
                a: a_r.clone(),
                c: problem.lb[i] - base,
                row: i,
                sign: 1.0,
            });
        }
        if problem.ub[i].is_finite() {
            cons.push(Halfspace {
                a: -a_r.clone(),
                c: base - problem.ub[i],
                row: i,
                sign: -1.0,
            });
        }
        // A row that is constant on the feasible affine set is either always
        // satisfied or never.
        if scale <= 1e-14 {
            let lo = problem.lb[i] - base;
            let hi = base - problem.ub[i];
            let feas_tol = 1e-9 * problem.lb[i].abs().max(problem.ub[i].abs()).max(1.0);
            if (lo.is_finite() && lo > feas_tol) || (hi.is_finite() && hi > feas_tol) {
                return Ok(infeasible_solution(problem, x_p.clone(), vec![i]));
            }
            cons.retain(|c| c.row != i);
        }
    }

    let feas_scale = cons.iter().fold(1.0f64, |a, c| a.max(c.c.abs()));
    let feasible = |y: &DVector<f64>| cons.iter().all(|c| c.a.dot(y) - c.c >= -1e-12 * feas_scale);

    // Start from the unconstrained minimizer when it exists and is feasible.
    let mut start = None;
    if nz > 0 {
        if let Some(ch) = h_r.clone().cholesky() {
            let y = ch.solve(&(-&g_r));
            if feasible(&y) {
                start = Some(y);
            }
        }
    } else {
        start = Some(DVector::zeros(0)).filter(|y| feasible(y));
    }
    let mut iterations = 0;
    let y0 = match start {
        Some(y) => y,
        None => {
            let (y, iters) = phase_one(&cons, nz, tol, settings.max_iter)?;
            iterations += iters;
            let worst = cons
                .iter()
                .map(|c| c.c - c.a.dot(&y))
                .fold(0.0f64, f64::max);
            if worst > 1e-9 * feas_scale {
                let mut rows: Vec<usize> = cons
                    .iter()
                    .filter(|c| c.c - c.a.dot(&y) > 1e-9 * feas_scale)
                    .map(|c| c.row)
                    .collect();
                rows.dedup();
                return Ok(infeasible_solution(problem, &x_p + &z * y, rows));
            }
            y
        }
    };

    let core = active_set(&h_r, &g_r, &cons, y0, tol, settings.max_iter.saturating_sub(iterations))?;
    iterations += core.iterations;
    let x = &x_p + &z * &core.y;

    let mut in_mult = DVector::zeros(problem.a_in.nrows());
    for (w, &i) in core.working.iter().enumerate() {
        in_mult[cons[i].row] += cons[i].sign * core.lambdas[w];
    }
    let grad = &problem.h * &x + &problem.f;
    let r = &grad - problem.a_in.transpose() * &in_mult;
    let eq_mult = if problem.a_eq.nrows() > 0 {
        let a = &problem.a_eq;
        let gram = a * a.transpose();
        let rhs = a * &r;
        gram.clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| gram.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(a.nrows())))
    } else {
        DVector::zeros(0)
    };
    // Pinned rows carry their multiplier through the equality block; fold it
    // back so stationarity is measured on the caller's rows.
    if !pinned.is_empty() {
        let extra = {
            let a = DMatrix::from_fn(pinned.len(), n, |r, c| problem.a_in[(pinned[r], c)]);
            let stacked_rows = problem.a_eq.nrows() + pinned.len();
            let mut full = DMatrix::zeros(stacked_rows, n);
            full.rows_mut(0, problem.a_eq.nrows()).copy_from(&problem.a_eq);
            full.rows_mut(problem.a_eq.nrows(), pinned.len()).copy_from(&a);
            let gram = &full * full.transpose();
            let rhs = &full * &r;
            gram.svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(stacked_rows))
        };
        for (j, &i) in pinned.iter().enumerate() {
            in_mult[i] = extra[problem.a_eq.nrows() + j];
        }
        let eq_part = extra.rows(0, problem.a_eq.nrows()).into_owned();
        let kkt = kkt_residuals(problem, &x, &eq_part, &in_mult);
        return Ok(finish(problem, x, core, iterations, eq_part, in_mult, kkt, &cons));
    }
    let kkt = kkt_residuals(problem, &x, &eq_mult, &in_mult);
    Ok(finish(problem, x, core, iterations, eq_mult, in_mult, kkt, &cons))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QpProblem,
    x: DVector<f64>,
    core: CoreResult,
    iterations: usize,
    eq_multipliers: DVector<f64>,
    in_multipliers: DVector<f64>,
    kkt: KktResiduals,
    cons: &[Halfspace],
) -> QpSolution {
    let mut active: Vec<usize> = core.working.iter().map(|&i| cons[i].row).collect();
    for i in 0..problem.a_in.nrows() {
        if problem.lb[i] == problem.ub[i] {
            active.push(i);
        }
    }
    active.sort_unstable();
    active.dedup();
    QpSolution {
        objective: problem.objective(&x),
        x,
        status: match core.outcome {
            CoreOutcome::Converged => QpStatus::Optimal,
            CoreOutcome::MaxIterations => QpStatus::MaxIterations,
        },
        iterations,
        eq_multipliers,
        in_multipliers,
        active,
        violated: Vec::new(),
        kkt,
    }
}

fn infeasible_solution(problem: &QpProblem, x: DVector<f64>, violated: Vec<usize>) -> QpSolution {
    QpSolution {
        objective: problem.objective(&x),
        x,
        status: QpStatus::Infeasible,
        iterations: 0,
        eq_multipliers: DVector::zeros(problem.a_eq.nrows()),
        in_multipliers: DVector::zeros(problem.a_in.nrows()),
        active: Vec::new(),
        violated,
        kkt: KktResiduals::default(),
    }
}

/// Phase one: `min s` subject to `a·y + s >= c`, `s >= 0`, from a trivially
/// feasible point.
fn phase_one(cons: &[Halfspace], nz: usize, tol: f64, max_iter: usize) -> Result<(DVector<f64>, usize)> {
    let dim = nz + 1;
    let mut lifted: Vec<Halfspace> = cons
        .iter()
        .map(|c| {
            let mut a = DVector::zeros(dim);
            a.rows_mut(0, nz).copy_from(&c.a);
            a[nz] = 1.0;
            Halfspace {
                a,
                c: c.c,
                row: c.row,
                sign: c.sign,
            }
        })
        .collect();
    let mut s_floor = DVector::zeros(dim);
    s_floor[nz] = 1.0;
    lifted.push(Halfspace {
        a: s_floor,
        c: 0.0,
        row: usize::MAX,
        sign: 1.0,
    });
    let s0 = cons.iter().map(|c| c.c).fold(0.0f64, f64::max);
    let mut start = DVector::zeros(dim);
    start[nz] = s0;
    let mut g = DVector::zeros(dim);
    g[nz] = 1.0;
    let h = DMatrix::zeros(dim, dim);
    let res = active_set(&h, &g, &lifted, start, tol, max_iter)?;
    Ok((res.y.rows(0, nz).into_owned(), res.iterations))
}

/// KKT residuals scaled by the problem data magnitude.
pub fn kkt_residuals(
    problem: &QpProblem,
    x: &DVector<f64>,
    eq_mult: &DVector<f64>,
    in_mult: &DVector<f64>,
) -> KktResiduals {
    let grad = &problem.h * x + &problem.f;
    let scale = 1.0 + problem.f.amax().max((&problem.h * x).amax());
    let mut stat = grad - problem.a_in.transpose() * in_mult;
    if problem.a_eq.nrows() > 0 {
        stat -= problem.a_eq.transpose() * eq_mult;
    }
    let ax = &problem.a_in * x;
    let mut primal = if problem.a_eq.nrows() > 0 {
        (&problem.a_eq * x - &problem.b_eq).amax()
    } else {
        0.0
    };
    let mut comp: f64 = 0.0;
    for i in 0..ax.len() {
        primal = primal.max(problem.lb[i] - ax[i]).max(ax[i] - problem.ub[i]);
        let l = in_mult[i];
        if l > 0.0 {
            comp = comp.max(l * (ax[i] - problem.lb[i]).abs());
        } else if l < 0.0 {
            comp = comp.max(-l * (problem.ub[i] - ax[i]).abs());
        }
        // multipliers of the wrong sign count as complementarity violations
        if (l > 0.0 && problem.lb[i] == f64::NEG_INFINITY) || (l < 0.0 && problem.ub[i] == f64::INFINITY) {
            comp = comp.max(l.abs());
        }
    }
    let bscale = 1.0 + problem.b_eq.amax();
    KktResiduals {
        stationarity: stat.amax() / scale,
        primal: primal.max(0.0) / bscale,
        complementarity: comp / scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn active_lower_bound() {
        let p = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, f64::INFINITY));
        let s = solve(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.in_multipliers[0] - 1.0).abs() < 1e-10);
        assert!(s.kkt.max() <= 1e-8);
    }

    #[test]
    fn unconstrained_stationary_point() {
        let c = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3), -c.clone());
        let s = solve(&p, &settings()).unwrap();
        assert!((s.x - c).amax() < 1e-12);
    }

    #[test]
    fn equality_constrained() {
        // min ½|x|² s.t. x0 + x1 = 2 -> (1, 1)
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
        let s = solve(&p, &settings()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.eq_multipliers[0] - 1.0).abs() < 1e-10);
        assert!(s.kkt.max() <= 1e-8);
    }

    #[test]
    fn inconsistent_equalities() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).with_equalities(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_column_slice(&[1.0, 3.0]),
        );
        assert!(matches!(solve(&p, &settings()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn infeasible_inequalities() {
        // x >= 2 and x <= 1 through two separate rows
        let p = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1)).with_inequalities(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_column_slice(&[2.0, f64::NEG_INFINITY]),
            DVector::from_column_slice(&[f64::INFINITY, 1.0]),
        );
        let s = solve(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(!s.violated.is_empty());
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::unconstrained(h, DVector::zeros(2));
        assert!(matches!(solve(&p, &settings()), Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn indefinite_outside_equality_nullspace_is_fine() {
        // negative curvature only along x1, which the equality pins
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::unconstrained(h, DVector::from_column_slice(&[-1.0, 0.0]))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DVector::from_element(1, 0.5));
        let s = solve(&p, &settings()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psd_hessian_linear_program() {
        // min -x0 - x1 s.t. 0 <= x <= 1 and x0 + x1 <= 1.5
        let p = QpProblem::unconstrained(DMatrix::zeros(2, 2), DVector::from_column_slice(&[-1.0, -2.0]))
            .with_inequalities(
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
                DVector::from_column_slice(&[0.0, 0.0, f64::NEG_INFINITY]),
                DVector::from_column_slice(&[1.0, 1.0, 1.5]),
            );
        let s = solve(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-10 && (s.x[1] - 1.0).abs() < 1e-10, "{:?}", s.x);
    }

    #[test]
    fn unbounded_detected() {
        let p = QpProblem::unconstrained(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0));
        assert!(matches!(solve(&p, &settings()), Err(Error::Unbounded)));
    }

    #[test]
    fn pinned_rows_become_equalities() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequalities(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 2.0),
        );
        let s = solve(&p, &settings()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.in_multipliers[0] - 1.0).abs() < 1e-10);
        assert!(s.kkt.max() <= 1e-8);
    }

    #[test]
    fn deterministic_bitwise() {
        let (p, _) = random_problem(12, 5, 3);
        let a = solve(&p, &settings()).unwrap();
        let b = solve(&p, &settings()).unwrap();
        assert_eq!(a.x, b.x);
    }

    fn random_problem(n: usize, n_in: usize, seed: u64) -> (QpProblem, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(n_in, n, |_, _| rng.random_range(-1.0..1.0));
        // constraints built around a known feasible point
        let x_feas = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let ax = &a * &x_feas;
        let lb = DVector::from_fn(n_in, |i, _| ax[i] - rng.random_range(0.0..0.5));
        let ub = DVector::from_fn(n_in, |i, _| ax[i] + rng.random_range(0.0..0.5));
        (QpProblem::unconstrained(h, f).with_inequalities(a, lb, ub), x_feas)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kkt_and_weak_duality(seed in 0u64..100_000, n in 2usize..15, n_in in 0usize..8) {
            let (p, x_feas) = random_problem(n, n_in, seed);
            let s = solve(&p, &settings()).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            prop_assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
            prop_assert!(s.objective <= p.objective(&x_feas) + 1e-9);
        }
    }
}
