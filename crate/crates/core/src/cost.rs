//! Quadratic tracking cost over the stacked future `w = [u_f; y_f]`.
//!
//! Every term is a weighted residual `½ (S w - E d)ᵀ W (S w - E d)` where `d`
//! collects the references and the last measured sample:
//!
//! ```text
//! d = [y_r(t..t+T-1); u_r(t..t+T-1); u(t-1); y(t-1); y_r(t-1)]
//! ```
//!
//! so the whole cost is `½ wᵀ P w + (G d)ᵀ w + ½ dᵀ C d`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Extra terms used for the wheel-slip study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedCost {
    /// Weight on `‖u(k) - u(k-1)‖²` along the horizon, the first step taken
    /// against the last applied input.
    pub delta_u_weight: f64,
    /// Weight on the squared predicted tracking-error integral.
    pub integral_weight: f64,
    pub terminal_y_weight: f64,
    pub terminal_u_weight: f64,
    pub integrator_enabled: bool,
}

impl Default for AugmentedCost {
    fn default() -> Self {
        Self {
            delta_u_weight: 1e-4,
            integral_weight: 1e5,
            terminal_y_weight: 1e3,
            terminal_u_weight: 5e-6,
            integrator_enabled: true,
        }
    }
}

impl AugmentedCost {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.delta_u_weight,
            self.integral_weight,
            self.terminal_y_weight,
            self.terminal_u_weight,
        ];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(invalid("augmented cost weights must be finite and nonnegative"))
        }
    }
}

/// Index layout of `w` and `d` for given dimensions and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostLayout {
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
}

impl CostLayout {
    pub fn nw(&self) -> usize {
        (self.m + self.p) * self.horizon
    }

    pub fn nd(&self) -> usize {
        (self.m + self.p) * self.horizon + self.m + 2 * self.p
    }

    pub fn w_u(&self, k: usize) -> usize {
        k * self.m
    }

    pub fn w_y(&self, k: usize) -> usize {
        self.m * self.horizon + k * self.p
    }

    pub fn d_yr(&self, k: usize) -> usize {
        k * self.p
    }

    pub fn d_ur(&self, k: usize) -> usize {
        self.p * self.horizon + k * self.m
    }

    pub fn d_u_prev(&self) -> usize {
        (self.m + self.p) * self.horizon
    }

    pub fn d_y_prev(&self) -> usize {
        self.d_u_prev() + self.m
    }

    pub fn d_yr_prev(&self) -> usize {
        self.d_y_prev() + self.p
    }

    /// Assembles `d` from reference windows and the last sample.
    pub fn data_vector(
        &self,
        y_ref: &DVector<f64>,
        u_ref: &DVector<f64>,
        u_prev: &DVector<f64>,
        y_prev: &DVector<f64>,
        y_ref_prev: &DVector<f64>,
    ) -> DVector<f64> {
        let mut d = DVector::zeros(self.nd());
        d.rows_mut(0, self.p * self.horizon).copy_from(y_ref);
        d.rows_mut(self.d_ur(0), self.m * self.horizon).copy_from(u_ref);
        d.rows_mut(self.d_u_prev(), self.m).copy_from(u_prev);
        d.rows_mut(self.d_y_prev(), self.p).copy_from(y_prev);
        d.rows_mut(self.d_yr_prev(), self.p).copy_from(y_ref_prev);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub layout: CostLayout,
    pub p: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl QuadraticCost {
    fn zero(layout: CostLayout) -> Self {
        Self {
            layout,
            p: DMatrix::zeros(layout.nw(), layout.nw()),
            g: DMatrix::zeros(layout.nw(), layout.nd()),
            c: DMatrix::zeros(layout.nd(), layout.nd()),
        }
    }

    fn add_residual(&mut self, s: &DMatrix<f64>, e: &DMatrix<f64>, w: &DMatrix<f64>) {
        let st_w = s.transpose() * w;
        self.p += &st_w * s;
        self.g -= &st_w * e;
        self.c += e.transpose() * w * e;
    }

    /// Tracking cost `½ Σ ‖y - y_r‖²_Q + ‖u - u_r‖²_R` with the optional
    /// augmented terms and an input-energy penalty `β‖u_f‖²`.
    pub fn build(
        layout: CostLayout,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        augmented: Option<&AugmentedCost>,
        input_energy: f64,
    ) -> Self {
        let CostLayout { m, p, horizon } = layout;
        let (nw, nd) = (layout.nw(), layout.nd());
        let mut cost = Self::zero(layout);
        let eye_m = DMatrix::<f64>::identity(m, m);
        let eye_p = DMatrix::<f64>::identity(p, p);

        for k in 0..horizon {
            let mut s = DMatrix::zeros(p, nw);
            let mut e = DMatrix::zeros(p, nd);
            s.view_mut((0, layout.w_y(k)), (p, p)).copy_from(&eye_p);
            e.view_mut((0, layout.d_yr(k)), (p, p)).copy_from(&eye_p);
            cost.add_residual(&s, &e, q);

            let mut s = DMatrix::zeros(m, nw);
            let mut e = DMatrix::zeros(m, nd);
            s.view_mut((0, layout.w_u(k)), (m, m)).copy_from(&eye_m);
            e.view_mut((0, layout.d_ur(k)), (m, m)).copy_from(&eye_m);
            cost.add_residual(&s, &e, r);
        }

        if input_energy > 0.0 {
            let s = DMatrix::from_fn(m * horizon, nw, |i, j| if i == j { 1.0 } else { 0.0 });
            let e = DMatrix::zeros(m * horizon, nd);
            cost.add_residual(&s, &e, &(DMatrix::identity(m * horizon, m * horizon) * (2.0 * input_energy)));
        }

        if let Some(aug) = augmented {
            // The augmented terms carry no ½, hence the doubled weights.
            let wu = &eye_m * (2.0 * aug.delta_u_weight);
            for k in 0..horizon {
                let mut s = DMatrix::zeros(m, nw);
                let mut e = DMatrix::zeros(m, nd);
                s.view_mut((0, layout.w_u(k)), (m, m)).copy_from(&eye_m);
                if k == 0 {
                    e.view_mut((0, layout.d_u_prev()), (m, m)).copy_from(&eye_m);
                } else {
                    s.view_mut((0, layout.w_u(k - 1)), (m, m)).copy_from(&(-&eye_m));
                }
                cost.add_residual(&s, &e, &wu);
            }

            if aug.integrator_enabled && horizon >= 2 {
                // q(t+s) = 2(y_r(t-1) - y(t-1)) + Σ_{j<s} (y_r(t+j) - y(t+j)),
                // s = 0..T-2; the s = 0 term is constant.
                let wi = &eye_p * (2.0 * aug.integral_weight);
                for s_idx in 0..horizon - 1 {
                    let mut s = DMatrix::zeros(p, nw);
                    let mut e = DMatrix::zeros(p, nd);
                    for j in 0..s_idx {
                        s.view_mut((0, layout.w_y(j)), (p, p)).copy_from(&eye_p);
                        e.view_mut((0, layout.d_yr(j)), (p, p)).copy_from(&eye_p);
                    }
                    e.view_mut((0, layout.d_yr_prev()), (p, p)).copy_from(&(&eye_p * 2.0));
                    e.view_mut((0, layout.d_y_prev()), (p, p)).copy_from(&(&eye_p * -2.0));
                    cost.add_residual(&s, &e, &wi);
                }
            }

            let last = horizon - 1;
            let mut s = DMatrix::zeros(p, nw);
            let mut e = DMatrix::zeros(p, nd);
            s.view_mut((0, layout.w_y(last)), (p, p)).copy_from(&eye_p);
            e.view_mut((0, layout.d_yr(last)), (p, p)).copy_from(&eye_p);
            cost.add_residual(&s, &e, &(&eye_p * (2.0 * aug.terminal_y_weight)));

            let mut s = DMatrix::zeros(m, nw);
            let mut e = DMatrix::zeros(m, nd);
            s.view_mut((0, layout.w_u(last)), (m, m)).copy_from(&eye_m);
            e.view_mut((0, layout.d_ur(last)), (m, m)).copy_from(&eye_m);
            cost.add_residual(&s, &e, &(&eye_m * (2.0 * aug.terminal_u_weight)));
        }
        cost
    }

    pub fn value(&self, w: &DVector<f64>, d: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.p * w)) + (&self.g * d).dot(w) + 0.5 * d.dot(&(&self.c * d))
    }
}

/// Affine prediction `w = W z + w_c + M ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePrediction {
    pub w_z: DMatrix<f64>,
    pub w_c: DVector<f64>,
    pub m: DMatrix<f64>,
}

/// Reduced problem `½ ξᵀ H ξ + (F_z z + F_d d + f_c)ᵀ ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub h: DMatrix<f64>,
    pub f_z: DMatrix<f64>,
    pub f_d: DMatrix<f64>,
    pub f_c: DVector<f64>,
}

impl ReducedProblem {
    pub fn new(cost: &QuadraticCost, pred: &AffinePrediction, xi_penalty: &DVector<f64>) -> Self {
        let mt_p = pred.m.transpose() * &cost.p;
        let mut h = &mt_p * &pred.m;
        for (i, v) in xi_penalty.iter().enumerate() {
            h[(i, i)] += v;
        }
        // keep H exactly symmetric
        let h = (&h + h.transpose()) * 0.5;
        Self {
            h,
            f_z: &mt_p * &pred.w_z,
            f_d: pred.m.transpose() * &cost.g,
            f_c: &mt_p * &pred.w_c,
        }
    }

    pub fn linear_term(&self, z: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.f_z * z + &self.f_d * d + &self.f_c
    }
}

/// Symmetric positive semidefinite solve `H x = b`, by Cholesky when `H` is
/// definite and by a truncated eigen-decomposition otherwise.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Pseudo { vectors: DMatrix<f64>, inv_values: DVector<f64> },
}

impl SpdSolver {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        if h.nrows() == 0 {
            return Ok(Self::Pseudo {
                vectors: DMatrix::zeros(0, 0),
                inv_values: DVector::zeros(0),
            });
        }
        if let Some(ch) = h.clone().cholesky() {
            let diag_min = ch.l_dirty().diagonal().min();
            let diag_max = ch.l_dirty().diagonal().max();
            if diag_min > 1e-7 * diag_max {
                return Ok(Self::Cholesky(ch));
            }
        }
        let eig = h.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = eig.eigenvalues.min();
        if min < -1e-8 * top.max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        let cut = 1e-12 * top.max(1e-300) * h.nrows() as f64;
        let inv_values = eig.eigenvalues.map(|v| if v > cut { 1.0 / v } else { 0.0 });
        Ok(Self::Pseudo {
            vectors: eig.eigenvectors,
            inv_values,
        })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Cholesky(ch) => ch.solve(b),
            Self::Pseudo { vectors, inv_values } => {
                let mut t = vectors.transpose() * b;
                for (i, s) in inv_values.iter().enumerate() {
                    t.row_mut(i).scale_mut(*s);
                }
                vectors * t
            }
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve(&m).column(0).into_owned()
    }
}

/// Stacks a per-step bound `horizon` times.
pub fn repeat_block(v: &DVector<f64>, horizon: usize) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(n * horizon, |i, _| v[i % n])
}

pub(crate) fn rows_of(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub(crate) fn finite_rows(lower: &DVector<f64>, upper: &DVector<f64>) -> Vec<usize> {
    (0..lower.len())
        .filter(|&i| lower[i].is_finite() || upper[i].is_finite())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn tracking_cost_matches_direct_sum() {
        let layout = CostLayout { m: 1, p: 1, horizon: 3 };
        let cost = QuadraticCost::build(layout, &scalar(2.0), &scalar(0.5), None, 0.0);
        let w = DVector::from_column_slice(&[1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
        let yr = DVector::from_column_slice(&[0.0, 0.5, 1.0]);
        let ur = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        let one = DVector::from_element(1, 7.0);
        let d = layout.data_vector(&yr, &ur, &one, &one, &one);
        let mut direct = 0.0;
        for k in 0..3 {
            direct += 0.5 * (2.0 * (w[3 + k] - yr[k]).powi(2) + 0.5 * (w[k] - ur[k]).powi(2));
        }
        assert!((cost.value(&w, &d) - direct).abs() < 1e-12);
    }

    #[test]
    fn augmented_terms_match_direct_sum() {
        let layout = CostLayout { m: 1, p: 1, horizon: 4 };
        let aug = AugmentedCost {
            delta_u_weight: 0.3,
            integral_weight: 0.7,
            terminal_y_weight: 1.1,
            terminal_u_weight: 0.2,
            integrator_enabled: true,
        };
        let zero = scalar(0.0);
        let cost = QuadraticCost::build(layout, &zero, &zero, Some(&aug), 0.25);
        let u = [1.0, -0.5, 2.0, 0.3];
        let y = [0.1, 0.4, -0.2, 0.05];
        let yr = [0.2, 0.2, 0.3, 0.3];
        let ur = [0.0, 1.0, 2.0, 3.0];
        let (u_prev, y_prev, yr_prev) = (0.7, 0.15, 0.25);
        let mut w = DVector::zeros(8);
        for k in 0..4 {
            w[k] = u[k];
            w[4 + k] = y[k];
        }
        let d = layout.data_vector(
            &DVector::from_column_slice(&yr),
            &DVector::from_column_slice(&ur),
            &DVector::from_element(1, u_prev),
            &DVector::from_element(1, y_prev),
            &DVector::from_element(1, yr_prev),
        );
        let mut direct = 0.25 * u.iter().map(|v| v * v).sum::<f64>();
        direct += 0.3 * (u[0] - u_prev).powi(2);
        for k in 1..4 {
            direct += 0.3 * (u[k] - u[k - 1]).powi(2);
        }
        let mut q = 2.0 * (yr_prev - y_prev);
        for s in 0..3 {
            if s > 0 {
                q += yr[s - 1] - y[s - 1];
            }
            direct += 0.7 * q * q;
        }
        direct += 1.1 * (y[3] - yr[3]).powi(2) + 0.2 * (u[3] - ur[3]).powi(2);
        assert!((cost.value(&w, &d) - direct).abs() < 1e-12, "{} vs {}", cost.value(&w, &d), direct);
    }

    #[test]
    fn pseudo_solver_handles_singular() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let s = SpdSolver::new(&h).unwrap();
        let x = s.solve_vec(&DVector::from_column_slice(&[2.0, 0.0]));
        assert!((x[0] - 2.0).abs() < 1e-14 && x[1] == 0.0);
    }
}
