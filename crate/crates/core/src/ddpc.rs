//! The γ-DDPC controller.
//!
//! Training data are compressed into LQ factors once. At run time the past
//! window fixes `γ1 = L11⁻¹ z_init` and the predictor
//!
//! ```text
//! u_f = L21 γ1 + L22 γ2
//! ȳ_f = L31 γ1 + L32 γ2 + L33 γ3
//! ```
//!
//! is substituted into the tracking cost, leaving a QP in `ξ = [γ2; γ3]`.
//! An infinite weight removes its block from `ξ` before the solver sees it.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::cost::{
    finite_rows, repeat_block, rows_of, AffinePrediction, AugmentedCost, CostLayout, QuadraticCost,
    ReducedProblem, SpdSolver,
};
use crate::error::{invalid, Error, Result};
use crate::hankel::stack_ddpc_blocks;
use crate::lq::{lq_factorize_with, LqFactors, LqOptions};
use crate::qp::{self, QpProblem, QpSettings, QpStatus};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    /// `β2‖γ2‖² + β3‖γ3‖²`
    Gamma2,
    /// `β2‖u_f‖² + β3‖γ3‖²`
    InputEnergy,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// `f64::INFINITY` deletes the penalized block.
    pub beta2: f64,
    pub beta3: f64,
}

impl RegularizerSpec {
    pub fn gamma2(beta2: f64, beta3: f64) -> Self {
        Self {
            kind: RegularizerKind::Gamma2,
            beta2,
            beta3,
        }
    }

    pub fn input_energy(beta2: f64, beta3: f64) -> Self {
        Self {
            kind: RegularizerKind::InputEnergy,
            beta2,
            beta3,
        }
    }

    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            beta2: 0.0,
            beta3: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b >= 0.0 && !b.is_nan();
        if !ok(self.beta2) || !ok(self.beta3) {
            return Err(invalid("regularization weights must be nonnegative or +inf"));
        }
        Ok(())
    }

    /// Weights actually applied; `None` means `(0, +inf)`.
    pub fn effective(&self) -> (f64, f64) {
        match self.kind {
            RegularizerKind::None => (0.0, f64::INFINITY),
            _ => (self.beta2, self.beta3),
        }
    }
}

/// Per-step box `lower <= v(k) <= upper`, repeated over the horizon.
/// Infinite entries leave a side open.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if (0..lower.len()).any(|i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i]) {
            return Err(invalid("box lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }
}

/// Reference sequences, one column per time step from `t = 0`. Columns past
/// the end repeat the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl References {
    pub fn constant(u: DVector<f64>, y: DVector<f64>) -> Self {
        Self {
            u: DMatrix::from_column_slice(u.len(), 1, u.as_slice()),
            y: DMatrix::from_column_slice(y.len(), 1, y.as_slice()),
        }
    }

    /// `y_r(t) = sin(5πt/(T+T_v-1))` on every output channel, `u_r = 0`.
    pub fn sinusoid(m: usize, p: usize, horizon: usize, steps: usize) -> Self {
        let len = horizon + steps;
        let period = (horizon + steps - 1) as f64;
        let y = DMatrix::from_fn(p, len, |_, t| {
            libm::sin(5.0 * core::f64::consts::PI * t as f64 / period)
        });
        Self {
            u: DMatrix::zeros(m, 1),
            y,
        }
    }

    fn column(m: &DMatrix<f64>, t: isize) -> DVector<f64> {
        let last = m.ncols() as isize - 1;
        m.column(t.clamp(0, last) as usize).into_owned()
    }

    pub fn u_at(&self, t: isize) -> DVector<f64> {
        Self::column(&self.u, t)
    }

    pub fn y_at(&self, t: isize) -> DVector<f64> {
        Self::column(&self.y, t)
    }

    /// Stacked `u_r(t..t+T-1)` and `y_r(t..t+T-1)`.
    pub fn window(&self, t: usize, horizon: usize) -> (DVector<f64>, DVector<f64>) {
        let (m, p) = (self.u.nrows(), self.y.nrows());
        let mut u = DVector::zeros(m * horizon);
        let mut y = DVector::zeros(p * horizon);
        for k in 0..horizon {
            u.rows_mut(k * m, m).copy_from(&self.u_at((t + k) as isize));
            y.rows_mut(k * p, p).copy_from(&self.y_at((t + k) as isize));
        }
        (u, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpcConfig {
    pub horizon: usize,
    pub rho: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub regularizer: RegularizerSpec,
    pub input_set: Option<BoxSet>,
    pub output_set: Option<BoxSet>,
    pub augmented: Option<AugmentedCost>,
    pub references: References,
}

impl DdpcConfig {
    pub fn new(horizon: usize, rho: usize, q: DMatrix<f64>, r: DMatrix<f64>, references: References) -> Self {
        Self {
            horizon,
            rho,
            q,
            r,
            regularizer: RegularizerSpec::none(),
            input_set: None,
            output_set: None,
            augmented: None,
            references,
        }
    }

    pub fn with_regularizer(mut self, regularizer: RegularizerSpec) -> Self {
        self.regularizer = regularizer;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.input_set.is_none() && self.output_set.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.rho == 0 {
            return Err(invalid("horizon and past horizon must be positive"));
        }
        let (m, p) = (self.r.nrows(), self.q.nrows());
        let square = |what, mat: &DMatrix<f64>, n| {
            if mat.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: mat.ncols(),
                });
            }
            if (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
                return Err(invalid("weights must be symmetric"));
            }
            Ok(())
        };
        square("output weight", &self.q, p)?;
        square("input weight", &self.r, m)?;
        if p > 0 && self.q.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * self.q.amax() {
            return Err(invalid("output weight must be positive semidefinite"));
        }
        if m == 0 || self.r.clone().cholesky().is_none() {
            return Err(invalid("input weight must be positive definite"));
        }
        self.regularizer.validate()?;
        if let Some(aug) = &self.augmented {
            aug.validate()?;
        }
        if let Some(b) = &self.input_set {
            if b.lower.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "input box",
                    expected: m,
                    found: b.lower.len(),
                });
            }
        }
        if let Some(b) = &self.output_set {
            if b.lower.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "output box",
                    expected: p,
                    found: b.lower.len(),
                });
            }
        }
        if self.references.u.nrows() != m || self.references.y.nrows() != p {
            return Err(Error::DimensionMismatch {
                what: "reference channels",
                expected: m + p,
                found: self.references.u.nrows() + self.references.y.nrows(),
            });
        }
        if self.references.u.ncols() == 0 || self.references.y.ncols() == 0 {
            return Err(invalid("references must hold at least one sample"));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> CostLayout {
        CostLayout {
            m: self.input_dim(),
            p: self.output_dim(),
            horizon: self.horizon,
        }
    }

    pub(crate) fn cost(&self) -> QuadraticCost {
        let (b2, _) = self.regularizer.effective();
        let input_energy = match self.regularizer.kind {
            RegularizerKind::InputEnergy if b2.is_finite() => b2,
            _ => 0.0,
        };
        QuadraticCost::build(self.layout(), &self.q, &self.r, self.augmented.as_ref(), input_energy)
    }
}

/// Rolling window of the last `rho` joint samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    rho: usize,
    m: usize,
    p: usize,
    samples: VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl Window {
    pub fn new(rho: usize, m: usize, p: usize) -> Self {
        Self {
            rho,
            m,
            p,
            samples: VecDeque::with_capacity(rho),
        }
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        if self.samples.len() == self.rho {
            self.samples.pop_front();
        }
        self.samples.push_back((u, y));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.samples.len() == self.rho
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// `[z(t-ρ); …; z(t-1)]` with `z = [u; y]`.
    pub fn z_init(&self) -> Result<DVector<f64>> {
        if !self.is_warm() {
            return Err(Error::ColdStart {
                required: self.rho,
                available: self.samples.len(),
            });
        }
        let k = self.m + self.p;
        let mut z = DVector::zeros(k * self.rho);
        for (i, (u, y)) in self.samples.iter().enumerate() {
            z.rows_mut(i * k, self.m).copy_from(u);
            z.rows_mut(i * k + self.m, self.p).copy_from(y);
        }
        Ok(z)
    }

    pub fn last(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.samples.back()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub objective: f64,
    pub gamma2_norm: f64,
    pub gamma3_norm: f64,
    pub active_constraints: usize,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub u_f: DVector<f64>,
    pub y_bar: DVector<f64>,
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    pub gamma3: DVector<f64>,
    pub diagnostics: StepDiagnostics,
}

impl StepSolution {
    pub fn first_input(&self, m: usize) -> DVector<f64> {
        self.u_f.rows(0, m).into_owned()
    }
}

/// First applied input as an affine function of `z_init` and the data
/// vector: `u(t) = K_z z_init + K_d d + k_c`. Valid only without box
/// constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub layout: CostLayout,
    pub k_z: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
    pub k_c: DVector<f64>,
}

impl LinearPolicy {
    pub fn apply(&self, z: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.k_z * z + &self.k_d * d + &self.k_c
    }

    pub(crate) fn from_reduced(
        pred: &AffinePrediction,
        reduced: &ReducedProblem,
        layout: CostLayout,
    ) -> Result<Self> {
        let m = layout.m;
        let solver = SpdSolver::new(&reduced.h)?;
        let e1_w_z = pred.w_z.rows(0, m).into_owned();
        let e1_w_c = pred.w_c.rows(0, m).into_owned();
        let e1_m = pred.m.rows(0, m).into_owned();
        if pred.m.ncols() == 0 {
            return Ok(Self {
                layout,
                k_z: e1_w_z,
                k_d: DMatrix::zeros(m, layout.nd()),
                k_c: e1_w_c,
            });
        }
        // ξ* = -H⁻¹ (F_z z + F_d d + f_c)
        let mut rhs = DMatrix::zeros(reduced.h.nrows(), reduced.f_z.ncols() + reduced.f_d.ncols() + 1);
        rhs.columns_mut(0, reduced.f_z.ncols()).copy_from(&reduced.f_z);
        rhs.columns_mut(reduced.f_z.ncols(), reduced.f_d.ncols()).copy_from(&reduced.f_d);
        rhs.column_mut(rhs.ncols() - 1).copy_from(&reduced.f_c);
        let sol = solver.solve(&rhs);
        let g = &e1_m * sol;
        let nz = reduced.f_z.ncols();
        let nd = reduced.f_d.ncols();
        Ok(Self {
            layout,
            k_z: e1_w_z - g.columns(0, nz),
            k_d: -g.columns(nz, nd).into_owned(),
            k_c: e1_w_c - g.column(nz + nd),
        })
    }
}

/// Fitted predictor: LQ factors with `L11⁻¹` precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpcModel {
    pub factors: LqFactors,
    l11_inv: DMatrix<f64>,
}

impl DdpcModel {
    pub fn new(factors: LqFactors) -> Result<Self> {
        let n = factors.l11.nrows();
        let l11_inv = factors
            .l11
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::RankDeficient {
                block: "L11",
                index: 0,
                ratio: 0.0,
            })?;
        Ok(Self { factors, l11_inv })
    }

    pub fn input_dim(&self) -> usize {
        self.factors.dims.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.factors.dims.output_dim
    }

    pub fn rho(&self) -> usize {
        self.factors.dims.rho
    }

    pub fn horizon(&self) -> usize {
        self.factors.dims.horizon
    }

    /// Forward substitution `L11 γ1 = z_init`.
    pub fn gamma1_from_init(&self, z_init: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.factors.l11.nrows();
        if z_init.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial window",
                expected: n,
                found: z_init.len(),
            });
        }
        gamma1_forward(&self.factors.l11, z_init)
    }

    /// Prediction `w = W z_init + M ξ` for the given weights with infinite
    /// blocks removed. Returns the prediction and the `γ2` recovery map
    /// `γ2 = G_z z_init + G_ξ ξ`.
    fn prediction(&self, spec: &RegularizerSpec) -> (AffinePrediction, Gamma2Map) {
        let f = &self.factors;
        let (mt, pt) = (f.l22.nrows(), f.l33.nrows());
        let (b2, b3) = spec.effective();
        let keep_g3 = b3.is_finite();
        let n_g3 = if keep_g3 { pt } else { 0 };
        let mut w_z = DMatrix::zeros(mt + pt, f.l11.nrows());
        w_z.rows_mut(0, mt).copy_from(&(&f.l21 * &self.l11_inv));
        w_z.rows_mut(mt, pt).copy_from(&(&f.l31 * &self.l11_inv));

        let fixed_g2: Option<DMatrix<f64>> = if b2.is_infinite() {
            match spec.kind {
                // u_f = 0 pins γ2 = -L22⁻¹ L21 γ1
                RegularizerKind::InputEnergy => Some(
                    -f.l22
                        .solve_lower_triangular(&(&f.l21 * &self.l11_inv))
                        .unwrap_or_else(|| DMatrix::zeros(mt, f.l11.nrows())),
                ),
                _ => Some(DMatrix::zeros(mt, f.l11.nrows())),
            }
        } else {
            None
        };

        let n_g2 = if fixed_g2.is_some() { 0 } else { mt };
        let mut m = DMatrix::zeros(mt + pt, n_g2 + n_g3);
        if n_g2 > 0 {
            m.view_mut((0, 0), (mt, mt)).copy_from(&f.l22);
            m.view_mut((mt, 0), (pt, mt)).copy_from(&f.l32);
        }
        if keep_g3 {
            m.view_mut((mt, n_g2), (pt, pt)).copy_from(&f.l33);
        }
        let g_map = match fixed_g2 {
            Some(g) => {
                let add_u = &f.l22 * &g;
                let add_y = &f.l32 * &g;
                let mut upper = w_z.rows_mut(0, mt);
                upper += add_u;
                let mut lower = w_z.rows_mut(mt, pt);
                lower += add_y;
                Gamma2Map { fixed: Some(g), free: false }
            }
            None => Gamma2Map { fixed: None, free: true },
        };
        (
            AffinePrediction {
                w_z,
                w_c: DVector::zeros(mt + pt),
                m,
            },
            g_map,
        )
    }

    fn xi_penalty(&self, spec: &RegularizerSpec, n_g2: usize, n_g3: usize) -> DVector<f64> {
        let (b2, b3) = spec.effective();
        let mut pen = DVector::zeros(n_g2 + n_g3);
        if spec.kind == RegularizerKind::Gamma2 && n_g2 > 0 {
            pen.rows_mut(0, n_g2).fill(2.0 * b2);
        }
        if n_g3 > 0 {
            pen.rows_mut(n_g2, n_g3).fill(2.0 * b3);
        }
        pen
    }

    fn check_config(&self, config: &DdpcConfig) -> Result<()> {
        config.validate()?;
        let d = &self.factors.dims;
        if config.horizon != d.horizon || config.rho != d.rho {
            return Err(invalid("config horizons differ from the fitted factors"));
        }
        if config.input_dim() != d.input_dim || config.output_dim() != d.output_dim {
            return Err(Error::DimensionMismatch {
                what: "config weights",
                expected: d.input_dim + d.output_dim,
                found: config.input_dim() + config.output_dim(),
            });
        }
        Ok(())
    }

    /// Gains of the unconstrained receding-horizon law.
    pub fn linear_policy(&self, config: &DdpcConfig) -> Result<LinearPolicy> {
        self.check_config(config)?;
        if !config.is_unconstrained() {
            return Err(invalid("a linear policy exists only without box constraints"));
        }
        let (pred, g2) = self.prediction(&config.regularizer);
        let n_g2 = if g2.free { self.factors.l22.nrows() } else { 0 };
        let pen = self.xi_penalty(&config.regularizer, n_g2, pred.m.ncols() - n_g2);
        let reduced = ReducedProblem::new(&config.cost(), &pred, &pen);
        LinearPolicy::from_reduced(&pred, &reduced, config.layout())
    }

    /// One receding-horizon problem for a given window and time index.
    pub fn solve_step(
        &self,
        window: &Window,
        config: &DdpcConfig,
        t: usize,
        settings: &QpSettings,
    ) -> Result<StepSolution> {
        self.check_config(config)?;
        let z = window.z_init()?;
        let gamma1 = self.gamma1_from_init(&z)?;
        let layout = config.layout();
        let d = data_vector(window, config, t);
        let (pred, g2map) = self.prediction(&config.regularizer);
        let (mt, pt) = (self.factors.l22.nrows(), self.factors.l33.nrows());
        let n_g2 = if g2map.free { mt } else { 0 };
        let n_g3 = pred.m.ncols() - n_g2;
        let pen = self.xi_penalty(&config.regularizer, n_g2, n_g3);
        let cost = config.cost();
        let reduced = ReducedProblem::new(&cost, &pred, &pen);
        let lin = reduced.linear_term(&z, &d);
        let w0 = &pred.w_z * &z + &pred.w_c;

        let (xi, active, iterations) = solve_reduced(&reduced.h, &lin, &pred, &w0, config, settings)?;

        let w = &w0 + &pred.m * &xi;
        let gamma2 = match &g2map.fixed {
            Some(g) => g * &z,
            None => xi.rows(0, n_g2).into_owned(),
        };
        let gamma3 = if n_g3 > 0 {
            xi.rows(n_g2, n_g3).into_owned()
        } else {
            DVector::zeros(pt)
        };
        let objective = cost.value(&w, &d) + 0.5 * xi.dot(&pen.component_mul(&xi));
        // ȳ_f is reconstructed from the factors, never re-estimated.
        let f = &self.factors;
        let u_f = &f.l21 * &gamma1 + &f.l22 * &gamma2;
        let y_bar = &f.l31 * &gamma1 + &f.l32 * &gamma2 + &f.l33 * &gamma3;
        debug_assert_eq!(layout.nw(), mt + pt);
        Ok(StepSolution {
            u_f,
            y_bar,
            diagnostics: StepDiagnostics {
                objective,
                gamma2_norm: gamma2.norm(),
                gamma3_norm: gamma3.norm(),
                active_constraints: active,
                qp_iterations: iterations,
            },
            gamma1,
            gamma2,
            gamma3,
        })
    }
}

struct Gamma2Map {
    fixed: Option<DMatrix<f64>>,
    free: bool,
}

pub(crate) fn gamma1_forward(l11: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l11.nrows();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let diag = l11[(i, i)];
        if diag == 0.0 {
            return Err(Error::RankDeficient {
                block: "L11",
                index: i,
                ratio: 0.0,
            });
        }
        let mut acc = z[i];
        for j in 0..i {
            acc -= l11[(i, j)] * g[j];
        }
        g[i] = acc / diag;
    }
    Ok(g)
}

/// Data vector `d` at time `t` from the window and the references.
pub fn data_vector(window: &Window, config: &DdpcConfig, t: usize) -> DVector<f64> {
    match window.last() {
        Some((u, y)) => reference_data(config, t, u, y),
        None => reference_data(
            config,
            t,
            &DVector::zeros(config.input_dim()),
            &DVector::zeros(config.output_dim()),
        ),
    }
}

/// Data vector `d` at time `t` given the last measured sample.
pub fn reference_data(config: &DdpcConfig, t: usize, u_prev: &DVector<f64>, y_prev: &DVector<f64>) -> DVector<f64> {
    let (ur, yr) = config.references.window(t, config.horizon);
    let yr_prev = config.references.y_at(t as isize - 1);
    config.layout().data_vector(&yr, &ur, u_prev, y_prev, &yr_prev)
}

/// Minimizes `½ ξᵀHξ + linᵀξ` subject to the configured boxes on
/// `w = w0 + Mξ`.
pub(crate) fn solve_reduced(
    h: &DMatrix<f64>,
    lin: &DVector<f64>,
    pred: &AffinePrediction,
    w0: &DVector<f64>,
    config: &DdpcConfig,
    settings: &QpSettings,
) -> Result<(DVector<f64>, usize, usize)> {
    let n = h.nrows();
    if config.is_unconstrained() {
        let xi = if n == 0 {
            DVector::zeros(0)
        } else {
            -SpdSolver::new(h)?.solve_vec(lin)
        };
        return Ok((xi, 0, 0));
    }
    let layout = config.layout();
    let (mt, pt) = (layout.m * layout.horizon, layout.p * layout.horizon);
    let mut lower = DVector::from_element(mt + pt, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(mt + pt, f64::INFINITY);
    if let Some(b) = &config.input_set {
        lower.rows_mut(0, mt).copy_from(&repeat_block(&b.lower, layout.horizon));
        upper.rows_mut(0, mt).copy_from(&repeat_block(&b.upper, layout.horizon));
    }
    if let Some(b) = &config.output_set {
        lower.rows_mut(mt, pt).copy_from(&repeat_block(&b.lower, layout.horizon));
        upper.rows_mut(mt, pt).copy_from(&repeat_block(&b.upper, layout.horizon));
    }
    let rows = finite_rows(&lower, &upper);
    let a_in = rows_of(&pred.m, &rows);
    let shift = |v: &DVector<f64>| DVector::from_fn(rows.len(), |i, _| v[rows[i]] - w0[rows[i]]);
    let (lb, ub) = (shift(&lower), shift(&upper));

    if n == 0 {
        let bad: Vec<usize> = (0..rows.len()).filter(|&i| lb[i] > 0.0 || ub[i] < 0.0).map(|i| rows[i]).collect();
        if !bad.is_empty() {
            return Err(Error::Infeasible { rows: bad });
        }
        return Ok((DVector::zeros(0), 0, 0));
    }
    let problem = QpProblem::unconstrained(h.clone(), lin.clone()).with_inequalities(a_in, lb, ub);
    let sol = qp::solve(&problem, settings)?;
    match sol.status {
        QpStatus::Infeasible => Err(Error::Infeasible {
            rows: sol.violated.iter().map(|&i| rows[i]).collect(),
        }),
        _ => Ok((sol.x, sol.active.len(), sol.iterations)),
    }
}

/// Controller state for one closed loop: shared factors plus the window.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub model: Arc<DdpcModel>,
    pub window: Window,
}

impl ControllerState {
    pub fn new(model: Arc<DdpcModel>) -> Self {
        let window = Window::new(model.rho(), model.input_dim(), model.output_dim());
        Self { model, window }
    }

    pub fn observe(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.window.push(u, y);
    }

    pub fn solve_step(&self, config: &DdpcConfig, t: usize, settings: &QpSettings) -> Result<StepSolution> {
        self.model.solve_step(&self.window, config, t, settings)
    }
}

/// Fits the predictor from a training trajectory.
pub fn fit(traj: &Trajectory, horizon: usize, rho: usize) -> Result<DdpcModel> {
    fit_with(traj, horizon, rho, LqOptions::default())
}

pub fn fit_with(traj: &Trajectory, horizon: usize, rho: usize, opts: LqOptions) -> Result<DdpcModel> {
    let blocks = stack_ddpc_blocks(traj, rho, horizon)?;
    DdpcModel::new(lq_factorize_with(&blocks, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{generate_input, simulate, Innovations, LtiPlant, SignalSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plant() -> LtiPlant {
        LtiPlant::from_transfer_function(&[0.0, 0.5, 0.2], &[1.0, -1.2, 0.5], 0.01).unwrap()
    }

    fn training(n: usize, seed: u64) -> Trajectory {
        let u = generate_input(&SignalSpec::white(1.0, seed), n).unwrap();
        simulate(&plant(), &u, Innovations::Seed(seed + 1)).unwrap()
    }

    fn config(reg: RegularizerSpec) -> DdpcConfig {
        DdpcConfig::new(
            8,
            3,
            DMatrix::from_element(1, 1, 10.0),
            DMatrix::from_element(1, 1, 0.1),
            References::sinusoid(1, 1, 8, 20),
        )
        .with_regularizer(reg)
    }

    fn warm_window(model: &DdpcModel, seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Window::new(model.rho(), 1, 1);
        for _ in 0..model.rho() {
            w.push(
                DVector::from_element(1, rng.random_range(-1.0..1.0)),
                DVector::from_element(1, rng.random_range(-1.0..1.0)),
            );
        }
        w
    }

    #[test]
    fn fit_dimensions() {
        let traj = training(1000, 1);
        let model = fit(&traj, 20, 5).unwrap();
        let f = &model.factors;
        assert_eq!(f.l11.shape(), (10, 10));
        assert_eq!(f.l22.shape(), (20, 20));
        assert_eq!(f.l33.shape(), (20, 20));
        let again = fit(&traj, 20, 5).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn gamma1_identity_and_residual() {
        let z = DVector::from_column_slice(&[1.0, -2.0, 3.0]);
        assert_eq!(gamma1_forward(&DMatrix::identity(3, 3), &z).unwrap(), z);
        let model = fit(&training(400, 2), 8, 3).unwrap();
        let z = DVector::from_fn(6, |i, _| (i as f64 - 2.5) * 0.3);
        let g = model.gamma1_from_init(&z).unwrap();
        let resid = (&model.factors.l11 * &g - &z).amax();
        assert!(resid <= 1e-12 * z.amax());
        let dense = model.factors.l11.clone().lu().solve(&z).unwrap();
        assert!((g - dense).amax() < 1e-10);
    }

    #[test]
    fn cold_window_is_rejected() {
        let model = fit(&training(400, 2), 8, 3).unwrap();
        let w = Window::new(3, 1, 1);
        let err = model.solve_step(&w, &config(RegularizerSpec::none()), 0, &QpSettings::default());
        assert!(matches!(err, Err(Error::ColdStart { required: 3, available: 0 })));
    }

    #[test]
    fn zero_fixed_point() {
        let model = fit(&training(400, 3), 8, 3).unwrap();
        let mut w = Window::new(3, 1, 1);
        for _ in 0..3 {
            w.push(DVector::zeros(1), DVector::zeros(1));
        }
        let mut cfg = config(RegularizerSpec::gamma2(0.1, 0.5));
        cfg.references = References::constant(DVector::zeros(1), DVector::zeros(1));
        let s = model.solve_step(&w, &cfg, 0, &QpSettings::default()).unwrap();
        assert!(s.u_f.amax() < 1e-12);
        assert!(s.gamma2.amax() < 1e-12 && s.gamma3.amax() < 1e-12);
    }

    #[test]
    fn prediction_is_reconstructed_from_factors() {
        let model = fit(&training(500, 4), 8, 3).unwrap();
        let w = warm_window(&model, 9);
        let s = model
            .solve_step(&w, &config(RegularizerSpec::gamma2(0.05, 0.2)), 3, &QpSettings::default())
            .unwrap();
        let f = &model.factors;
        let y = &f.l31 * &s.gamma1 + &f.l32 * &s.gamma2 + &f.l33 * &s.gamma3;
        assert_eq!(s.y_bar, y);
    }

    #[test]
    fn none_equals_gamma2_zero_inf() {
        let model = fit(&training(500, 5), 8, 3).unwrap();
        let w = warm_window(&model, 1);
        let a = model.solve_step(&w, &config(RegularizerSpec::none()), 2, &QpSettings::default()).unwrap();
        let b = model
            .solve_step(&w, &config(RegularizerSpec::gamma2(0.0, f64::INFINITY)), 2, &QpSettings::default())
            .unwrap();
        assert_eq!(a.u_f, b.u_f);
    }

    #[test]
    fn infinite_beta3_matches_equality_constrained_least_squares() {
        // Oracle: minimize the cost over (u_f, y_f) subject to
        // [u_f; y_f] - [L22; L32] γ2 = [L21; L31] γ1 as a KKT system.
        let model = fit(&training(600, 6), 8, 3).unwrap();
        let w = warm_window(&model, 2);
        let cfg = config(RegularizerSpec::gamma2(0.0, f64::INFINITY));
        let s = model.solve_step(&w, &cfg, 1, &QpSettings::default()).unwrap();
        let f = &model.factors;
        let cost = cfg.cost();
        let d = data_vector(&w, &cfg, 1);
        let (nw, ng) = (16, 8);
        let n = nw + ng;
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (nw, nw)).copy_from(&cost.p);
        let mut a = DMatrix::zeros(nw, n);
        a.view_mut((0, 0), (nw, nw)).fill_with_identity();
        a.view_mut((0, nw), (8, 8)).copy_from(&(-&f.l22));
        a.view_mut((8, nw), (8, 8)).copy_from(&(-&f.l32));
        let mut b = DVector::zeros(nw);
        b.rows_mut(0, 8).copy_from(&(&f.l21 * &s.gamma1));
        b.rows_mut(8, 8).copy_from(&(&f.l31 * &s.gamma1));
        let mut kkt = DMatrix::zeros(n + nw, n + nw);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, nw)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (nw, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + nw);
        rhs.rows_mut(0, nw).copy_from(&(-(&cost.g * &d)));
        rhs.rows_mut(n, nw).copy_from(&b);
        let sol = kkt.lu().solve(&rhs).unwrap();
        let scale = s.u_f.amax().max(1.0);
        assert!((sol.rows(0, 8) - &s.u_f).amax() < 1e-8 * scale);
        assert!((sol.rows(nw, ng) - &s.gamma2).amax() < 1e-8 * s.gamma2.amax().max(1.0));
    }

    #[test]
    fn infinite_beta_equals_block_deletion() {
        let model = fit(&training(600, 7), 8, 3).unwrap();
        let w = warm_window(&model, 3);
        let s_inf = model
            .solve_step(&w, &config(RegularizerSpec::gamma2(0.3, f64::INFINITY)), 0, &QpSettings::default())
            .unwrap();
        assert!(s_inf.gamma3.iter().all(|v| *v == 0.0));
        // huge finite weight approaches the deleted block
        let s_big = model
            .solve_step(&w, &config(RegularizerSpec::gamma2(0.3, 1e12)), 0, &QpSettings::default())
            .unwrap();
        assert!((s_inf.u_f.clone() - s_big.u_f).amax() < 1e-6 * s_inf.u_f.amax().max(1.0));

        let s2 = model
            .solve_step(&w, &config(RegularizerSpec::gamma2(f64::INFINITY, 0.4)), 0, &QpSettings::default())
            .unwrap();
        assert!(s2.gamma2.iter().all(|v| *v == 0.0));

        let su = model
            .solve_step(&w, &config(RegularizerSpec::input_energy(f64::INFINITY, 0.4)), 0, &QpSettings::default())
            .unwrap();
        assert!(su.u_f.amax() < 1e-10);
    }

    #[test]
    fn linear_policy_matches_solve_step() {
        let model = fit(&training(600, 8), 8, 3).unwrap();
        for reg in [
            RegularizerSpec::gamma2(0.01, 0.1),
            RegularizerSpec::input_energy(0.2, f64::INFINITY),
            RegularizerSpec::input_energy(f64::INFINITY, 0.3),
            RegularizerSpec::none(),
        ] {
            let mut cfg = config(reg);
            cfg.augmented = Some(AugmentedCost {
                delta_u_weight: 0.1,
                integral_weight: 0.5,
                terminal_y_weight: 2.0,
                terminal_u_weight: 0.01,
                integrator_enabled: true,
            });
            let pol = model.linear_policy(&cfg).unwrap();
            let w = warm_window(&model, 5);
            let s = model.solve_step(&w, &cfg, 4, &QpSettings::default()).unwrap();
            let u = pol.apply(&w.z_init().unwrap(), &data_vector(&w, &cfg, 4));
            assert!((u[0] - s.u_f[0]).abs() < 1e-9 * s.u_f[0].abs().max(1.0), "{reg:?}");
        }
    }

    #[test]
    fn input_box_is_respected() {
        let model = fit(&training(600, 9), 8, 3).unwrap();
        let w = warm_window(&model, 6);
        let mut cfg = config(RegularizerSpec::gamma2(0.0, 1.0));
        cfg.references = References::constant(DVector::zeros(1), DVector::from_element(1, 5.0));
        cfg.input_set = Some(BoxSet::new(DVector::from_element(1, -0.5), DVector::from_element(1, 0.5)).unwrap());
        let s = model.solve_step(&w, &cfg, 0, &QpSettings::default()).unwrap();
        assert!(s.u_f.iter().all(|v| v.abs() <= 0.5 + 1e-9));
        assert!(s.diagnostics.active_constraints > 0);
    }

    #[test]
    fn contradictory_boxes_are_infeasible() {
        let model = fit(&training(600, 10), 8, 3).unwrap();
        let w = warm_window(&model, 7);
        let mut cfg = config(RegularizerSpec::gamma2(f64::INFINITY, f64::INFINITY));
        cfg.input_set = Some(BoxSet::new(DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)).unwrap());
        assert!(matches!(
            model.solve_step(&w, &cfg, 0, &QpSettings::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn shrinkage_is_monotone(seed in 0u64..1000) {
            let model = fit(&training(400, seed), 8, 3).unwrap();
            let w = warm_window(&model, seed + 11);
            let mut prev = f64::INFINITY;
            for k in 0..10 {
                let b2 = 1e-4 * libm::pow(10.0, k as f64 * 0.5);
                let s = model.solve_step(&w, &config(RegularizerSpec::gamma2(b2, 0.1)), 0, &QpSettings::default()).unwrap();
                prop_assert!(s.diagnostics.gamma2_norm <= prev * (1.0 + 1e-9));
                prev = s.diagnostics.gamma2_norm;
            }
            let mut prev = f64::INFINITY;
            for k in 0..10 {
                let b3 = 1e-4 * libm::pow(10.0, k as f64 * 0.5);
                let s = model.solve_step(&w, &config(RegularizerSpec::gamma2(0.01, b3)), 0, &QpSettings::default()).unwrap();
                prop_assert!(s.diagnostics.gamma3_norm <= prev * (1.0 + 1e-9));
                prev = s.diagnostics.gamma3_norm;
            }
        }
    }
}
