//! Model-based MPC baseline with full knowledge of the plant.

use nalgebra::{DMatrix, DVector};

use crate::cost::{AffinePrediction, ReducedProblem};
use crate::ddpc::{solve_reduced, DdpcConfig, LinearPolicy};
use crate::error::{invalid, Error, Result};
use crate::lti::{spectral_radius, LtiPlant};
use crate::qp::QpSettings;
use crate::wheelslip::SlipLinearization;

/// Steady-state filter in innovation form,
/// `x̂⁺ = A x̂ + B u + K (y - C x̂ - D u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanFilter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub x_hat: DVector<f64>,
}

impl KalmanFilter {
    /// Filter for `plant`, started at `x̂ = 0`.
    pub fn new(plant: &LtiPlant) -> Result<Self> {
        if !plant.predictor_stable() {
            return Err(invalid("predictor A - KC is not stable"));
        }
        Ok(Self {
            a: plant.a.clone(),
            b: plant.b.clone(),
            c: plant.c.clone(),
            d: plant.d.clone(),
            k: plant.k.clone(),
            x_hat: DVector::zeros(plant.state_dim()),
        })
    }

    pub fn with_state(mut self, x_hat: DVector<f64>) -> Self {
        self.x_hat = x_hat;
        self
    }

    pub fn update(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> &DVector<f64> {
        let innovation = y - &self.c * &self.x_hat - &self.d * u;
        self.x_hat = &self.a * &self.x_hat + &self.b * u + &self.k * innovation;
        &self.x_hat
    }

    /// Spectral radius of `A - KC`, the per-step contraction of the
    /// estimation error on exact data.
    pub fn error_contraction(&self) -> f64 {
        spectral_radius(&(&self.a - &self.k * &self.c))
    }
}

/// `ŷ_f = Γ x̂ + H_d u_f` over `horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub gamma: DMatrix<f64>,
    pub h_d: DMatrix<f64>,
}

impl PredictionMatrices {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, horizon: usize) -> Self {
        let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
        let mut gamma = DMatrix::zeros(p * horizon, n);
        // markov[k] = C A^{k-1} B for k >= 1, markov[0] = D
        let mut markov = alloc::vec::Vec::with_capacity(horizon);
        markov.push(d.clone());
        let mut ca = c.clone();
        for k in 0..horizon {
            gamma.rows_mut(k * p, p).copy_from(&ca);
            if k + 1 < horizon {
                markov.push(&ca * b);
            }
            ca = &ca * a;
        }
        let mut h_d = DMatrix::zeros(p * horizon, m * horizon);
        for i in 0..horizon {
            for j in 0..=i {
                h_d.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
            }
        }
        Self { gamma, h_d }
    }
}

/// Oracle controller. The model may be a deviation model about an operating
/// point: the plant sees `u - u_offset` and reports `y - y_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMpc {
    pub filter: KalmanFilter,
    pub prediction: PredictionMatrices,
    pub u_offset: DVector<f64>,
    pub y_offset: DVector<f64>,
    pub horizon: usize,
}

impl OracleMpc {
    pub fn new(plant: &LtiPlant, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        let filter = KalmanFilter::new(plant)?;
        Ok(Self {
            prediction: PredictionMatrices::new(&plant.a, &plant.b, &plant.c, &plant.d, horizon),
            u_offset: DVector::zeros(plant.input_dim()),
            y_offset: DVector::zeros(plant.output_dim()),
            filter,
            horizon,
        })
    }

    /// Linearized slip model about `(λ_r, T_r)`, filter started at the
    /// operating point.
    pub fn for_slip(lin: &SlipLinearization, horizon: usize, initial_slip: f64) -> Result<Self> {
        let mut o = Self::new(&lin.to_lti(0.0), horizon)?;
        o.u_offset = DVector::from_element(1, lin.torque_r);
        o.y_offset = DVector::from_element(1, lin.lambda_r);
        o.filter.x_hat = DVector::from_element(1, initial_slip - lin.lambda_r);
        Ok(o)
    }

    pub fn input_dim(&self) -> usize {
        self.u_offset.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_offset.len()
    }

    pub fn kf_update(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> &DVector<f64> {
        let du = u - &self.u_offset;
        let dy = y - &self.y_offset;
        self.filter.update(&du, &dy)
    }

    fn check_config(&self, config: &DdpcConfig) -> Result<()> {
        config.validate()?;
        if config.horizon != self.horizon {
            return Err(invalid("config horizon differs from the oracle horizon"));
        }
        if config.input_dim() != self.input_dim() || config.output_dim() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "config weights",
                expected: self.input_dim() + self.output_dim(),
                found: config.input_dim() + config.output_dim(),
            });
        }
        Ok(())
    }

    /// `w = [0; Γ] x̂ + [0; y_off - H_d u_off] + [I; H_d] u_f`.
    fn affine(&self) -> AffinePrediction {
        let (m, p, t) = (self.input_dim(), self.output_dim(), self.horizon);
        let n = self.filter.a.nrows();
        let mut w_z = DMatrix::zeros((m + p) * t, n);
        w_z.rows_mut(m * t, p * t).copy_from(&self.prediction.gamma);
        let u_off = crate::cost::repeat_block(&self.u_offset, t);
        let y_off = crate::cost::repeat_block(&self.y_offset, t);
        let mut w_c = DVector::zeros((m + p) * t);
        w_c.rows_mut(m * t, p * t).copy_from(&(y_off - &self.prediction.h_d * u_off));
        let mut mm = DMatrix::zeros((m + p) * t, m * t);
        mm.view_mut((0, 0), (m * t, m * t)).fill_with_identity();
        mm.view_mut((m * t, 0), (p * t, m * t)).copy_from(&self.prediction.h_d);
        AffinePrediction { w_z, w_c, m: mm }
    }

    /// Optimal future inputs and predicted outputs for data vector `d`.
    pub fn mpc_step(
        &self,
        config: &DdpcConfig,
        d: &DVector<f64>,
        settings: &QpSettings,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_config(config)?;
        let pred = self.affine();
        let pen = DVector::zeros(pred.m.ncols());
        let reduced = ReducedProblem::new(&config.cost(), &pred, &pen);
        let lin = reduced.linear_term(&self.filter.x_hat, d);
        let w0 = &pred.w_z * &self.filter.x_hat + &pred.w_c;
        let (u_f, _, _) = solve_reduced(&reduced.h, &lin, &pred, &w0, config, settings)?;
        let w = w0 + &pred.m * &u_f;
        let mt = u_f.len();
        Ok((u_f, w.rows(mt, w.len() - mt).into_owned()))
    }

    /// First input as an affine function of `x̂` and `d`.
    pub fn linear_policy(&self, config: &DdpcConfig) -> Result<LinearPolicy> {
        self.check_config(config)?;
        if !config.is_unconstrained() {
            return Err(invalid("a linear policy exists only without box constraints"));
        }
        let pred = self.affine();
        let pen = DVector::zeros(pred.m.ncols());
        let reduced = ReducedProblem::new(&config.cost(), &pred, &pen);
        LinearPolicy::from_reduced(&pred, &reduced, config.layout())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpc::References;
    use crate::wheelslip::SlipPlantParams;

    fn plant(k: f64) -> LtiPlant {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d = DMatrix::zeros(1, 1);
        let kk = DMatrix::from_column_slice(2, 1, &[k, 0.0]);
        LtiPlant::new(a, b, c, d, kk, DMatrix::from_element(1, 1, 0.1)).unwrap()
    }

    #[test]
    fn zero_gain_is_open_loop_observer() {
        let p = plant(0.0);
        let mut f = KalmanFilter::new(&p).unwrap().with_state(DVector::from_column_slice(&[1.0, -1.0]));
        let u = DVector::from_element(1, 0.5);
        let expected = &p.a * &f.x_hat + &p.b * &u;
        f.update(&u, &DVector::from_element(1, 100.0));
        assert!((f.x_hat.clone() - expected).amax() < 1e-15);
    }

    #[test]
    fn zero_innovation_only_propagates() {
        let p = plant(0.5);
        let x = DVector::from_column_slice(&[0.3, 0.2]);
        let mut f = KalmanFilter::new(&p).unwrap().with_state(x.clone());
        let u = DVector::from_element(1, -1.0);
        let y = &p.c * &x + &p.d * &u;
        f.update(&u, &y);
        assert!((f.x_hat.clone() - (&p.a * &x + &p.b * &u)).amax() < 1e-15);
    }

    #[test]
    fn estimation_error_contracts_by_predictor_spectrum() {
        let p = plant(0.5);
        let mut truth = p.clone();
        truth.state = DVector::from_column_slice(&[1.0, 1.0]);
        let mut f = KalmanFilter::new(&p).unwrap();
        let rate = f.error_contraction();
        let mut err0 = (truth.state.clone() - &f.x_hat).norm();
        let mut last_ratio = 0.0;
        for t in 0..60 {
            let u = DVector::from_element(1, libm::sin(t as f64));
            let y = truth.step(&u, &DVector::zeros(1));
            f.update(&u, &y);
            let err = (truth.state.clone() - &f.x_hat).norm();
            if t > 40 {
                last_ratio = err / err0;
            }
            err0 = err;
        }
        assert!((last_ratio - rate).abs() < 1e-3, "{last_ratio} vs {rate}");
    }

    fn cfg(t: usize) -> DdpcConfig {
        DdpcConfig::new(
            t,
            1,
            DMatrix::from_element(1, 1, 5.0),
            DMatrix::from_element(1, 1, 0.3),
            References::sinusoid(1, 1, t, 10),
        )
    }

    #[test]
    fn zero_state_zero_reference() {
        let o = OracleMpc::new(&plant(0.0), 6).unwrap();
        let mut c = cfg(6);
        c.references = References::constant(DVector::zeros(1), DVector::zeros(1));
        let d = DVector::zeros(c.layout().nd());
        let (u, _) = o.mpc_step(&c, &d, &QpSettings::default()).unwrap();
        assert!(u.amax() < 1e-14);
    }

    #[test]
    fn matches_batch_least_squares() {
        let t = 6;
        let mut o = OracleMpc::new(&plant(0.0), t).unwrap();
        o.filter.x_hat = DVector::from_column_slice(&[0.4, -0.7]);
        let c = cfg(t);
        let (ur, yr) = c.references.window(2, t);
        let layout = c.layout();
        let d = layout.data_vector(&yr, &ur, &DVector::zeros(1), &DVector::zeros(1), &DVector::zeros(1));
        let (u, y) = o.mpc_step(&c, &d, &QpSettings::default()).unwrap();
        let g = &o.prediction.gamma;
        let hd = &o.prediction.h_d;
        let qb = DMatrix::identity(t, t) * 5.0;
        let rb = DMatrix::identity(t, t) * 0.3;
        let lhs = hd.transpose() * &qb * hd + &rb;
        let rhs = hd.transpose() * &qb * (&yr - g * &o.filter.x_hat) + &rb * &ur;
        let u_ls = lhs.lu().solve(&rhs).unwrap();
        assert!((u.clone() - u_ls).amax() < 1e-8);
        assert!((y - (g * &o.filter.x_hat + hd * &u)).amax() < 1e-12);
        let pol = o.linear_policy(&c).unwrap();
        assert!((pol.apply(&o.filter.x_hat, &d)[0] - u[0]).abs() < 1e-10);
    }

    #[test]
    fn prediction_matrices_match_simulation() {
        let p = plant(0.0);
        let pm = PredictionMatrices::new(&p.a, &p.b, &p.c, &p.d, 5);
        let x0 = DVector::from_column_slice(&[0.2, -0.1]);
        let u = DVector::from_column_slice(&[1.0, 0.5, -0.3, 0.0, 2.0]);
        let mut sim = p.clone();
        sim.state = x0.clone();
        let y_pred = &pm.gamma * &x0 + &pm.h_d * &u;
        for k in 0..5 {
            let y = sim.step(&DVector::from_element(1, u[k]), &DVector::zeros(1));
            assert!((y[0] - y_pred[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn slip_oracle_holds_operating_point() {
        let params = SlipPlantParams::default();
        let lin = SlipLinearization::new(0.1, &params);
        let o = OracleMpc::for_slip(&lin, 10, 0.1).unwrap();
        let mut c = DdpcConfig::new(
            10,
            1,
            DMatrix::from_element(1, 1, 1e3),
            DMatrix::from_element(1, 1, 1e-7),
            References::constant(DVector::from_element(1, lin.torque_r), DVector::from_element(1, 0.1)),
        );
        c.augmented = Some(Default::default());
        let (ur, yr) = c.references.window(0, 10);
        let d = c.layout().data_vector(
            &yr,
            &ur,
            &DVector::from_element(1, lin.torque_r),
            &DVector::from_element(1, 0.1),
            &DVector::from_element(1, 0.1),
        );
        let (u, y) = o.mpc_step(&c, &d, &QpSettings::default()).unwrap();
        assert!((u[0] - lin.torque_r).abs() < 1e-6 * lin.torque_r);
        assert!((y[0] - 0.1).abs() < 1e-9);
    }
}
