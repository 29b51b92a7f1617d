//! Single-wheel braking dynamics with Burckhardt friction.
//!
//! ```text
//! dλ/dt = -(1/v) ((1-λ)/m + r²/J) m g μ(λ) + r/(J v) T_b
//! μ(λ)  = α1 (1 - exp(-α2 λ)) - α3 λ
//! ```

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::lti::LtiPlant;
use crate::seed;
use crate::trajectory::Trajectory;

/// Slip above which the open-loop wheel dynamics are unstable.
pub const UNSTABLE_SLIP: f64 = 0.17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipPlantParams {
    /// Quarter-car mass [kg].
    pub mass: f64,
    /// Longitudinal speed [m/s], constant over an episode.
    pub speed: f64,
    /// Wheel radius [m].
    pub radius: f64,
    /// Wheel inertia [kg m²].
    pub inertia: f64,
    pub gravity: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// [s]
    pub sample_period: f64,
    /// RK4 substeps per sample period (zero-order-hold torque across all).
    pub substeps: usize,
}

impl Default for SlipPlantParams {
    /// Quarter car on dry asphalt; `mass` is set so that the equilibrium
    /// torque at 10% slip is 768.9 Nm (768.97 with m = 225 kg).
    fn default() -> Self {
        Self {
            mass: 225.0,
            speed: 30.0,
            radius: 0.3,
            inertia: 1.0,
            gravity: 9.81,
            alpha1: 1.2801,
            alpha2: 23.99,
            alpha3: 0.52,
            sample_period: 0.01,
            substeps: 10,
        }
    }
}

impl SlipPlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.mass),
            ("v", self.speed),
            ("r", self.radius),
            ("J", self.inertia),
            ("g", self.gravity),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("sample_period", self.sample_period),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(alloc::format!("slip parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.alpha3 >= 0.0) {
            return Err(invalid("alpha3 must be nonnegative"));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps must be at least 1"));
        }
        Ok(())
    }

    /// Mass for which [`equilibrium_torque`] at `lambda` equals `torque`,
    /// keeping every other parameter fixed.
    pub fn calibrated_mass(&self, lambda: f64, torque: f64) -> f64 {
        let mu = burckhardt_mu(lambda, self);
        let fric = self.gravity * mu;
        (torque / fric - self.inertia * (1.0 - lambda) / self.radius) / self.radius
    }

    fn slip_rate(&self, lambda: f64, torque: f64) -> f64 {
        let p = self;
        -(1.0 / p.speed) * ((1.0 - lambda) / p.mass + p.radius * p.radius / p.inertia)
            * p.mass
            * p.gravity
            * burckhardt_mu(lambda, p)
            + p.radius / (p.inertia * p.speed) * torque
    }
}

pub fn burckhardt_mu(lambda: f64, params: &SlipPlantParams) -> f64 {
    params.alpha1 * (1.0 - libm::exp(-params.alpha2 * lambda)) - params.alpha3 * lambda
}

/// `dμ/dλ`.
pub fn burckhardt_slope(lambda: f64, params: &SlipPlantParams) -> f64 {
    params.alpha1 * params.alpha2 * libm::exp(-params.alpha2 * lambda) - params.alpha3
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlipState {
    pub lambda: f64,
    /// Set once the slip has exceeded [`UNSTABLE_SLIP`].
    pub crossed_unstable: bool,
}

impl SlipState {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            crossed_unstable: lambda > UNSTABLE_SLIP,
        }
    }
}

/// Advances one sample period with RK4 under a held torque.
pub fn step_slip(state: SlipState, torque: f64, params: &SlipPlantParams) -> Result<SlipState> {
    if !torque.is_finite() {
        return Err(invalid("braking torque must be finite"));
    }
    let h = params.sample_period / params.substeps as f64;
    let mut lambda = state.lambda;
    let mut crossed = state.crossed_unstable;
    for sub in 0..params.substeps {
        let k1 = params.slip_rate(lambda, torque);
        let s2 = lambda + 0.5 * h * k1;
        let k2 = params.slip_rate(s2, torque);
        let s3 = lambda + 0.5 * h * k2;
        let k3 = params.slip_rate(s3, torque);
        let s4 = lambda + h * k3;
        let k4 = params.slip_rate(s4, torque);
        let next = lambda + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() {
            return Err(Error::NonFinite { step: sub });
        }
        lambda = next.clamp(0.0, 1.0);
        crossed |= lambda > UNSTABLE_SLIP || [s2, s3, s4].iter().any(|s| *s > UNSTABLE_SLIP);
    }
    Ok(SlipState {
        lambda,
        crossed_unstable: crossed,
    })
}

/// Torque holding `lambda_r` stationary.
pub fn equilibrium_torque(lambda_r: f64, params: &SlipPlantParams) -> f64 {
    let p = params;
    (p.inertia / p.radius)
        * ((1.0 - lambda_r) / p.mass + p.radius * p.radius / p.inertia)
        * p.mass
        * p.gravity
        * burckhardt_mu(lambda_r, p)
}

/// Zero-order-hold discretization of the slip dynamics linearized about
/// `(lambda_r, equilibrium_torque(lambda_r))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipLinearization {
    pub lambda_r: f64,
    pub torque_r: f64,
    /// Continuous-time pole `∂λ̇/∂λ`.
    pub pole: f64,
    /// `∂λ̇/∂T_b`.
    pub gain: f64,
    pub a: f64,
    pub b: f64,
}

impl SlipLinearization {
    pub fn new(lambda_r: f64, params: &SlipPlantParams) -> Self {
        let p = params;
        let mu = burckhardt_mu(lambda_r, p);
        let dmu = burckhardt_slope(lambda_r, p);
        let pole = -(p.gravity / p.speed)
            * (-mu + ((1.0 - lambda_r) + p.mass * p.radius * p.radius / p.inertia) * dmu);
        let gain = p.radius / (p.inertia * p.speed);
        let a = libm::exp(pole * p.sample_period);
        let b = if pole.abs() > 1e-12 {
            (a - 1.0) / pole * gain
        } else {
            gain * p.sample_period
        };
        Self {
            lambda_r,
            torque_r: equilibrium_torque(lambda_r, p),
            pole,
            gain,
            a,
            b,
        }
    }

    /// Deviation model `δλ(t+1) = a δλ(t) + b δT(t)` with the slip measured
    /// directly (`C = 1`, predictor gain `K = a`).
    pub fn to_lti(&self, noise_var: f64) -> LtiPlant {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        LtiPlant::new(s(self.a), s(self.b), s(1.0), s(0.0), s(self.a), s(noise_var))
            .expect("scalar model dimensions are consistent")
    }
}

/// PI slip controller with setpoint weighting, used to excite the plant for
/// training data:
/// `T = T_eq(r) + kp (b r - λ) + ki Σ (r - λ) Ts`, clamped to `[0, torque_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiSlipController {
    pub kp: f64,
    pub ki: f64,
    pub setpoint_weight: f64,
    pub torque_max: f64,
}

impl Default for PiSlipController {
    fn default() -> Self {
        Self {
            kp: 4000.0,
            ki: 120_000.0,
            setpoint_weight: 0.0,
            torque_max: 3000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    pub reference_low: f64,
    pub reference_high: f64,
    /// Samples each random slip reference is held for.
    pub hold_samples: usize,
    pub n_samples: usize,
    /// Variance of the white noise added to the commanded torque.
    pub input_noise_var: f64,
    /// Variance of the white noise on the measured slip.
    pub output_noise_var: f64,
    pub controller: PiSlipController,
    pub seed: u64,
}

impl CollectionConfig {
    /// Reference in `[0, 0.15]`, output noise `sigma2_n` and input noise
    /// `1e8 sigma2_n`.
    pub fn new(n_samples: usize, sigma2_n: f64, seed: u64) -> Self {
        Self {
            reference_low: 0.0,
            reference_high: 0.15,
            hold_samples: 100,
            n_samples,
            input_noise_var: 1e8 * sigma2_n,
            output_noise_var: sigma2_n,
            controller: PiSlipController::default(),
            seed,
        }
    }
}

/// Closed-loop training record: applied torque and measured slip per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipTrainingData {
    pub trajectory: Trajectory,
    pub references: Vec<f64>,
    /// Noise-free slip.
    pub true_slip: Vec<f64>,
}

pub fn collect_training_data(
    params: &SlipPlantParams,
    config: &CollectionConfig,
) -> Result<SlipTrainingData> {
    params.validate()?;
    if config.n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if config.hold_samples == 0 || !(config.reference_high >= config.reference_low) {
        return Err(invalid("invalid reference sampler"));
    }
    let mut rng = seed::rng(config.seed);
    let in_sd = libm::sqrt(config.input_noise_var.max(0.0));
    let out_sd = libm::sqrt(config.output_noise_var.max(0.0));
    let pi = config.controller;
    let ts = params.sample_period;

    let mut state = SlipState::default();
    let mut integral = 0.0;
    let mut reference = 0.0;
    let mut u = Vec::with_capacity(config.n_samples);
    let mut y = Vec::with_capacity(config.n_samples);
    let mut refs = Vec::with_capacity(config.n_samples);
    let mut truth = Vec::with_capacity(config.n_samples);
    for t in 0..config.n_samples {
        if t % config.hold_samples == 0 {
            reference = if config.reference_high > config.reference_low {
                rng.random_range(config.reference_low..config.reference_high)
            } else {
                config.reference_low
            };
        }
        let n_out: f64 = StandardNormal.sample(&mut rng);
        let n_in: f64 = StandardNormal.sample(&mut rng);
        let measured = state.lambda + out_sd * n_out;
        let error = reference - measured;
        let ff = equilibrium_torque(reference, params);
        let unsat =
            ff + pi.kp * (pi.setpoint_weight * reference - measured) + pi.ki * (integral + error * ts);
        let command = unsat.clamp(0.0, pi.torque_max);
        // conditional integration as anti-windup
        if command == unsat {
            integral += error * ts;
        }
        let applied = command + in_sd * n_in;
        u.push(applied);
        y.push(measured);
        refs.push(reference);
        truth.push(state.lambda);
        state = step_slip(state, applied, params)?;
        if state.crossed_unstable {
            return Err(Error::SlipInstability {
                step: t,
                lambda: state.lambda,
            });
        }
    }
    let trajectory = Trajectory::new(
        DMatrix::from_row_slice(1, u.len(), &u),
        DMatrix::from_row_slice(1, y.len(), &y),
    )?
    .with_sample_period(ts);
    Ok(SlipTrainingData {
        trajectory,
        references: refs,
        true_slip: truth,
    })
}

/// Nonlinear wheel-slip plant as a closed-loop simulation target.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipPlant {
    pub params: SlipPlantParams,
    pub state: SlipState,
}

impl SlipPlant {
    pub fn new(params: SlipPlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: SlipState::default(),
        })
    }

    pub fn output(&self) -> DVector<f64> {
        DVector::from_element(1, self.state.lambda)
    }

    pub fn advance(&mut self, torque: f64) -> Result<()> {
        self.state = step_slip(self.state, torque, &self.params)?;
        Ok(())
    }
}
