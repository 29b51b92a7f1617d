//! Receding-horizon closed loops against simulated plants.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::ddpc::{
    data_vector, reference_data, ControllerState, DdpcConfig, DdpcModel, LinearPolicy, References,
    RegularizerSpec, StepDiagnostics, Window,
};
use crate::error::{invalid, Error, Result};
use crate::lti::LtiPlant;
use crate::oracle::OracleMpc;
use crate::qp::QpSettings;
use crate::seed;
use crate::tuning::performance_index;
use crate::wheelslip::SlipPlant;

pub trait Plant {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Noise-free output at the current sample for input `u`.
    fn output(&self, u: &DVector<f64>) -> DVector<f64>;
    /// Moves to the next sample; `noise` is the measurement noise drawn for
    /// the current one.
    fn advance(&mut self, u: &DVector<f64>, noise: &DVector<f64>) -> Result<()>;
    fn crossed_unstable(&self) -> bool {
        false
    }
}

impl Plant for LtiPlant {
    fn input_dim(&self) -> usize {
        LtiPlant::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        LtiPlant::output_dim(self)
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        self.clean_output(u)
    }

    fn advance(&mut self, u: &DVector<f64>, noise: &DVector<f64>) -> Result<()> {
        self.step(u, noise);
        Ok(())
    }
}

impl Plant for SlipPlant {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn output(&self, _u: &DVector<f64>) -> DVector<f64> {
        SlipPlant::output(self)
    }

    fn advance(&mut self, u: &DVector<f64>, _noise: &DVector<f64>) -> Result<()> {
        SlipPlant::advance(self, u[0])
    }

    fn crossed_unstable(&self) -> bool {
        self.state.crossed_unstable
    }
}

pub struct Control {
    pub u: DVector<f64>,
    pub diagnostics: Option<StepDiagnostics>,
}

pub trait Controller {
    /// Records the sample `(u(t), y(t))` once it is measured.
    fn observe(&mut self, u: &DVector<f64>, y: &DVector<f64>);
    /// Input for sample `t` from data up to `t - 1`.
    fn control(&mut self, t: usize) -> Result<Control>;
}

/// Hook for online weight adaptation. Called before every step; returning a
/// different spec re-derives the control law.
pub trait BetaSchedule {
    fn regularizer(&mut self, t: usize, current: RegularizerSpec, window: &Window) -> RegularizerSpec;
}

pub struct DdpcController {
    pub state: ControllerState,
    pub config: DdpcConfig,
    pub settings: QpSettings,
    policy: Option<LinearPolicy>,
    schedule: Option<Box<dyn BetaSchedule>>,
}

impl DdpcController {
    /// Unconstrained configurations run on the precomputed linear law; others
    /// solve the QP at every step.
    pub fn new(model: Arc<DdpcModel>, config: DdpcConfig) -> Result<Self> {
        let policy = if config.is_unconstrained() {
            Some(model.linear_policy(&config)?)
        } else {
            None
        };
        Ok(Self {
            state: ControllerState::new(model),
            config,
            settings: QpSettings::default(),
            policy,
            schedule: None,
        })
    }

    /// Reuses a law already derived for `config`.
    pub fn with_policy(model: Arc<DdpcModel>, config: DdpcConfig, policy: LinearPolicy) -> Self {
        Self {
            state: ControllerState::new(model),
            config,
            settings: QpSettings::default(),
            policy: Some(policy),
            schedule: None,
        }
    }

    /// Solves the full problem every step even when a linear law exists.
    pub fn with_exact_steps(mut self) -> Self {
        self.policy = None;
        self
    }

    pub fn with_schedule(mut self, schedule: Box<dyn BetaSchedule>) -> Self {
        self.schedule = Some(schedule);
        self
    }
}

impl Controller for DdpcController {
    fn observe(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        self.state.observe(u.clone(), y.clone());
    }

    fn control(&mut self, t: usize) -> Result<Control> {
        if let Some(schedule) = self.schedule.as_mut() {
            let next = schedule.regularizer(t, self.config.regularizer, &self.state.window);
            if next != self.config.regularizer {
                self.config.regularizer = next;
                if self.policy.is_some() {
                    self.policy = Some(self.state.model.linear_policy(&self.config)?);
                }
            }
        }
        match &self.policy {
            Some(policy) => {
                let z = self.state.window.z_init()?;
                let d = data_vector(&self.state.window, &self.config, t);
                Ok(Control {
                    u: policy.apply(&z, &d),
                    diagnostics: None,
                })
            }
            None => {
                let s = self.state.solve_step(&self.config, t, &self.settings)?;
                Ok(Control {
                    u: s.first_input(self.config.input_dim()),
                    diagnostics: Some(s.diagnostics),
                })
            }
        }
    }
}

pub struct OracleController {
    pub mpc: OracleMpc,
    pub config: DdpcConfig,
    pub settings: QpSettings,
    policy: Option<LinearPolicy>,
    last: Option<(DVector<f64>, DVector<f64>)>,
}

impl OracleController {
    pub fn new(mpc: OracleMpc, config: DdpcConfig) -> Result<Self> {
        let policy = if config.is_unconstrained() {
            Some(mpc.linear_policy(&config)?)
        } else {
            None
        };
        Ok(Self {
            mpc,
            config,
            settings: QpSettings::default(),
            policy,
            last: None,
        })
    }
}

impl Controller for OracleController {
    fn observe(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        self.mpc.kf_update(u, y);
        self.last = Some((u.clone(), y.clone()));
    }

    fn control(&mut self, t: usize) -> Result<Control> {
        let (m, p) = (self.config.input_dim(), self.config.output_dim());
        let (u_prev, y_prev) = match &self.last {
            Some((u, y)) => (u.clone(), y.clone()),
            None => (DVector::zeros(m), DVector::zeros(p)),
        };
        let d = reference_data(&self.config, t, &u_prev, &y_prev);
        let u = match &self.policy {
            Some(policy) => policy.apply(&self.mpc.filter.x_hat, &d),
            None => self.mpc.mpc_step(&self.config, &d, &self.settings)?.0.rows(0, m).into_owned(),
        };
        Ok(Control { u, diagnostics: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSpec {
    /// Evaluated steps `T_v`.
    pub steps: usize,
    /// Steps with `warmup_input` applied before `t = 0` to fill the window.
    pub warmup_steps: usize,
    pub warmup_input: DVector<f64>,
    /// Per-channel measurement noise variance.
    pub noise_variances: Vec<f64>,
    pub seed: u64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub references: References,
}

impl ClosedLoopSpec {
    pub fn from_config(config: &DdpcConfig, steps: usize, noise_variances: Vec<f64>, seed: u64) -> Self {
        Self {
            steps,
            warmup_steps: config.rho,
            warmup_input: DVector::zeros(config.input_dim()),
            noise_variances,
            seed,
            q: config.q.clone(),
            r: config.r.clone(),
            references: config.references.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub inputs: DMatrix<f64>,
    /// Noise-free outputs.
    pub outputs: DMatrix<f64>,
    pub measured: DMatrix<f64>,
    /// Performance index on the noise-free outputs.
    pub j: f64,
    pub crossed_unstable: bool,
    pub diagnostics: Vec<StepDiagnostics>,
}

pub fn run_closed_loop(
    plant: &mut dyn Plant,
    controller: &mut dyn Controller,
    spec: &ClosedLoopSpec,
) -> Result<ClosedLoopRun> {
    let (m, p) = (plant.input_dim(), plant.output_dim());
    if spec.noise_variances.len() != p {
        return Err(Error::DimensionMismatch {
            what: "noise variances",
            expected: p,
            found: spec.noise_variances.len(),
        });
    }
    if spec.warmup_input.len() != m {
        return Err(Error::DimensionMismatch {
            what: "warm-up input",
            expected: m,
            found: spec.warmup_input.len(),
        });
    }
    if spec.steps == 0 {
        return Err(invalid("closed loop needs at least one step"));
    }
    let sd: Vec<f64> = spec.noise_variances.iter().map(|v| libm::sqrt(v.max(0.0))).collect();
    let mut rng = seed::rng(spec.seed);
    let mut draw = || {
        DVector::from_fn(p, |i, _| {
            let n: f64 = StandardNormal.sample(&mut rng);
            sd[i] * n
        })
    };

    for _ in 0..spec.warmup_steps {
        let u = &spec.warmup_input;
        let e = draw();
        let y = plant.output(u) + &e;
        controller.observe(u, &y);
        plant.advance(u, &e)?;
    }

    let mut inputs = DMatrix::zeros(m, spec.steps);
    let mut outputs = DMatrix::zeros(p, spec.steps);
    let mut measured = DMatrix::zeros(p, spec.steps);
    let mut diagnostics = Vec::new();
    for t in 0..spec.steps {
        let c = controller.control(t)?;
        if c.u.len() != m || !c.u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: t });
        }
        let e = draw();
        let clean = plant.output(&c.u);
        if !clean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: t });
        }
        let y = &clean + &e;
        controller.observe(&c.u, &y);
        plant.advance(&c.u, &e)?;
        inputs.set_column(t, &c.u);
        outputs.set_column(t, &clean);
        measured.set_column(t, &y);
        if let Some(dg) = c.diagnostics {
            diagnostics.push(dg);
        }
    }

    let u_ref = DMatrix::from_fn(m, spec.steps, |i, t| spec.references.u_at(t as isize)[i]);
    let y_ref = DMatrix::from_fn(p, spec.steps, |i, t| spec.references.y_at(t as isize)[i]);
    let j = performance_index(&inputs, &outputs, &u_ref, &y_ref, &spec.q, &spec.r)?;
    Ok(ClosedLoopRun {
        inputs,
        outputs,
        measured,
        j,
        crossed_unstable: plant.crossed_unstable(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpc::fit_with;
    use crate::lq::LqOptions;
    use crate::lti::{generate_input, simulate, Innovations, SignalSpec};
    use alloc::vec;

    fn plant() -> LtiPlant {
        LtiPlant::from_transfer_function(&[0.0, 0.5, 0.2], &[1.0, -1.2, 0.5], 0.0).unwrap()
    }

    fn config(reg: RegularizerSpec) -> DdpcConfig {
        DdpcConfig::new(
            10,
            2,
            DMatrix::from_element(1, 1, 1e3),
            DMatrix::from_element(1, 1, 1e-2),
            References::sinusoid(1, 1, 10, 50),
        )
        .with_regularizer(reg)
    }

    fn noiseless_model() -> Arc<DdpcModel> {
        let u = generate_input(&SignalSpec::white(1.0, 4), 600).unwrap();
        let traj = simulate(&plant(), &u, Innovations::Seed(1)).unwrap();
        let opts = LqOptions {
            require_full_l33: false,
            ..Default::default()
        };
        Arc::new(fit_with(&traj, 10, 2, opts).unwrap())
    }

    #[test]
    fn noiseless_ddpc_matches_oracle() {
        let cfg = config(RegularizerSpec::none());
        let spec = ClosedLoopSpec::from_config(&cfg, 50, vec![0.0], 3);
        let mut ctrl = DdpcController::new(noiseless_model(), cfg.clone()).unwrap();
        let a = run_closed_loop(&mut plant(), &mut ctrl, &spec).unwrap();
        let mut oracle = OracleController::new(OracleMpc::new(&plant(), 10).unwrap(), cfg).unwrap();
        let b = run_closed_loop(&mut plant(), &mut oracle, &spec).unwrap();
        assert!((a.j - b.j).abs() <= 1e-6 * b.j, "{} vs {}", a.j, b.j);
    }

    #[test]
    fn policy_and_exact_steps_agree() {
        let cfg = config(RegularizerSpec::gamma2(0.0, f64::INFINITY));
        let spec = ClosedLoopSpec::from_config(&cfg, 20, vec![0.0], 3);
        let model = noiseless_model();
        let mut fast = DdpcController::new(model.clone(), cfg.clone()).unwrap();
        let mut exact = DdpcController::new(model, cfg).unwrap().with_exact_steps();
        let a = run_closed_loop(&mut plant(), &mut fast, &spec).unwrap();
        let b = run_closed_loop(&mut plant(), &mut exact, &spec).unwrap();
        assert!((a.inputs - &b.inputs).amax() < 1e-8 * b.inputs.amax());
        assert_eq!(b.diagnostics.len(), 20);
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = config(RegularizerSpec::none());
        let spec = ClosedLoopSpec::from_config(&cfg, 30, vec![0.01], 77);
        let model = noiseless_model();
        let run = || {
            let mut c = DdpcController::new(model.clone(), cfg.clone()).unwrap();
            run_closed_loop(&mut plant(), &mut c, &spec).unwrap()
        };
        assert_eq!(run(), run());
    }

    struct Freeze;
    impl BetaSchedule for Freeze {
        fn regularizer(&mut self, _t: usize, _c: RegularizerSpec, _w: &Window) -> RegularizerSpec {
            RegularizerSpec::gamma2(f64::INFINITY, f64::INFINITY)
        }
    }

    #[test]
    fn schedule_hook_replaces_weights() {
        let cfg = config(RegularizerSpec::none());
        let spec = ClosedLoopSpec::from_config(&cfg, 5, vec![0.0], 1);
        let model = noiseless_model();
        let mut hooked = DdpcController::new(model.clone(), cfg.clone())
            .unwrap()
            .with_schedule(Box::new(Freeze));
        let a = run_closed_loop(&mut plant(), &mut hooked, &spec).unwrap();
        let frozen = cfg.with_regularizer(RegularizerSpec::gamma2(f64::INFINITY, f64::INFINITY));
        let mut direct = DdpcController::new(model, frozen).unwrap();
        let b = run_closed_loop(&mut plant(), &mut direct, &spec).unwrap();
        assert_eq!(a.inputs, b.inputs);
    }
}
