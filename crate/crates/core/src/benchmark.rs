//! Monte-Carlo tuning scenario on a linear benchmark plant.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::closed_loop::{run_closed_loop, ClosedLoopRun, ClosedLoopSpec, DdpcController, OracleController};
use crate::ddpc::{fit, DdpcConfig, DdpcModel, LinearPolicy, References, RegularizerKind, RegularizerSpec};
use crate::error::{invalid, Result};
use crate::lti::{
    add_white_noise, generate_input, noise_variances_for_snr, simulate, Innovations, LtiPlant, SignalKind,
    SignalSpec,
};
use crate::oracle::OracleMpc;
use crate::order::select_past_horizon;
use crate::seed::derive_seed;
use crate::trajectory::Trajectory;
use crate::tuning::{InputColor, Scenario, ScenarioLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoChoice {
    Fixed(usize),
    /// Information-criterion selection up to the given order, per training set.
    Aic { max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiStudySpec {
    pub name: alloc::string::String,
    /// Noise-free plant; measurement noise is injected at `snr_db`.
    pub plant: LtiPlant,
    pub n_data: usize,
    pub color: InputColor,
    pub input_variance: f64,
    pub cutoff_rad_s: f64,
    pub sample_period: f64,
    pub filter_order: usize,
    pub snr_db: f64,
    pub horizon: usize,
    pub rho: RhoChoice,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub steps: usize,
    pub regularizer: RegularizerKind,
    pub seed: u64,
}

impl LtiStudySpec {
    /// Horizon 20, `Q = 1e3`, `R = 1e-2`, 50 closed-loop steps, 15 dB.
    /// The past horizon is picked by AIC with the prediction horizon as cap.
    pub fn benchmark(plant: LtiPlant, sample_period: f64, n_data: usize, color: InputColor, seed: u64) -> Self {
        let (m, p) = (plant.input_dim(), plant.output_dim());
        Self {
            name: "ltibench".to_string(),
            plant,
            n_data,
            color,
            input_variance: 1.0,
            cutoff_rad_s: 1.8,
            sample_period,
            filter_order: 1,
            snr_db: 15.0,
            horizon: 20,
            rho: RhoChoice::Aic { max: 20 },
            q: DMatrix::identity(p, p) * 1e3,
            r: DMatrix::identity(m, m) * 1e-2,
            steps: 50,
            regularizer: RegularizerKind::Gamma2,
            seed,
        }
    }

    pub fn signal(&self) -> SignalSpec {
        let seed = derive_seed(self.seed, &[0]);
        let mut s = match self.color {
            InputColor::White => SignalSpec::white(self.input_variance, seed),
            InputColor::Colored => SignalSpec::low_pass(self.input_variance, self.cutoff_rad_s, self.sample_period, seed),
        };
        s.channels = self.plant.input_dim();
        if let SignalKind::LowPass { order, .. } = &mut s.kind {
            *order = self.filter_order;
        }
        s
    }

    pub fn references(&self) -> References {
        References::sinusoid(self.plant.input_dim(), self.plant.output_dim(), self.horizon, self.steps)
    }

    pub fn config(&self, rho: usize, regularizer: RegularizerSpec) -> DdpcConfig {
        DdpcConfig::new(self.horizon, rho, self.q.clone(), self.r.clone(), self.references()).with_regularizer(regularizer)
    }

    pub fn regularizer_spec(&self, beta2: f64, beta3: f64) -> RegularizerSpec {
        RegularizerSpec {
            kind: self.regularizer,
            beta2,
            beta3,
        }
    }
}

/// Fixed training input and clean response; outer runs redraw the output
/// noise only.
#[derive(Debug, Clone)]
pub struct LtiScenario {
    pub spec: LtiStudySpec,
    pub clean: Trajectory,
    pub noise_variances: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LtiFitted {
    pub model: Arc<DdpcModel>,
    pub rho: usize,
    pub training: Trajectory,
}

#[derive(Debug, Clone)]
pub struct LtiPrepared {
    pub config: DdpcConfig,
    pub policy: LinearPolicy,
}

impl LtiScenario {
    pub fn new(spec: LtiStudySpec) -> Result<Self> {
        if spec.plant.innovation_cov.amax() != 0.0 || spec.plant.state.amax() != 0.0 {
            return Err(invalid("benchmark plant must be noise-free and start at rest"));
        }
        let input = generate_input(&spec.signal(), spec.n_data)?;
        let clean = simulate(&spec.plant, &input, Innovations::Seed(0))?;
        let noise_variances = if spec.snr_db.is_infinite() {
            vec![0.0; spec.plant.output_dim()]
        } else {
            noise_variances_for_snr(clean.outputs(), spec.snr_db)?
        };
        Ok(Self {
            spec,
            clean,
            noise_variances,
        })
    }

    pub fn training(&self, outer: usize) -> Trajectory {
        add_white_noise(&self.clean, &self.noise_variances, derive_seed(self.spec.seed, &[1, outer as u64]))
    }

    pub fn loop_spec(&self, config: &DdpcConfig, outer: usize, inner: usize) -> ClosedLoopSpec {
        ClosedLoopSpec::from_config(
            config,
            self.spec.steps,
            self.noise_variances.clone(),
            derive_seed(self.spec.seed, &[2, outer as u64, inner as u64]),
        )
    }

    pub fn run(&self, fitted: &LtiFitted, prepared: &LtiPrepared, outer: usize, inner: usize) -> Result<ClosedLoopRun> {
        let mut ctrl = DdpcController::with_policy(fitted.model.clone(), prepared.config.clone(), prepared.policy.clone());
        let mut plant = self.spec.plant.clone();
        run_closed_loop(&mut plant, &mut ctrl, &self.loop_spec(&prepared.config, outer, inner))
    }

    /// Oracle MPC on the same noise seeds.
    pub fn run_oracle(&self, rho: usize, outer: usize, inner: usize) -> Result<ClosedLoopRun> {
        let config = self.spec.config(rho, RegularizerSpec::none());
        let mpc = OracleMpc::new(&self.spec.plant, self.spec.horizon)?;
        let mut ctrl = OracleController::new(mpc, config.clone())?;
        let mut plant = self.spec.plant.clone();
        run_closed_loop(&mut plant, &mut ctrl, &self.loop_spec(&config, outer, inner))
    }
}

impl Scenario for LtiScenario {
    type Fitted = LtiFitted;
    type Prepared = LtiPrepared;

    fn label(&self) -> ScenarioLabel {
        ScenarioLabel {
            name: self.spec.name.clone(),
            n_data: self.spec.n_data,
            input_color: self.spec.color,
            regularizer: match self.spec.regularizer {
                RegularizerKind::Gamma2 => "2",
                RegularizerKind::InputEnergy => "u",
                RegularizerKind::None => "none",
            }
            .to_string(),
        }
    }

    fn fit(&self, outer: usize) -> Result<LtiFitted> {
        let training = self.training(outer);
        let rho = match self.spec.rho {
            RhoChoice::Fixed(r) => r,
            RhoChoice::Aic { max } => select_past_horizon(&training, max)?,
        };
        let model = Arc::new(fit(&training, self.spec.horizon, rho)?);
        Ok(LtiFitted { model, rho, training })
    }

    fn prepare(&self, fitted: &LtiFitted, beta2: f64, beta3: f64) -> Result<LtiPrepared> {
        let config = self.spec.config(fitted.rho, self.spec.regularizer_spec(beta2, beta3));
        let policy = fitted.model.linear_policy(&config)?;
        Ok(LtiPrepared { config, policy })
    }

    fn evaluate(&self, fitted: &LtiFitted, prepared: &LtiPrepared, outer: usize, inner: usize) -> Result<f64> {
        Ok(self.run(fitted, prepared, outer, inner)?.j)
    }
}

/// First applied input for a controller fitted on `traj`, from a given past
/// window, under the given weights.
pub fn first_input(
    model: &DdpcModel,
    config: &DdpcConfig,
    window: &[(DVector<f64>, DVector<f64>)],
) -> Result<DVector<f64>> {
    let mut state = crate::ddpc::ControllerState::new(Arc::new(model.clone()));
    for (u, y) in window {
        state.observe(u.clone(), y.clone());
    }
    let s = state.solve_step(config, 0, &Default::default())?;
    Ok(s.first_input(config.input_dim()))
}
