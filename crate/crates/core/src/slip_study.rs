//! Wheel-slip regulation with the augmented cost: training data, staged
//! regularization tuning and step-response metrics.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::benchmark::RhoChoice;
use crate::closed_loop::{run_closed_loop, ClosedLoopRun, ClosedLoopSpec, DdpcController, OracleController};
use crate::cost::AugmentedCost;
use crate::ddpc::{fit, DdpcConfig, DdpcModel, LinearPolicy, References, RegularizerKind, RegularizerSpec};
use crate::error::{invalid, Error, Result};
use crate::lti::sample_variance;
use crate::oracle::OracleMpc;
use crate::order::select_past_horizon;
use crate::seed::derive_seed;
use crate::tuning::{median, run_campaign, BetaGrid, CampaignReport, InputColor, Scenario, ScenarioLabel};
use crate::wheelslip::{
    collect_training_data, equilibrium_torque, CollectionConfig, SlipLinearization, SlipPlant, SlipPlantParams,
    SlipTrainingData,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SlipStudySpec {
    pub params: SlipPlantParams,
    pub n_data: usize,
    /// Output noise variance during data collection.
    pub sigma2_n: f64,
    pub lambda_r: f64,
    pub horizon: usize,
    pub rho: RhoChoice,
    pub q: f64,
    pub r: f64,
    pub augmented: AugmentedCost,
    pub steps: usize,
    /// Closed-loop measurement SNR against the training slip variance.
    pub snr_db: f64,
    pub axis_low: f64,
    pub axis_high: f64,
    pub axis_points: usize,
    pub seed: u64,
}

impl SlipStudySpec {
    pub fn standard(params: SlipPlantParams, seed: u64) -> Self {
        Self {
            params,
            n_data: 10_000,
            sigma2_n: 1e-6,
            lambda_r: 0.1,
            horizon: 20,
            rho: RhoChoice::Aic { max: 20 },
            q: 1e3,
            r: 1e-7,
            augmented: AugmentedCost::default(),
            steps: 50,
            snr_db: 40.0,
            axis_low: 1e-4,
            axis_high: 1e4,
            axis_points: 15,
            seed,
        }
    }

    pub fn torque_r(&self) -> f64 {
        equilibrium_torque(self.lambda_r, &self.params)
    }

    pub fn references(&self) -> References {
        References::constant(
            DVector::from_element(1, self.torque_r()),
            DVector::from_element(1, self.lambda_r),
        )
    }

    pub fn config(&self, rho: usize, regularizer: RegularizerSpec) -> DdpcConfig {
        let mut c = DdpcConfig::new(
            self.horizon,
            rho,
            DMatrix::from_element(1, 1, self.q),
            DMatrix::from_element(1, 1, self.r),
            self.references(),
        )
        .with_regularizer(regularizer);
        c.augmented = Some(self.augmented);
        c
    }

    /// Log-spaced tuning axis, endpoints included.
    pub fn axis(&self) -> Result<Vec<f64>> {
        log_points(self.axis_low, self.axis_high, self.axis_points)
    }
}

/// `count` logarithmically spaced values from `low` to `high` inclusive.
pub fn log_points(low: f64, high: f64, count: usize) -> Result<Vec<f64>> {
    if !(low > 0.0 && high > low && high.is_finite()) || count < 2 {
        return Err(invalid("log axis needs 0 < low < high and at least two points"));
    }
    let (a, b) = (libm::log10(low), libm::log10(high));
    Ok((0..count)
        .map(|i| libm::pow(10.0, a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

/// One training record shared by every closed-loop run; inner runs redraw the
/// measurement noise.
#[derive(Debug, Clone)]
pub struct SlipScenario {
    pub spec: SlipStudySpec,
    pub data: SlipTrainingData,
    pub noise_variance: f64,
}

#[derive(Debug, Clone)]
pub struct SlipFitted {
    pub model: Arc<DdpcModel>,
    pub rho: usize,
}

#[derive(Debug, Clone)]
pub struct SlipPrepared {
    pub config: DdpcConfig,
    pub policy: LinearPolicy,
}

impl SlipScenario {
    pub fn new(spec: SlipStudySpec) -> Result<Self> {
        let collection = CollectionConfig::new(spec.n_data, spec.sigma2_n, derive_seed(spec.seed, &[0]));
        let data = collect_training_data(&spec.params, &collection)?;
        let var = sample_variance(data.true_slip.iter().copied());
        if !(var > 0.0) {
            return Err(Error::ZeroPower { channel: 0 });
        }
        let noise_variance = var / libm::pow(10.0, spec.snr_db / 10.0);
        Ok(Self {
            spec,
            data,
            noise_variance,
        })
    }

    pub fn loop_spec(&self, config: &DdpcConfig, inner: usize) -> ClosedLoopSpec {
        ClosedLoopSpec::from_config(
            config,
            self.spec.steps,
            vec![self.noise_variance],
            derive_seed(self.spec.seed, &[2, inner as u64]),
        )
    }

    pub fn plant(&self) -> Result<SlipPlant> {
        SlipPlant::new(self.spec.params)
    }

    pub fn run(&self, fitted: &SlipFitted, prepared: &SlipPrepared, inner: usize) -> Result<ClosedLoopRun> {
        let mut ctrl = DdpcController::with_policy(fitted.model.clone(), prepared.config.clone(), prepared.policy.clone());
        let mut plant = self.plant()?;
        run_closed_loop(&mut plant, &mut ctrl, &self.loop_spec(&prepared.config, inner))
    }

    /// Linearized-model MPC on the same noise seeds.
    pub fn run_oracle(&self, rho: usize, inner: usize) -> Result<ClosedLoopRun> {
        let config = self.spec.config(rho, RegularizerSpec::none());
        let lin = SlipLinearization::new(self.spec.lambda_r, &self.spec.params);
        let mpc = OracleMpc::for_slip(&lin, self.spec.horizon, 0.0)?;
        let mut ctrl = OracleController::new(mpc, config.clone())?;
        let mut plant = self.plant()?;
        run_closed_loop(&mut plant, &mut ctrl, &self.loop_spec(&config, inner))
    }
}

impl Scenario for SlipScenario {
    type Fitted = SlipFitted;
    type Prepared = SlipPrepared;

    fn label(&self) -> ScenarioLabel {
        ScenarioLabel {
            name: "wheelslip".to_string(),
            n_data: self.spec.n_data,
            input_color: InputColor::White,
            regularizer: "2".to_string(),
        }
    }

    fn fit(&self, _outer: usize) -> Result<SlipFitted> {
        let traj = &self.data.trajectory;
        let rho = match self.spec.rho {
            RhoChoice::Fixed(r) => r,
            RhoChoice::Aic { max } => select_past_horizon(traj, max)?,
        };
        Ok(SlipFitted {
            model: Arc::new(fit(traj, self.spec.horizon, rho)?),
            rho,
        })
    }

    fn prepare(&self, fitted: &SlipFitted, beta2: f64, beta3: f64) -> Result<SlipPrepared> {
        let config = self.spec.config(
            fitted.rho,
            RegularizerSpec {
                kind: RegularizerKind::Gamma2,
                beta2,
                beta3,
            },
        );
        let policy = fitted.model.linear_policy(&config)?;
        Ok(SlipPrepared { config, policy })
    }

    fn evaluate(&self, fitted: &SlipFitted, prepared: &SlipPrepared, _outer: usize, inner: usize) -> Result<f64> {
        Ok(self.run(fitted, prepared, inner)?.j)
    }
}

/// Outcome of the staged search: `β̄2` with `β3 = +inf`, `β̄3` with `β2 = 0`,
/// then the joint grid built around both.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipTuning {
    pub beta2_bar: f64,
    pub beta3_bar: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta2_sweep: CampaignReport,
    pub beta3_sweep: CampaignReport,
    pub joint: CampaignReport,
}

pub fn tune_slip(scenario: &SlipScenario, n_inner: usize) -> Result<SlipTuning> {
    let axis = scenario.spec.axis()?;
    let pick = |report: &CampaignReport| -> Result<(f64, f64)> {
        report
            .argmin(0)
            .map(|i| report.points[i])
            .ok_or_else(|| invalid("every grid point failed"))
    };
    let g2 = BetaGrid::new(axis.clone(), vec![f64::INFINITY], 0)?;
    let beta2_sweep = run_campaign(scenario, &g2, 1, n_inner);
    let (beta2_bar, _) = pick(&beta2_sweep)?;
    let g3 = BetaGrid::new(vec![0.0], axis, 0)?;
    let beta3_sweep = run_campaign(scenario, &g3, 1, n_inner);
    let (_, beta3_bar) = pick(&beta3_sweep)?;
    let joint = run_campaign(scenario, &BetaGrid::slip_joint(beta2_bar, beta3_bar)?, 1, n_inner);
    let (beta2, beta3) = pick(&joint)?;
    Ok(SlipTuning {
        beta2_bar,
        beta3_bar,
        beta2,
        beta3,
        beta2_sweep,
        beta3_sweep,
        joint,
    })
}

/// Step-response figures in samples, for a response starting at `initial`
/// and aimed at `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// 10% to 90% of the step; `None` if 90% is never reached.
    pub rise_time: Option<usize>,
    /// First sample after which the response stays within the band.
    pub settling_time: Option<usize>,
    /// Peak excess over the target relative to the step size, floored at 0.
    pub overshoot: f64,
    pub peak: f64,
}

impl StepMetrics {
    pub fn from_response(y: &[f64], initial: f64, target: f64, band: f64) -> Result<Self> {
        let step = target - initial;
        if y.is_empty() || step == 0.0 || !(band > 0.0) {
            return Err(invalid("step metrics need samples, a nonzero step and a positive band"));
        }
        let frac = |v: f64| (v - initial) / step;
        let first = |level: f64| y.iter().position(|&v| frac(v) >= level);
        let rise_time = match (first(0.1), first(0.9)) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        let tol = band * step.abs();
        let settling_time = match y.iter().rposition(|&v| (v - target).abs() > tol) {
            None => Some(0),
            Some(i) if i + 1 < y.len() => Some(i + 1),
            Some(_) => None,
        };
        let extreme = if step > 0.0 {
            y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            y.iter().copied().fold(f64::INFINITY, f64::min)
        };
        Ok(Self {
            rise_time,
            settling_time,
            overshoot: (frac(extreme) - 1.0).max(0.0),
            peak: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Pointwise median across equally long runs.
pub fn median_trajectory(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = runs.first().map(|r| r.len()).ok_or_else(|| invalid("no runs"))?;
    if runs.iter().any(|r| r.len() != len) {
        return Err(invalid("runs differ in length"));
    }
    Ok((0..len)
        .map(|t| median(&runs.iter().map(|r| r[t]).collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SlipEvaluation {
    pub runs: Vec<ClosedLoopRun>,
    pub median_slip: Vec<f64>,
    pub median_torque: Vec<f64>,
    pub metrics: StepMetrics,
    pub any_crossed: bool,
    pub max_slip: f64,
}

/// Closed loops at fixed weights, summarized by the median response.
pub fn evaluate_slip(scenario: &SlipScenario, fitted: &SlipFitted, beta2: f64, beta3: f64, n_runs: usize) -> Result<SlipEvaluation> {
    let prepared = scenario.prepare(fitted, beta2, beta3)?;
    let runs = (0..n_runs)
        .map(|i| scenario.run(fitted, &prepared, i))
        .collect::<Result<Vec<_>>>()?;
    summarize(&runs, scenario.spec.lambda_r, 0.05)
}

pub fn summarize(runs: &[ClosedLoopRun], lambda_r: f64, band: f64) -> Result<SlipEvaluation> {
    let slips: Vec<Vec<f64>> = runs.iter().map(|r| r.outputs.row(0).iter().copied().collect()).collect();
    let torques: Vec<Vec<f64>> = runs.iter().map(|r| r.inputs.row(0).iter().copied().collect()).collect();
    let median_slip = median_trajectory(&slips)?;
    let median_torque = median_trajectory(&torques)?;
    let metrics = StepMetrics::from_response(&median_slip, 0.0, lambda_r, band)?;
    Ok(SlipEvaluation {
        any_crossed: runs.iter().any(|r| r.crossed_unstable),
        max_slip: slips.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max),
        runs: runs.to_vec(),
        median_slip,
        median_torque,
        metrics,
    })
}
