//! JSON configuration files: plants, slip parameters and experiments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gamma_ddpc::benchmark::{LtiStudySpec, RhoChoice};
use gamma_ddpc::cost::AugmentedCost;
use gamma_ddpc::ddpc::RegularizerKind;
use gamma_ddpc::lti::LtiPlant;
use gamma_ddpc::seed::derive_seed;
use gamma_ddpc::slip_study::SlipStudySpec;
use gamma_ddpc::tuning::{AxisSpec, BetaGrid, InputColor};
use gamma_ddpc::wheelslip::SlipPlantParams;
use nalgebra::DMatrix;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Regularization weight; `"inf"` in files and on the command line stands for
/// the hard constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(pub f64);

pub fn parse_beta(s: &str) -> Result<f64, String> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        other => other.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v.is_nan() || v < 0.0 {
        return Err(format!("{s:?}: weights must be nonnegative or inf"));
    }
    Ok(v)
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Beta;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Beta, E> {
                if v.is_nan() || v < 0.0 {
                    return Err(E::custom("negative weight"));
                }
                Ok(Beta(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Beta, E> {
                Ok(Beta(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Beta, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Beta, E> {
                parse_beta(v).map(Beta).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Discrete-time SISO plant as a transfer function in `z^-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantFile {
    #[serde(default)]
    pub source: Option<String>,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub sample_period: f64,
}

impl PlantFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn plant(&self) -> Result<LtiPlant> {
        Ok(LtiPlant::from_transfer_function(&self.numerator, &self.denominator, 0.0)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlipParamsFile {
    #[serde(default)]
    pub source: Option<String>,
    pub mass: f64,
    pub speed: f64,
    pub radius: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub sample_period: f64,
    pub substeps: usize,
}

impl SlipParamsFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn params(&self) -> Result<SlipPlantParams> {
        let p = SlipPlantParams {
            mass: self.mass,
            speed: self.speed,
            radius: self.radius,
            inertia: self.inertia,
            gravity: self.gravity,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            sample_period: self.sample_period,
            substeps: self.substeps,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerName {
    Gamma2,
    Input,
    None,
}

impl RegularizerName {
    pub fn kind(self) -> RegularizerKind {
        match self {
            Self::Gamma2 => RegularizerKind::Gamma2,
            Self::Input => RegularizerKind::InputEnergy,
            Self::None => RegularizerKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    White,
    Colored,
}

impl ColorName {
    pub fn color(self) -> InputColor {
        match self {
            Self::White => InputColor::White,
            Self::Colored => InputColor::Colored,
        }
    }

    fn index(self) -> u64 {
        match self {
            Self::White => 0,
            Self::Colored => 1,
        }
    }
}

/// Either a fixed past horizon or `"aic"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSetting {
    Fixed(usize),
    Named(String),
}

impl Default for RhoSetting {
    fn default() -> Self {
        Self::Named("aic".into())
    }
}

impl RhoSetting {
    fn choice(&self, rho_max: usize) -> Result<RhoChoice> {
        match self {
            Self::Fixed(0) => bail!("rho must be positive"),
            Self::Fixed(r) => Ok(RhoChoice::Fixed(*r)),
            Self::Named(s) if s.eq_ignore_ascii_case("aic") => Ok(RhoChoice::Aic { max: rho_max }),
            Self::Named(s) => bail!("unknown rho setting {s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisConfig {
    pub low: f64,
    pub high: f64,
    pub points_per_decade: usize,
    #[serde(default = "yes")]
    pub zero: bool,
    #[serde(default = "yes")]
    pub infinity: bool,
}

fn yes() -> bool {
    true
}

impl AxisConfig {
    fn spec(&self) -> AxisSpec {
        AxisSpec {
            low: self.low,
            high: self.high,
            points_per_decade: self.points_per_decade,
            include_zero: self.zero,
            include_infinity: self.infinity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub beta2: AxisConfig,
    pub beta3: AxisConfig,
}

impl GridConfig {
    pub fn grid(&self) -> Result<BetaGrid> {
        Ok(BetaGrid::from_axes(&self.beta2.spec(), &self.beta3.spec())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub desk: Counts,
    pub full: Counts,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            desk: Counts { outer: 20, inner: 20 },
            full: Counts { outer: 100, inner: 100 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Desk,
    Full,
}

impl MonteCarlo {
    pub fn counts(&self, mode: Mode) -> Counts {
        match mode {
            Mode::Desk => self.desk,
            Mode::Full => self.full,
        }
    }
}

fn d_variance() -> f64 {
    1.0
}
fn d_cutoff() -> f64 {
    1.8
}
fn d_order() -> usize {
    1
}
fn d_lti_snr() -> f64 {
    15.0
}
fn d_horizon() -> usize {
    20
}
fn d_rho_max() -> usize {
    20
}
fn d_lti_q() -> f64 {
    1e3
}
fn d_lti_r() -> f64 {
    1e-2
}
fn d_steps() -> usize {
    50
}
fn d_regularizers() -> Vec<RegularizerName> {
    vec![RegularizerName::Gamma2, RegularizerName::Input]
}
fn d_zero() -> Beta {
    Beta(0.0)
}
fn d_inf() -> Beta {
    Beta(f64::INFINITY)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtiStudyConfig {
    pub plant: PathBuf,
    pub n_data: Vec<usize>,
    pub input_colors: Vec<ColorName>,
    #[serde(default = "d_variance")]
    pub input_variance: f64,
    #[serde(default = "d_cutoff")]
    pub cutoff_rad_s: f64,
    #[serde(default = "d_order")]
    pub filter_order: usize,
    #[serde(default = "d_lti_snr")]
    pub snr_db: f64,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub rho: RhoSetting,
    #[serde(default = "d_rho_max")]
    pub rho_max: usize,
    #[serde(default = "d_lti_q")]
    pub q: f64,
    #[serde(default = "d_lti_r")]
    pub r: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_regularizers")]
    pub regularizers: Vec<RegularizerName>,
    /// Weights for single runs.
    #[serde(default = "d_zero")]
    pub beta2: Beta,
    #[serde(default = "d_inf")]
    pub beta3: Beta,
    pub grid: GridConfig,
}

fn d_slip_n() -> usize {
    10_000
}
fn d_sigma2() -> f64 {
    1e-6
}
fn d_lambda_r() -> f64 {
    0.1
}
fn d_slip_q() -> f64 {
    1e3
}
fn d_slip_r() -> f64 {
    1e-7
}
fn d_slip_snr() -> f64 {
    40.0
}
fn d_eval_runs() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedConfig {
    pub delta_u_weight: f64,
    pub integral_weight: f64,
    pub terminal_y_weight: f64,
    pub terminal_u_weight: f64,
    #[serde(default = "yes")]
    pub integrator_enabled: bool,
}

impl Default for AugmentedConfig {
    fn default() -> Self {
        let a = AugmentedCost::default();
        Self {
            delta_u_weight: a.delta_u_weight,
            integral_weight: a.integral_weight,
            terminal_y_weight: a.terminal_y_weight,
            terminal_u_weight: a.terminal_u_weight,
            integrator_enabled: a.integrator_enabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipAxisConfig {
    pub low: f64,
    pub high: f64,
    pub points: usize,
}

impl Default for SlipAxisConfig {
    fn default() -> Self {
        Self {
            low: 1e-4,
            high: 1e4,
            points: 15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlipStudyConfig {
    pub params: PathBuf,
    #[serde(default = "d_slip_n")]
    pub n_data: usize,
    #[serde(default = "d_sigma2")]
    pub sigma2_n: f64,
    #[serde(default = "d_lambda_r")]
    pub lambda_r: f64,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub rho: RhoSetting,
    #[serde(default = "d_rho_max")]
    pub rho_max: usize,
    #[serde(default = "d_slip_q")]
    pub q: f64,
    #[serde(default = "d_slip_r")]
    pub r: f64,
    #[serde(default)]
    pub augmented: AugmentedConfig,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_slip_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub axis: SlipAxisConfig,
    /// Closed loops at the tuned weights.
    #[serde(default = "d_eval_runs")]
    pub eval_runs: usize,
    #[serde(default = "d_zero")]
    pub beta2: Beta,
    #[serde(default = "d_inf")]
    pub beta3: Beta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Study {
    Ltibench(LtiStudyConfig),
    Wheelslip(SlipStudyConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub monte_carlo: MonteCarlo,
    pub study: Study,
}

impl ExperimentConfig {
    /// Loads a config; relative file references resolve against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.study {
            Study::Ltibench(s) => fix(&mut s.plant),
            Study::Wheelslip(s) => fix(&mut s.params),
        }
        if let Some(out) = &mut cfg.output {
            fix(out);
        }
        Ok(cfg)
    }
}

impl LtiStudyConfig {
    /// Spec for one data set; regularizers of the same `(n_data, color)` share
    /// the seed so their runs are paired.
    pub fn spec(
        &self,
        name: &str,
        master_seed: u64,
        n_data: usize,
        color: ColorName,
        regularizer: RegularizerName,
    ) -> Result<LtiStudySpec> {
        let pf = PlantFile::load(&self.plant)?;
        let seed = derive_seed(master_seed, &[n_data as u64, color.index()]);
        let mut s = LtiStudySpec::benchmark(pf.plant()?, pf.sample_period, n_data, color.color(), seed);
        s.name = name.to_string();
        s.input_variance = self.input_variance;
        s.cutoff_rad_s = self.cutoff_rad_s;
        s.filter_order = self.filter_order;
        s.snr_db = self.snr_db;
        s.horizon = self.horizon;
        s.rho = self.rho.choice(self.rho_max)?;
        s.q = DMatrix::identity(1, 1) * self.q;
        s.r = DMatrix::identity(1, 1) * self.r;
        s.steps = self.steps;
        s.regularizer = regularizer.kind();
        Ok(s)
    }
}

impl SlipStudyConfig {
    pub fn spec(&self, master_seed: u64) -> Result<SlipStudySpec> {
        let params = SlipParamsFile::load(&self.params)?.params()?;
        let mut s = SlipStudySpec::standard(params, master_seed);
        s.n_data = self.n_data;
        s.sigma2_n = self.sigma2_n;
        s.lambda_r = self.lambda_r;
        s.horizon = self.horizon;
        s.rho = self.rho.choice(self.rho_max)?;
        s.q = self.q;
        s.r = self.r;
        s.augmented = AugmentedCost {
            delta_u_weight: self.augmented.delta_u_weight,
            integral_weight: self.augmented.integral_weight,
            terminal_y_weight: self.augmented.terminal_y_weight,
            terminal_u_weight: self.augmented.terminal_u_weight,
            integrator_enabled: self.augmented.integrator_enabled,
        };
        s.steps = self.steps;
        s.snr_db = self.snr_db;
        s.axis_low = self.axis.low;
        s.axis_high = self.axis.high;
        s.axis_points = self.axis.points;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_accepts_inf_strings_and_numbers() {
        let v: Vec<Beta> = serde_json::from_str(r#"[0, 0.5, "inf", "Infinity", 3]"#).unwrap();
        assert_eq!(v.iter().map(|b| b.0).collect::<Vec<_>>(), vec![0.0, 0.5, f64::INFINITY, f64::INFINITY, 3.0]);
        assert!(serde_json::from_str::<Beta>("-1").is_err());
        assert!(serde_json::from_str::<Beta>(r#""abc""#).is_err());
        assert_eq!(serde_json::to_string(&Beta(f64::INFINITY)).unwrap(), r#""inf""#);
    }

    #[test]
    fn rho_setting_forms() {
        let r: RhoSetting = serde_json::from_str("5").unwrap();
        assert_eq!(r.choice(20).unwrap(), RhoChoice::Fixed(5));
        let r: RhoSetting = serde_json::from_str(r#""aic""#).unwrap();
        assert_eq!(r.choice(12).unwrap(), RhoChoice::Aic { max: 12 });
        let r: RhoSetting = serde_json::from_str(r#""bic""#).unwrap();
        assert!(r.choice(12).is_err());
    }
}
