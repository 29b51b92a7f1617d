//! Innovation-form LTI plants, training signals and measurement noise.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::seed;
use crate::trajectory::Trajectory;

/// `x(t+1) = A x(t) + B u(t) + K e(t)`, `y(t) = C x(t) + D u(t) + e(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub state: DVector<f64>,
    predictor_stable: bool,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
        innovation_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let check = |what, expected, found| {
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
        check("A columns", n, a.ncols())?;
        check("B rows", n, b.nrows())?;
        check("C columns", n, c.ncols())?;
        check("D rows", p, d.nrows())?;
        check("D columns", m, d.ncols())?;
        check("K rows", n, k.nrows())?;
        check("K columns", p, k.ncols())?;
        check("innovation covariance rows", p, innovation_cov.nrows())?;
        check("innovation covariance columns", p, innovation_cov.ncols())?;
        if m == 0 || p == 0 {
            return Err(invalid("plant needs at least one input and one output"));
        }
        let predictor_stable = n == 0 || spectral_radius(&(&a - &k * &c)) < 1.0;
        Ok(Self {
            state: DVector::zeros(n),
            a,
            b,
            c,
            d,
            k,
            innovation_cov,
            predictor_stable,
        })
    }

    /// Realizes `G(z) = num(z) / den(z)` in controllable canonical form.
    ///
    /// Both polynomials are in descending powers of `z`; `den` is normalized to
    /// a monic leading coefficient and `num` may be at most as long as `den`.
    /// The noise model is output-error (`K = 0`) with the given variance.
    pub fn from_transfer_function(num: &[f64], den: &[f64], noise_var: f64) -> Result<Self> {
        if den.is_empty() || den[0] == 0.0 {
            return Err(invalid("denominator needs a nonzero leading coefficient"));
        }
        if num.len() > den.len() {
            return Err(invalid("improper transfer function"));
        }
        let n = den.len() - 1;
        let lead = den[0];
        let a_coef: Vec<f64> = den[1..].iter().map(|v| v / lead).collect();
        let mut b_coef = vec![0.0; n + 1];
        let off = n + 1 - num.len();
        for (i, v) in num.iter().enumerate() {
            b_coef[off + i] = v / lead;
        }
        let d0 = b_coef[0];
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            // last row: -a_n ... -a_1
            a[(n - 1, j)] = -a_coef[n - 1 - j];
        }
        let mut b = DMatrix::zeros(n, 1);
        if n > 0 {
            b[(n - 1, 0)] = 1.0;
        }
        let mut c = DMatrix::zeros(1, n);
        for j in 0..n {
            // c_j multiplies z^j: b_{n-j} - d0 a_{n-j}
            let idx = n - j;
            c[(0, j)] = b_coef[idx] - d0 * a_coef[idx - 1];
        }
        Self::new(
            a,
            b,
            c,
            DMatrix::from_element(1, 1, d0),
            DMatrix::zeros(n, 1),
            DMatrix::from_element(1, 1, noise_var),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Whether `A - K C` has spectral radius below one.
    pub fn predictor_stable(&self) -> bool {
        self.predictor_stable
    }

    /// Output at the current state, then advances the state.
    pub fn step(&mut self, u: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let y = &self.c * &self.state + &self.d * u + e;
        self.state = &self.a * &self.state + &self.b * u + &self.k * e;
        y
    }

    /// Noise-free output `C x + D u` at the current state.
    pub fn clean_output(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.c * &self.state + &self.d * u
    }

    /// Draws `len` innovations from `N(0, innovation_cov)`.
    pub fn draw_innovations(&self, len: usize, seed: u64) -> DMatrix<f64> {
        let p = self.output_dim();
        let mut rng = seed::rng(seed);
        let white = DMatrix::from_fn(p, len, |_, _| StandardNormal.sample(&mut rng));
        covariance_factor(&self.innovation_cov) * white
    }
}

/// Lower factor `F` with `F F^T = cov`; semidefinite directions are zeroed.
fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max)
}

pub enum Innovations<'a> {
    Given(&'a DMatrix<f64>),
    Seed(u64),
}

/// Iterates the plant from its stored initial state. The plant itself is not
/// modified.
pub fn simulate(
    plant: &LtiPlant,
    inputs: &DMatrix<f64>,
    innovations: Innovations<'_>,
) -> Result<Trajectory> {
    if inputs.nrows() != plant.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input channels",
            expected: plant.input_dim(),
            found: inputs.nrows(),
        });
    }
    let len = inputs.ncols();
    let drawn;
    let e = match innovations {
        Innovations::Given(e) => e,
        Innovations::Seed(s) => {
            drawn = plant.draw_innovations(len, s);
            &drawn
        }
    };
    if e.nrows() != plant.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "innovation channels",
            expected: plant.output_dim(),
            found: e.nrows(),
        });
    }
    if e.ncols() != len {
        return Err(Error::DimensionMismatch {
            what: "innovation length",
            expected: len,
            found: e.ncols(),
        });
    }
    let mut sim = plant.clone();
    let mut y = DMatrix::zeros(plant.output_dim(), len);
    for t in 0..len {
        let yt = sim.step(&inputs.column(t).into_owned(), &e.column(t).into_owned());
        y.set_column(t, &yt);
    }
    Trajectory::new(inputs.clone(), y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalKind {
    White,
    /// Cascade of `order` identical first-order sections
    /// `y(t) = a y(t-1) + (1-a) w(t)` with `a = exp(-cutoff * sample_period)`.
    LowPass {
        cutoff_rad_s: f64,
        sample_period: f64,
        order: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub variance: f64,
    pub channels: usize,
    pub seed: u64,
}

impl SignalSpec {
    pub fn white(variance: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::White,
            variance,
            channels: 1,
            seed,
        }
    }

    pub fn low_pass(variance: f64, cutoff_rad_s: f64, sample_period: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::LowPass {
                cutoff_rad_s,
                sample_period,
                order: 1,
            },
            variance,
            channels: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) {
            return Err(invalid("signal variance must be positive"));
        }
        if self.channels == 0 {
            return Err(invalid("signal needs at least one channel"));
        }
        if let SignalKind::LowPass {
            cutoff_rad_s,
            sample_period,
            order,
        } = self.kind
        {
            if !(cutoff_rad_s > 0.0) || !(sample_period > 0.0) {
                return Err(invalid("low-pass cutoff and sample period must be positive"));
            }
            if cutoff_rad_s * sample_period >= core::f64::consts::PI {
                return Err(invalid("low-pass cutoff must lie below the Nyquist frequency"));
            }
            if order == 0 {
                return Err(invalid("low-pass order must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Zero-mean Gaussian training input, `channels x length`.
pub fn generate_input(spec: &SignalSpec, length: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if length == 0 {
        return Err(invalid("input length must be at least 1"));
    }
    let mut rng = seed::rng(spec.seed);
    match spec.kind {
        SignalKind::White => {
            let sd = libm::sqrt(spec.variance);
            Ok(DMatrix::from_fn(spec.channels, length, |_, _| {
                let n: f64 = StandardNormal.sample(&mut rng);
                sd * n
            }))
        }
        SignalKind::LowPass {
            cutoff_rad_s,
            sample_period,
            order,
        } => {
            let a = libm::exp(-cutoff_rad_s * sample_period);
            // Burn-in long enough for the filter memory to fall below 1e-12.
            let burn_in = (libm::ceil(-27.7 / libm::log(a).min(-1e-9)) as usize * order).min(1 << 20);
            let gain = libm::sqrt(spec.variance / lowpass_power(a, order));
            let mut out = DMatrix::zeros(spec.channels, length);
            let mut sections = vec![0.0; order];
            for ch in 0..spec.channels {
                sections.iter_mut().for_each(|s| *s = 0.0);
                for t in 0..burn_in + length {
                    let mut x: f64 = StandardNormal.sample(&mut rng);
                    for s in sections.iter_mut() {
                        *s = a * *s + (1.0 - a) * x;
                        x = *s;
                    }
                    if t >= burn_in {
                        out[(ch, t - burn_in)] = gain * x;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Stationary output variance of the unit-variance-driven low-pass cascade.
fn lowpass_power(a: f64, order: usize) -> f64 {
    if order == 1 {
        return (1.0 - a) / (1.0 + a);
    }
    let mut sections = vec![0.0; order];
    let mut power = 0.0;
    let mut x = 1.0;
    for t in 0..(1usize << 22) {
        for s in sections.iter_mut() {
            *s = a * *s + (1.0 - a) * x;
            x = *s;
        }
        power += x * x;
        x = 0.0;
        if t > 16 && sections.iter().all(|s| s.abs() < 1e-13) {
            break;
        }
    }
    power
}

/// Per-channel noise variance giving `snr_db` against the sample variance of
/// each output channel.
pub fn noise_variances_for_snr(outputs: &DMatrix<f64>, snr_db: f64) -> Result<Vec<f64>> {
    let ratio = libm::pow(10.0, snr_db / 10.0);
    (0..outputs.nrows())
        .map(|ch| {
            let var = sample_variance(outputs.row(ch).iter().copied());
            if !(var > 0.0) {
                Err(Error::ZeroPower { channel: ch })
            } else {
                Ok(var / ratio)
            }
        })
        .collect()
}

pub(crate) fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Adds white Gaussian noise at `snr_db` to every output channel. An infinite
/// SNR returns the trajectory unchanged.
pub fn add_output_noise(traj: &Trajectory, snr_db: f64, seed: u64) -> Result<Trajectory> {
    if snr_db == f64::INFINITY {
        return Ok(traj.clone());
    }
    let vars = noise_variances_for_snr(traj.outputs(), snr_db)?;
    Ok(add_white_noise(traj, &vars, seed))
}

/// Adds zero-mean white Gaussian noise with the given per-channel variances.
pub fn add_white_noise(traj: &Trajectory, variances: &[f64], seed: u64) -> Trajectory {
    let mut rng = seed::rng(seed);
    let mut y = traj.outputs().clone();
    for t in 0..y.ncols() {
        for (ch, var) in variances.iter().enumerate() {
            let n: f64 = StandardNormal.sample(&mut rng);
            y[(ch, t)] += libm::sqrt(*var) * n;
        }
    }
    traj.replace_outputs(y)
}
