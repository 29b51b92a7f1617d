//! Past-horizon selection by Akaike's information criterion.
//!
//! Each candidate `rho` is scored with a least-squares VARX fit
//! `y(t) = sum_{i=1..rho} Phi_i z(t-i) + D u(t) + e(t)` over a common sample
//! range, so that every candidate sees the same residual count:
//!
//! ```text
//! AIC(rho) = N_eff * ln det(Sigma_rho) + 2 * p * ((m + p) * rho + m)
//! ```

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::trajectory::Trajectory;

/// AIC score of every candidate `1..=rho_max`, index `i` holding `rho = i + 1`.
pub fn aic_scores(traj: &Trajectory, rho_max: usize) -> Result<alloc::vec::Vec<f64>> {
    if rho_max == 0 {
        return Err(invalid("rho_max must be at least 1"));
    }
    let (m, p) = (traj.input_dim(), traj.output_dim());
    let params_max = (m + p) * rho_max + m;
    let required = rho_max + params_max + 1;
    if traj.len() < required {
        return Err(Error::InsufficientData {
            required,
            available: traj.len(),
        });
    }
    let n_eff = traj.len() - rho_max;
    let z = traj.joint();

    let mut targets = DMatrix::zeros(n_eff, p);
    for (row, t) in (rho_max..traj.len()).enumerate() {
        for c in 0..p {
            targets[(row, c)] = traj.outputs()[(c, t)];
        }
    }

    let scores = (1..=rho_max)
        .map(|rho| {
            let k = (m + p) * rho + m;
            let mut reg = DMatrix::zeros(n_eff, k);
            for (row, t) in (rho_max..traj.len()).enumerate() {
                for lag in 1..=rho {
                    let off = (lag - 1) * (m + p);
                    for c in 0..m + p {
                        reg[(row, off + c)] = z[(c, t - lag)];
                    }
                }
                for c in 0..m {
                    reg[(row, (m + p) * rho + c)] = traj.inputs()[(c, t)];
                }
            }
            let q = reg.qr().q();
            let fitted = &q * (q.transpose() * &targets);
            let resid = &targets - fitted;
            let sigma = resid.transpose() * &resid / n_eff as f64;
            let log_det = match sigma.cholesky() {
                Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>(),
                None => f64::NEG_INFINITY,
            };
            n_eff as f64 * log_det + 2.0 * (p * k) as f64
        })
        .collect();
    Ok(scores)
}

/// The `rho` in `1..=rho_max` minimizing [`aic_scores`]; ties go to the
/// smaller horizon.
pub fn select_past_horizon(traj: &Trajectory, rho_max: usize) -> Result<usize> {
    let scores = aic_scores(traj, rho_max)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best + 1)
}
