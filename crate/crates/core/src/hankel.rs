//! Block-Hankel data matrices with the `1/sqrt(N)` normalization.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::trajectory::Trajectory;

/// A block-Hankel matrix: block row `i`, column `j` holds
/// `signal(start + i + j) / sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub data: DMatrix<f64>,
    pub block_dim: usize,
    /// The factor `1/sqrt(N)` applied to every entry.
    pub scale: f64,
}

impl HankelMatrix {
    pub fn block_rows(&self) -> usize {
        self.data.nrows() / self.block_dim
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

/// Builds the Hankel matrix of block rows `start..=end` with `n_cols` columns
/// from `signal` (`dim x len`, one column per sample).
pub fn build_hankel(
    signal: &DMatrix<f64>,
    start: usize,
    end: usize,
    n_cols: usize,
) -> Result<HankelMatrix> {
    if end < start {
        return Err(invalid("Hankel end row precedes start row"));
    }
    if n_cols == 0 {
        return Err(invalid("Hankel matrix needs at least one column"));
    }
    let required = end + n_cols;
    if signal.ncols() < required {
        return Err(Error::InsufficientData {
            required,
            available: signal.ncols(),
        });
    }
    let dim = signal.nrows();
    let rows = end - start + 1;
    let scale = 1.0 / libm::sqrt(n_cols as f64);
    let data = DMatrix::from_fn(dim * rows, n_cols, |r, j| {
        signal[(r % dim, start + r / dim + j)] * scale
    });
    Ok(HankelMatrix {
        data,
        block_dim: dim,
        scale,
    })
}

/// The three data matrices feeding the LQ factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpcBlocks {
    /// Joint past `Z_[0, rho-1]`, rows ordered `u` then `y` within each block.
    pub z_past: HankelMatrix,
    pub u_future: HankelMatrix,
    pub y_future: HankelMatrix,
    pub input_dim: usize,
    pub output_dim: usize,
    pub rho: usize,
    pub horizon: usize,
}

impl DdpcBlocks {
    pub fn n_cols(&self) -> usize {
        self.z_past.ncols()
    }
}

/// Trajectory length for which the stacked data matrix has at least as many
/// columns as rows, so that a full-rank LQ factorization can exist.
pub fn min_data_length(m: usize, p: usize, rho: usize, horizon: usize) -> usize {
    horizon + rho + (m + p) * (rho + horizon)
}

pub fn stack_ddpc_blocks(traj: &Trajectory, rho: usize, horizon: usize) -> Result<DdpcBlocks> {
    if rho == 0 || horizon == 0 {
        return Err(invalid("past and future horizons must be positive"));
    }
    let (m, p) = (traj.input_dim(), traj.output_dim());
    let required = horizon + rho + 1;
    if traj.len() < required {
        return Err(Error::InsufficientData {
            required,
            available: traj.len(),
        });
    }
    let n_cols = traj.len() - horizon - rho;
    let z = traj.joint();
    Ok(DdpcBlocks {
        z_past: build_hankel(&z, 0, rho - 1, n_cols)?,
        u_future: build_hankel(traj.inputs(), rho, rho + horizon - 1, n_cols)?,
        y_future: build_hankel(traj.outputs(), rho, rho + horizon - 1, n_cols)?,
        input_dim: m,
        output_dim: p,
        rho,
        horizon,
    })
}
