//! LQ factorization of the stacked `[Z_P; U_F; Y_F]` data matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hankel::DdpcBlocks;

pub const DEFAULT_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqOptions {
    /// A diagonal of `L11`, `L22` or `L33` below `rank_tol` times the largest
    /// diagonal of `L` is reported as rank deficiency. A negative value
    /// disables the check.
    pub rank_tol: f64,
    /// Noise-free data leaves `Y_F` inside the row space of `[Z_P; U_F]`, so
    /// `L33` vanishes. Such factors are still usable with the slack deleted.
    pub require_full_l33: bool,
}

impl Default for LqOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            require_full_l33: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LqDims {
    pub input_dim: usize,
    pub output_dim: usize,
    pub rho: usize,
    pub horizon: usize,
    pub n_cols: usize,
}

impl LqDims {
    pub fn past_rows(&self) -> usize {
        (self.input_dim + self.output_dim) * self.rho
    }

    pub fn future_input_rows(&self) -> usize {
        self.input_dim * self.horizon
    }

    pub fn future_output_rows(&self) -> usize {
        self.output_dim * self.horizon
    }

    pub fn total_rows(&self) -> usize {
        self.past_rows() + self.future_input_rows() + self.future_output_rows()
    }
}

/// Block-lower-triangular `L` and orthonormal-row `Q` with
/// `[Z_P; U_F; Y_F] = L [Q1; Q2; Q3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqFactors {
    pub l11: DMatrix<f64>,
    pub l21: DMatrix<f64>,
    pub l22: DMatrix<f64>,
    pub l31: DMatrix<f64>,
    pub l32: DMatrix<f64>,
    pub l33: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q3: DMatrix<f64>,
    pub dims: LqDims,
}

impl LqFactors {
    /// Full `L`, reassembled from its blocks.
    pub fn l(&self) -> DMatrix<f64> {
        let d = &self.dims;
        let (a, b, c) = (d.past_rows(), d.future_input_rows(), d.future_output_rows());
        let mut l = DMatrix::zeros(a + b + c, a + b + c);
        l.view_mut((0, 0), (a, a)).copy_from(&self.l11);
        l.view_mut((a, 0), (b, a)).copy_from(&self.l21);
        l.view_mut((a, a), (b, b)).copy_from(&self.l22);
        l.view_mut((a + b, 0), (c, a)).copy_from(&self.l31);
        l.view_mut((a + b, a), (c, b)).copy_from(&self.l32);
        l.view_mut((a + b, a + b), (c, c)).copy_from(&self.l33);
        l
    }

    /// Stacked `[Q1; Q2; Q3]`.
    pub fn q(&self) -> DMatrix<f64> {
        let n = self.dims.n_cols;
        let rows = self.dims.total_rows();
        let mut q = DMatrix::zeros(rows, n);
        let (a, b) = (self.q1.nrows(), self.q2.nrows());
        q.rows_mut(0, a).copy_from(&self.q1);
        q.rows_mut(a, b).copy_from(&self.q2);
        q.rows_mut(a + b, self.q3.nrows()).copy_from(&self.q3);
        q
    }
}

pub fn lq_factorize(blocks: &DdpcBlocks) -> Result<LqFactors> {
    lq_factorize_with(blocks, LqOptions::default())
}

pub fn lq_factorize_with(blocks: &DdpcBlocks, opts: LqOptions) -> Result<LqFactors> {
    let dims = LqDims {
        input_dim: blocks.input_dim,
        output_dim: blocks.output_dim,
        rho: blocks.rho,
        horizon: blocks.horizon,
        n_cols: blocks.n_cols(),
    };
    let (a, b, c) = (
        dims.past_rows(),
        dims.future_input_rows(),
        dims.future_output_rows(),
    );
    let rows = a + b + c;
    let n = dims.n_cols;
    if n < rows {
        return Err(Error::InsufficientData {
            required: rows,
            available: n,
        });
    }

    // LQ of S is the transpose of the thin QR of S^T.
    let mut st = DMatrix::zeros(n, rows);
    st.columns_mut(0, a).tr_copy_from(&blocks.z_past.data);
    st.columns_mut(a, b).tr_copy_from(&blocks.u_future.data);
    st.columns_mut(a + b, c).tr_copy_from(&blocks.y_future.data);

    let qr = st.qr();
    let mut r = qr.r();
    let mut qt = qr.q();
    for i in 0..rows {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            qt.column_mut(i).neg_mut();
        }
    }
    let l = r.transpose();

    let largest = (0..rows).map(|i| l[(i, i)]).fold(0.0, f64::max);
    let check = |block: &'static str, offset: usize, len: usize| -> Result<()> {
        for i in 0..len {
            let d = l[(offset + i, offset + i)];
            if !(d > opts.rank_tol * largest) {
                return Err(Error::RankDeficient {
                    block,
                    index: i,
                    ratio: if largest > 0.0 { d / largest } else { 0.0 },
                });
            }
        }
        Ok(())
    };
    check("L11", 0, a)?;
    check("L22", a, b)?;
    if opts.require_full_l33 {
        check("L33", a + b, c)?;
    }

    let block = |r0: usize, c0: usize, nr: usize, nc: usize| l.view((r0, c0), (nr, nc)).into_owned();
    let qrows = |r0: usize, nr: usize| -> DMatrix<f64> { qt.columns(r0, nr).transpose() };
    Ok(LqFactors {
        l11: block(0, 0, a, a),
        l21: block(a, 0, b, a),
        l22: block(a, a, b, b),
        l31: block(a + b, 0, c, a),
        l32: block(a + b, a, c, b),
        l33: block(a + b, a + b, c, c),
        q1: qrows(0, a),
        q2: qrows(a, b),
        q3: qrows(a + b, c),
        dims,
    })
}

/// `(||L21||_F, ||L22 L22^T - sigma2 I||_F)`. Both vanish as `N` grows when
/// the training input is white with variance `sigma2`.
pub fn asymptotic_whiteness_stats(factors: &LqFactors, sigma2: f64) -> (f64, f64) {
    let norm_l21 = factors.l21.norm();
    let mut cov = &factors.l22 * factors.l22.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] -= sigma2;
    }
    (norm_l21, cov.norm())
}
