//! Time-indexed input/output records.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Input/output record with one column per sample.
///
/// `inputs` is `m x len`, `outputs` is `p x len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    sample_period: Option<f64>,
}

impl Trajectory {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::DimensionMismatch {
                what: "trajectory length (inputs vs outputs)",
                expected: inputs.ncols(),
                found: outputs.ncols(),
            });
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(invalid("trajectory needs at least one input and one output channel"));
        }
        if inputs.ncols() == 0 {
            return Err(invalid("trajectory must contain at least one sample"));
        }
        if !inputs.iter().chain(outputs.iter()).all(|v| v.is_finite()) {
            return Err(invalid("trajectory contains non-finite entries"));
        }
        Ok(Self {
            inputs,
            outputs,
            sample_period: None,
        })
    }

    /// Builds a trajectory from per-sample vectors.
    pub fn from_samples(inputs: &[DVector<f64>], outputs: &[DVector<f64>]) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch {
                what: "trajectory length (inputs vs outputs)",
                expected: inputs.len(),
                found: outputs.len(),
            });
        }
        if inputs.is_empty() {
            return Err(invalid("trajectory must contain at least one sample"));
        }
        Self::new(
            DMatrix::from_columns(inputs),
            DMatrix::from_columns(outputs),
        )
    }

    pub fn with_sample_period(mut self, period: f64) -> Self {
        self.sample_period = Some(period);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn sample_period(&self) -> Option<f64> {
        self.sample_period
    }

    /// Joint signal `z(t) = [u(t); y(t)]`, one column per sample.
    pub fn joint(&self) -> DMatrix<f64> {
        let (m, p, n) = (self.input_dim(), self.output_dim(), self.len());
        let mut z = DMatrix::zeros(m + p, n);
        z.rows_mut(0, m).copy_from(&self.inputs);
        z.rows_mut(m, p).copy_from(&self.outputs);
        z
    }

    pub(crate) fn replace_outputs(&self, outputs: DMatrix<f64>) -> Self {
        Self {
            inputs: self.inputs.clone(),
            outputs,
            sample_period: self.sample_period,
        }
    }

    /// Last `count` samples as a new trajectory.
    pub fn tail(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::InsufficientData {
                required: count.max(1),
                available: self.len(),
            });
        }
        let start = self.len() - count;
        Ok(Self {
            inputs: self.inputs.columns(start, count).into_owned(),
            outputs: self.outputs.columns(start, count).into_owned(),
            sample_period: self.sample_period,
        })
    }
}
