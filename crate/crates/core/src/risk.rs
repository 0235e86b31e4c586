//! Exact excess risk and empirical test error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, SampleBatch};
use crate::spectral::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasurement {
    pub excess_exact: f64,
    pub empirical_mse: Option<f64>,
    pub test_size: Option<usize>,
}

impl RiskMeasurement {
    pub fn measure(inst: &ProblemInstance, w: &Vector, test: Option<&SampleBatch>) -> Result<Self> {
        let excess_exact = excess_risk_exact(inst, w)?;
        let empirical_mse = test.map(|t| empirical_mse(w, t)).transpose()?;
        Ok(RiskMeasurement {
            excess_exact,
            empirical_mse,
            test_size: test.map(SampleBatch::len),
        })
    }
}

/// `E(w) = ½‖w − w*‖²_H`.
pub fn excess_risk_exact(inst: &ProblemInstance, w: &Vector) -> Result<f64> {
    if w.len() != inst.dim() {
        return Err(Error::DimensionMismatch {
            expected: inst.dim(),
            got: w.len(),
        });
    }
    Ok(0.5 * inst.covariance().weighted_norm_sq(&(w - inst.target()))?)
}

/// Mean squared prediction error `(1/n) Σ (⟨w, x_i⟩ − y_i)²`.
pub fn empirical_mse(w: &Vector, test: &SampleBatch) -> Result<f64> {
    let y = test.responses().ok_or(Error::MissingResponses)?;
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if w.len() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            got: w.len(),
        });
    }
    let w = w.as_slice();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, yi)| {
            let p: f64 = test.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
            (p - yi) * (p - yi)
        })
        .sum();
    Ok(total / test.len() as f64)
}
