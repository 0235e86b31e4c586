//! Closed-form (preconditioned) ridge regression,
//! `argmin ‖Xw − y‖² + λ‖w‖²_M`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::precondition::{identity_precond, Preconditioner};
use crate::problem::SampleBatch;
use crate::spectral::Vector;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub precond: Preconditioner,
}

impl RidgeConfig {
    pub fn new(lambda: f64, precond: Preconditioner) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("{lambda} is not a non-negative real")));
        }
        if lambda > 0.0 {
            if let Some(index) = precond.operator().eigenvalues().iter().position(|&g| g <= 0.0) {
                return Err(Error::Singular { index });
            }
        }
        Ok(RidgeConfig { lambda, precond })
    }

    /// Standard ridge, `M = I`.
    pub fn standard(lambda: f64, d: usize) -> Result<Self> {
        Self::new(lambda, identity_precond(d))
    }
}

/// Pseudo-inverse solve of the symmetric system `A w = r`.
fn sym_pinv_solve(a: DMatrix<f64>, r: &Vector) -> Vector {
    let eig = SymmetricEigen::new(a);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = PINV_RTOL * top;
    let mut c = eig.eigenvectors.transpose() * r;
    for (ci, &s) in c.iter_mut().zip(eig.eigenvalues.iter()) {
        *ci = if s > cut { *ci / s } else { 0.0 };
    }
    &eig.eigenvectors * c
}

fn normal_equations(batch: &SampleBatch) -> Result<(DMatrix<f64>, Vector)> {
    let y = batch.response_vector().ok_or(Error::MissingResponses)?;
    let x = batch.design_matrix();
    let xt = x.transpose();
    Ok((&xt * &x, xt * y))
}

fn check_dims(batch: &SampleBatch, cfg: &RidgeConfig) -> Result<()> {
    if batch.dim() != cfg.precond.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            got: cfg.precond.dim(),
        });
    }
    Ok(())
}

/// Solves `(XᵀX + λM) w = Xᵀy` through an eigendecomposition of the system
/// matrix. With `λ = 0` this is the minimum-norm least-squares solution.
pub fn solve_ridge(batch: &SampleBatch, cfg: &RidgeConfig) -> Result<Vector> {
    check_dims(batch, cfg)?;
    let (mut a, r) = normal_equations(batch)?;
    if cfg.lambda > 0.0 {
        if cfg.precond.is_identity() {
            for i in 0..a.nrows() {
                a[(i, i)] += cfg.lambda;
            }
        } else {
            a += cfg.precond.operator().to_dense() * cfg.lambda;
        }
    }
    Ok(sym_pinv_solve(a, &r))
}

/// Solves the same problem by substituting `ŵ = M^{1/2}w`, `X̂ = XM^{-1/2}`,
/// solving standard ridge in `ŵ` and mapping back.
pub fn solve_ridge_via_transform(batch: &SampleBatch, cfg: &RidgeConfig) -> Result<Vector> {
    check_dims(batch, cfg)?;
    if cfg.precond.is_identity() {
        return solve_ridge(batch, cfg);
    }
    let m_inv_half = cfg.precond.operator().power(-0.5)?;
    let d = batch.dim();
    let transformed = batch.map_rows(d, |row, out| {
        let v = m_inv_half.apply(&Vector::from_row_slice(row)).expect("dimension checked");
        out.copy_from_slice(v.as_slice());
    });
    let w_hat = solve_ridge(&transformed, &RidgeConfig::standard(cfg.lambda, d)?)?;
    m_inv_half.apply(&w_hat)
}

/// Ridge solutions for many `λ` on one batch, sharing a single
/// eigendecomposition of `X̂ᵀX̂` with `X̂ = XM^{-1/2}`.
pub struct RidgePath {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
    /// `Vᵀ X̂ᵀ y`
    projected: Vec<f64>,
    back: Option<crate::spectral::SpectralOperator>,
}

impl RidgePath {
    pub fn new(batch: &SampleBatch, precond: &Preconditioner) -> Result<Self> {
        if batch.dim() != precond.dim() {
            return Err(Error::DimensionMismatch {
                expected: batch.dim(),
                got: precond.dim(),
            });
        }
        let (a, r, back) = if precond.is_identity() {
            let (a, r) = normal_equations(batch)?;
            (a, r, None)
        } else {
            let m_inv_half = precond.operator().power(-0.5)?;
            let s = m_inv_half.to_dense();
            let (a, r) = normal_equations(batch)?;
            let a = &s * a * &s;
            let a = (&a + a.transpose()) * 0.5;
            (a, &s * r, Some(m_inv_half))
        };
        let eig = SymmetricEigen::new(a);
        let projected = (eig.eigenvectors.transpose() * r).as_slice().to_vec();
        Ok(RidgePath {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues.as_slice().to_vec(),
            projected,
            back,
        })
    }

    pub fn solve(&self, lambda: f64) -> Result<Vector> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("{lambda} is not a non-negative real")));
        }
        let top = self.values.iter().cloned().fold(0.0, f64::max) + lambda;
        let cut = PINV_RTOL * top;
        let c: Vec<f64> = self
            .values
            .iter()
            .zip(&self.projected)
            .map(|(&s, &p)| if s + lambda > cut { p / (s + lambda) } else { 0.0 })
            .collect();
        let w_hat = &self.vectors * Vector::from_vec(c);
        match &self.back {
            None => Ok(w_hat),
            Some(m) => m.apply(&w_hat),
        }
    }
}
