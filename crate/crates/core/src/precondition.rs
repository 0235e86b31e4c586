//! Preconditioner constructions for SGD (`G`) and ridge (`M`).
//!
//! The SGD family is `G = (βH + I)⁻¹` and its variants: matched to a ridge
//! preconditioner `M`, or built from an empirical covariance of unlabeled
//! data. The ridge family keeps the eigenbasis of `H` and reweights it.
//! Every construction with `β = 0` or `M = I` returns the identity exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::ridge_k_star;
use crate::error::{Error, Result};
use crate::problem::SampleBatch;
use crate::spectral::{sandwich, sym_eigendecompose, SpectralOperator, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    Identity,
    ExactBeta,
    RidgeMatchedBeta,
    EstimatedBeta,
    RidgeFamily,
    ConstructedM,
    /// Any strictly positive definite operator supplied by the caller.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    operator: SpectralOperator,
    kind: PreconditionerKind,
    params: BTreeMap<String, f64>,
}

/// Persistable description of a preconditioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionerDescriptor {
    pub kind: PreconditionerKind,
    pub params: BTreeMap<String, f64>,
    pub spectrum_digest: String,
}

impl Preconditioner {
    fn new(operator: SpectralOperator, kind: PreconditionerKind, params: &[(&str, f64)]) -> Self {
        let operator = if operator.is_identity() {
            SpectralOperator::identity(operator.dim())
        } else {
            operator
        };
        Preconditioner {
            operator,
            kind,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.operator
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn is_identity(&self) -> bool {
        self.operator.is_identity()
    }

    pub fn descriptor(&self) -> PreconditionerDescriptor {
        PreconditionerDescriptor {
            kind: self.kind,
            params: self.params.clone(),
            spectrum_digest: spectrum_digest(self.operator.eigenvalues()),
        }
    }
}

/// First 16 hex digits of the SHA-256 of the eigenvalue bit patterns.
pub fn spectrum_digest(eigenvalues: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in eigenvalues {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta", format!("{beta} is not a non-negative real")));
    }
    Ok(())
}

fn check_same_dim(a: &SpectralOperator, b: &SpectralOperator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn first_zero(op: &SpectralOperator) -> Option<usize> {
    op.eigenvalues().iter().position(|&l| l <= 0.0)
}

pub fn identity_precond(d: usize) -> Preconditioner {
    Preconditioner::new(SpectralOperator::identity(d), PreconditionerKind::Identity, &[])
}

/// Wraps a caller-supplied strictly positive definite operator.
pub fn custom_precond(operator: SpectralOperator) -> Result<Preconditioner> {
    if let Some(index) = first_zero(&operator) {
        return Err(Error::Singular { index });
    }
    Ok(Preconditioner::new(operator, PreconditionerKind::Custom, &[]))
}

/// `G = (βH + I)⁻¹`.
pub fn exact_sgd_precond(h: &SpectralOperator, beta: f64) -> Result<Preconditioner> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(identity_precond(h.dim()));
    }
    let g = h.map_eigenvalues(|l| 1.0 / (beta * l + 1.0))?;
    Ok(Preconditioner::new(g, PreconditionerKind::ExactBeta, &[("beta", beta)]))
}

/// Ridge preconditioner `M` sharing the eigenbasis of `H`, with weight
/// `gammas[i]` on the `i`-th eigenvector. The transformed spectrum
/// `λ_i / γ_i` must stay non-increasing.
pub fn ridge_family_precond(h: &SpectralOperator, gammas: &[f64]) -> Result<Preconditioner> {
    if gammas.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: gammas.len(),
        });
    }
    if let Some(i) = gammas.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::invalid("gamma", format!("weight at index {i} is not strictly positive")));
    }
    let ratios: Vec<f64> = h.eigenvalues().iter().zip(gammas).map(|(l, g)| l / g).collect();
    for i in 1..ratios.len() {
        if ratios[i] > ratios[i - 1] {
            return Err(Error::OrderViolation {
                index: i,
                previous: ratios[i - 1],
                current: ratios[i],
            });
        }
    }
    if gammas.iter().all(|&g| g == 1.0) {
        return Ok(identity_precond(h.dim()));
    }
    let m = h.with_values(gammas)?;
    Ok(Preconditioner::new(m, PreconditionerKind::RidgeFamily, &[]))
}

/// `M^{-1/2} (βĤ + I)⁻¹ M^{-1/2}` with `Ĥ = M^{-1/2} C M^{-1/2}`.
fn matched_precond(c: &SpectralOperator, m: &Preconditioner, beta: f64) -> Result<SpectralOperator> {
    let m_op = m.operator();
    if let Some(index) = first_zero(m_op) {
        return Err(Error::Singular { index });
    }
    if let Some(mv) = m_op.values_along(c) {
        // Shared eigenbasis: componentwise 1 / (γ_i (β λ_i/γ_i + 1)).
        let values: Vec<f64> = c
            .eigenvalues()
            .iter()
            .zip(&mv)
            .map(|(l, g)| 1.0 / (g * (beta * (l / g) + 1.0)))
            .collect();
        return c.with_values(&values);
    }
    let m_inv_half = m_op.power(-0.5)?;
    let h_hat = sandwich(&m_inv_half, c)?;
    let inner = h_hat.map_eigenvalues(|l| 1.0 / (beta * l + 1.0))?;
    sandwich(&m_inv_half, &inner)
}

/// SGD preconditioner matched to a ridge preconditioner `M`.
pub fn sgd_precond_for_ridge_m(h: &SpectralOperator, m: &Preconditioner, beta: f64) -> Result<Preconditioner> {
    check_beta(beta)?;
    check_same_dim(h, m.operator())?;
    if m.is_identity() {
        let mut g = exact_sgd_precond(h, beta)?;
        if !g.is_identity() {
            g.kind = PreconditionerKind::RidgeMatchedBeta;
        }
        return Ok(g);
    }
    if let Some(index) = first_zero(m.operator()) {
        return Err(Error::Singular { index });
    }
    if beta == 0.0 {
        let inv = m.operator().power(-1.0)?;
        return Ok(Preconditioner::new(inv, PreconditionerKind::RidgeMatchedBeta, &[("beta", 0.0)]));
    }
    let g = matched_precond(h, m, beta)?;
    Ok(Preconditioner::new(g, PreconditionerKind::RidgeMatchedBeta, &[("beta", beta)]))
}

/// Empirical covariance `X̃ᵀX̃ / m` of unlabeled rows.
pub fn estimate_covariance(unlabeled: &SampleBatch) -> Result<SpectralOperator> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let x = unlabeled.design_matrix();
    let sigma = x.transpose() * &x / unlabeled.len() as f64;
    sym_eigendecompose(&sigma)
}

/// `G̃ = (βΣ + I)⁻¹` from an estimated covariance.
pub fn estimated_sgd_precond(sigma: &SpectralOperator, beta: f64) -> Result<Preconditioner> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(identity_precond(sigma.dim()));
    }
    let g = sigma.map_eigenvalues(|l| 1.0 / (beta * l + 1.0))?;
    Ok(Preconditioner::new(g, PreconditionerKind::EstimatedBeta, &[("beta", beta)]))
}

/// Estimated counterpart of [`sgd_precond_for_ridge_m`].
pub fn estimated_sgd_precond_for_m(
    sigma: &SpectralOperator,
    m: &Preconditioner,
    beta: f64,
) -> Result<Preconditioner> {
    check_beta(beta)?;
    check_same_dim(sigma, m.operator())?;
    if m.is_identity() {
        return estimated_sgd_precond(sigma, beta);
    }
    if let Some(index) = first_zero(m.operator()) {
        return Err(Error::Singular { index });
    }
    if beta == 0.0 {
        let inv = m.operator().power(-1.0)?;
        return Ok(Preconditioner::new(inv, PreconditionerKind::EstimatedBeta, &[("beta", 0.0)]));
    }
    let g = matched_precond(sigma, m, beta)?;
    Ok(Preconditioner::new(g, PreconditionerKind::EstimatedBeta, &[("beta", beta)]))
}

/// Covariance and target seen by SGD after preconditioning:
/// `H̃ = G^{1/2} H G^{1/2}`, `w̃* = G^{-1/2} w*`.
pub fn transformed_problem(
    g: &Preconditioner,
    h: &SpectralOperator,
    target: &Vector,
) -> Result<(SpectralOperator, Vector)> {
    check_same_dim(h, g.operator())?;
    if g.is_identity() {
        return Ok((h.clone(), target.clone()));
    }
    if let Some(index) = first_zero(g.operator()) {
        return Err(Error::Singular { index });
    }
    let h_tilde = sandwich(&g.operator().power(0.5)?, h)?;
    let w_tilde = g.operator().power(-0.5)?.apply(target)?;
    Ok((h_tilde, w_tilde))
}

/// Covariance and target of the equivalent standard ridge problem:
/// features `M^{-1/2}x`, parameter `M^{1/2}w*`.
///
/// The covariance is computed as `M^{-1/2} H M^{-1/2}`. It coincides with
/// `H^{1/2} M⁻¹ H^{1/2}` when `M` and `H` share an eigenbasis and has the
/// same spectrum in general.
pub fn ridge_transformed_problem(
    m: &Preconditioner,
    h: &SpectralOperator,
    target: &Vector,
) -> Result<(SpectralOperator, Vector)> {
    check_same_dim(h, m.operator())?;
    if m.is_identity() {
        return Ok((h.clone(), target.clone()));
    }
    if let Some(index) = first_zero(m.operator()) {
        return Err(Error::Singular { index });
    }
    let h_hat = sandwich(&m.operator().power(-0.5)?, h)?;
    let w_hat = m.operator().power(0.5)?.apply(target)?;
    Ok((h_hat, w_hat))
}

/// A ridge preconditioner and regularization built to match a given
/// preconditioned SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMatch {
    pub precond: Preconditioner,
    /// Regularization `λ* = b/η − Σ_{i>k*} λ̂_i`.
    pub lambda: f64,
    /// `λ̂* = λ* + Σ_{i>k*} λ̂_i`.
    pub lambda_hat: f64,
    /// SGD head size `max{k : λ̃_k ≥ 1/(Nη)}`.
    pub k_star: usize,
    /// Ridge head size at `(Ĥ, λ*)`; equals `k_star` when the alignment holds.
    pub k_ridge: usize,
    /// Weights `m_i` along the eigenvectors of `H`.
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Set when a head weight underflowed and was replaced by the smallest
    /// positive normal number.
    pub reduced_fidelity: bool,
}

const MATCH_MAX_ITER: usize = 100;
const MATCH_TOL: f64 = 1e-10;
const EXP_FLOOR: f64 = 700.0;

/// Builds `(M*, λ*)` such that preconditioned ridge matches SGD run with
/// preconditioner `G` and step size `η` on `N` samples.
///
/// Tail weights sit at `m_i = λ̂*/(g_i η)` and head weights at
/// `m_i = exp(−Nηλ_i g_i) λ̂*/g_i`. The coupling between `λ*` and the tail
/// spectrum `λ_i/m_i` is resolved by fixed-point iteration.
pub fn construct_ridge_matching_sgd(
    g: &Preconditioner,
    eta: f64,
    h: &SpectralOperator,
    n: usize,
    b: f64,
) -> Result<RidgeMatch> {
    check_same_dim(h, g.operator())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", "must be a positive real"));
    }
    if !(b > 1.0) {
        return Err(Error::invalid("b", "must exceed 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let lambdas = h.eigenvalues();
    if eta >= lambdas[0] {
        return Err(Error::invalid(
            "eta",
            format!("{eta} must be below the top eigenvalue {}", lambdas[0]),
        ));
    }
    let gs = g.operator().values_along(h).ok_or(Error::BasisMismatch { index: 0 })?;
    let tilde: Vec<f64> = lambdas.iter().zip(&gs).map(|(l, g)| l * g).collect();
    for i in 1..tilde.len() {
        if tilde[i] > tilde[i - 1] {
            return Err(Error::OrderViolation {
                index: i,
                previous: tilde[i - 1],
                current: tilde[i],
            });
        }
    }
    let nf = n as f64;
    let k_star = tilde.iter().take_while(|&&t| t >= 1.0 / (nf * eta)).count();

    let tail_sum = |m: &[f64]| -> f64 { (k_star..lambdas.len()).map(|i| lambdas[i] / m[i]).sum() };

    let mut m = vec![1.0; lambdas.len()];
    let mut lambda = b / eta - tail_sum(&m);
    let mut reduced_fidelity;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let lambda_hat = lambda + tail_sum(&m);
        let mut next = m.clone();
        reduced_fidelity = false;
        for i in 0..lambdas.len() {
            next[i] = if i < k_star {
                let exponent = nf * eta * tilde[i];
                if exponent > EXP_FLOOR {
                    reduced_fidelity = true;
                    f64::MIN_POSITIVE
                } else {
                    (-exponent).exp() * lambda_hat / gs[i]
                }
            } else {
                lambda_hat / (gs[i] * eta)
            };
        }
        let change = m
            .iter()
            .zip(&next)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        m = next;
        let next_lambda = b / eta - tail_sum(&m);
        let lambda_change = ((next_lambda - lambda) / next_lambda).abs();
        lambda = next_lambda;
        if (change <= MATCH_TOL && lambda_change <= MATCH_TOL) || iterations >= MATCH_MAX_ITER {
            break;
        }
    }
    if !(lambda > 0.0) {
        return Err(Error::Infeasible(format!("regularization λ* = {lambda} is not positive")));
    }
    if reduced_fidelity {
        log::warn!("head weight underflow in ridge matching; weights clamped to the smallest normal");
    }
    let lambda_hat = lambda + tail_sum(&m);
    let m_op = h.with_values(&m)?;
    let precond = Preconditioner::new(
        m_op,
        PreconditionerKind::ConstructedM,
        &[("eta", eta), ("lambda", lambda), ("b", b)],
    );
    let h_hat_values: Vec<f64> = lambdas.iter().zip(&m).map(|(l, m)| l / m).collect();
    let mut sorted = h_hat_values;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (k_ridge, _) = ridge_k_star(&sorted, lambda, n, b)?;
    Ok(RidgeMatch {
        precond,
        lambda,
        lambda_hat,
        k_star,
        k_ridge,
        weights: m,
        iterations,
        reduced_fidelity,
    })
}
