use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bounds::{
    kappa, large_n_threshold, logspace, ridge_k_star, ridge_lower_bound, ridge_upper_bound, sgd_lower_bound, sgd_upper_bound, sgd_upper_bound_min,
    spiked_separation, BoundConstants, RiskBoundReport, Separation, SignalFactor,
};
use crate::precondition::{exact_sgd_precond, transformed_problem};
use crate::problem::ProblemInstance;
use crate::tuning::{heuristic_config, Method};

/// What to evaluate. Ridge bounds need `lambda`; SGD bounds need `eta`
/// (with `beta` defaulting to 0). With `compare` set and no `eta`, both SGD
/// settings come from the heuristic choice at `lambda`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundsRequest {
    pub n: usize,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub per_direction: bool,
    pub compare: bool,
    pub factor: SignalFactor,
    pub consts: BoundConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeBounds {
    pub lambda: f64,
    pub lower: RiskBoundReport,
    pub upper: RiskBoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdBounds {
    pub eta: f64,
    pub beta: f64,
    /// Whether `eta` and `beta` came from the heuristic rule.
    pub heuristic: bool,
    pub upper: RiskBoundReport,
    pub lower: RiskBoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ridge_lower: f64,
    pub sgd_upper: f64,
    pub slack: f64,
    /// `sgd_upper / ridge_lower`.
    pub ratio: f64,
    /// `sgd_upper ≤ slack · ridge_lower`.
    pub holds: bool,
    /// Sample size from which the heuristic settings are in their intended
    /// regime; absent for hand-picked settings or an empty ridge head.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub instance_id: String,
    pub n: usize,
    pub sigma2: f64,
    pub trace: f64,
    pub kappa: f64,
    pub constants: BoundConstants,
    pub signal_factor: SignalFactor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ridge: Option<RidgeBounds>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sgd: Option<SgdBounds>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison: Option<Comparison>,
}

impl BoundsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn bounds_report(instance_id: &str, inst: &ProblemInstance, req: &BoundsRequest) -> Result<BoundsReport, HarnessError> {
    let h = inst.covariance();
    let w = inst.target();
    let sigma2 = inst.noise_variance();
    let n = req.n;
    let trim = |r: RiskBoundReport| if req.per_direction { r } else { r.without_directions() };

    let ridge = match req.lambda {
        Some(lambda) => Some(RidgeBounds {
            lambda,
            lower: trim(ridge_lower_bound(h, w, lambda, n, sigma2, &req.consts)?),
            upper: trim(ridge_upper_bound(h, w, lambda, n, sigma2, &req.consts)?),
        }),
        None => None,
    };

    let sgd_settings = match (req.eta, req.compare) {
        (Some(eta), _) => Some((eta, req.beta.unwrap_or(0.0), false)),
        (None, true) => {
            let lambda = req
                .lambda
                .ok_or_else(|| HarnessError::Config("comparison needs --lambda".into()))?;
            if req.beta.is_some() {
                return Err(HarnessError::Config("--beta needs --eta".into()));
            }
            let p = heuristic_config(Method::Presgd, inst, n, lambda)?;
            let (eta, beta) = (p.eta.expect("heuristic sets eta"), p.beta.expect("heuristic sets beta"));
            Some((eta, beta, true))
        }
        (None, false) => None,
    };

    let sgd = match sgd_settings {
        Some((eta, beta, heuristic)) => {
            let g = exact_sgd_precond(h, beta)?;
            let (ht, wt) = transformed_problem(&g, h, w)?;
            let upper = match (req.k1, req.k2) {
                (Some(k1), Some(k2)) => sgd_upper_bound(&ht, &wt, eta, n, sigma2, k1, k2, req.factor)?,
                (None, None) => sgd_upper_bound_min(&ht, &wt, eta, n, sigma2, req.factor)?,
                _ => return Err(HarnessError::Config("--k1 and --k2 must be given together".into())),
            };
            Some(SgdBounds {
                eta,
                beta,
                heuristic,
                upper: trim(upper),
                lower: trim(sgd_lower_bound(&ht, &wt, eta, n, sigma2)?),
            })
        }
        None => None,
    };

    let comparison = if req.compare {
        match (&ridge, &sgd) {
            (Some(r), Some(s)) => Some(Comparison {
                ridge_lower: r.lower.total,
                sgd_upper: s.upper.total,
                slack: req.consts.slack,
                ratio: s.upper.total / r.lower.total,
                holds: s.upper.total <= req.consts.slack * r.lower.total,
                n_threshold: if s.heuristic { heuristic_threshold(inst, r.lambda, n, s.beta)? } else { None },
            }),
            _ => return Err(HarnessError::Config("comparison needs --lambda".into())),
        }
    } else {
        None
    };

    Ok(BoundsReport {
        instance_id: instance_id.to_string(),
        n,
        sigma2,
        trace: h.trace(),
        kappa: kappa(h, n)?,
        constants: req.consts,
        signal_factor: req.factor,
        ridge,
        sgd,
        comparison,
    })
}

fn heuristic_threshold(inst: &ProblemInstance, lambda: f64, n: usize, beta: f64) -> Result<Option<f64>, HarnessError> {
    let h = inst.covariance();
    let (k, lambda_hat) = ridge_k_star(h.eigenvalues(), lambda, n, 2.0)?;
    if k == 0 {
        return Ok(None);
    }
    let (ht, _) = transformed_problem(&exact_sgd_precond(h, beta)?, h, inst.target())?;
    Ok(Some(large_n_threshold(ht.trace(), lambda_hat, h.eigenvalues()[k - 1])?))
}

/// Default `λ` grid for the separation scan.
pub fn separation_lambda_grid() -> Vec<f64> {
    logspace(1e-8, 1e2, 201)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub rows: Vec<Separation>,
    /// Ratios increase strictly with `N`.
    pub monotone: bool,
}

impl SeparationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Ridge lower bound over SGD upper bound on the spiked instance at each `N`.
pub fn separation_report(ns: &[usize], consts: &BoundConstants) -> Result<SeparationReport, HarnessError> {
    let grid = separation_lambda_grid();
    let rows = ns
        .iter()
        .map(|&n| spiked_separation(n, &grid, consts))
        .collect::<Result<Vec<_>, _>>()?;
    let monotone = rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
    Ok(SeparationReport { rows, monotone })
}
