//! Grid-search tuning, proof-driven heuristic settings and learning curves.
//!
//! Every grid point is scored by the mean of a test metric over independent
//! trials. Trial `t` at sample size `N` draws its training set (and, for the
//! estimated preconditioner, its unlabeled set) from a stream keyed by
//! `(seed, N, t)`, so all methods and all grid points see the same training
//! data. One test set is shared by every method and sample size.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{heuristic_beta_estimated, heuristic_beta_exact, heuristic_eta, logspace, ridge_k_star};
use crate::error::{Error, Result};
use crate::precondition::{
    estimate_covariance, exact_sgd_precond, identity_precond, ridge_family_precond, transformed_problem,
    Preconditioner,
};
use crate::problem::{sample_batch, sample_unlabeled, ProblemInstance, SampleBatch};
use crate::ridge::RidgePath;
use crate::risk::{empirical_mse, excess_risk_exact};
use crate::sgd::{run_sgd_diagonal, BatchStream, SgdConfig};
use crate::spectral::{trace_of_product, Basis, SpectralOperator, Vector};
use crate::streams::{Purpose, StreamKey};

/// Threshold constant used by the heuristic head size.
const HEURISTIC_B: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Presgd,
    PresgdEst,
    Ridge,
    Preridge,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sgd,
        Method::Presgd,
        Method::PresgdEst,
        Method::Ridge,
        Method::Preridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Presgd => "presgd",
            Method::PresgdEst => "presgd_est",
            Method::Ridge => "ridge",
            Method::Preridge => "preridge",
        }
    }

    pub fn uses_eta(self) -> bool {
        matches!(self, Method::Sgd | Method::Presgd | Method::PresgdEst)
    }

    pub fn uses_beta(self) -> bool {
        matches!(self, Method::Presgd | Method::PresgdEst)
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, Method::Ridge | Method::Preridge)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    MeanMse,
    MeanExcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub eta: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub trials: usize,
    pub test_size: usize,
    pub metric: Metric,
    /// Exponent `p` of the ridge-family weights `γ_i = λ_i^p` used by
    /// preconditioned ridge.
    pub preridge_gamma_power: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        let mut beta = vec![0.0];
        beta.extend(logspace(1e-2, 1e4, 13));
        GridSpec {
            eta: logspace(1e-4, 1e1, 14),
            beta,
            lambda: logspace(1e-4, 1e1, 14),
            trials: 10,
            test_size: 1000,
            metric: Metric::MeanMse,
            preridge_gamma_power: 0.5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, method: Method) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.test_size == 0 {
            return Err(Error::invalid("test_size", "must be at least 1"));
        }
        let check = |name: &'static str, used: bool, grid: &[f64], allow_zero: bool| -> Result<()> {
            if !used {
                return Ok(());
            }
            if grid.is_empty() {
                return Err(Error::invalid(name, "grid is empty"));
            }
            if let Some(v) = grid
                .iter()
                .find(|&&v| !(v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0))))
            {
                return Err(Error::invalid(name, format!("grid value {v} is out of range")));
            }
            Ok(())
        };
        check("eta", method.uses_eta(), &self.eta, false)?;
        check("beta", method.uses_beta(), &self.beta, true)?;
        check("lambda", method.uses_lambda(), &self.lambda, true)?;
        if !(0.0..=1.0).contains(&self.preridge_gamma_power) {
            return Err(Error::invalid("preridge_gamma_power", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Hyperparameters of one configuration; unused entries are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
}

impl Params {
    fn sort_key(&self) -> [f64; 3] {
        [
            self.eta.unwrap_or(0.0),
            self.beta.unwrap_or(0.0),
            self.lambda.unwrap_or(0.0),
        ]
    }
}

/// Status of a grid point or trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Ok,
    /// Step size above the stability cap; not run.
    Skipped,
    /// At least one trial diverged.
    Diverged,
    /// Construction error; see the row's reason.
    Failed,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Ok => "ok",
            Flag::Skipped => "skipped",
            Flag::Diverged => "diverged",
            Flag::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub mse: f64,
    pub excess: f64,
    pub diverged: bool,
    /// Wall-clock time of the fit and evaluation in milliseconds.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: Params,
    /// Mean of the selection metric over trials; NaN unless the flag is ok.
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub flag: Flag,
    pub reason: Option<String>,
    pub outcomes: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedResult {
    pub method: Method,
    pub n: usize,
    pub best: Params,
    pub best_value: f64,
    pub table: Vec<GridRow>,
}

impl TunedResult {
    pub fn best_row(&self) -> &GridRow {
        self.table
            .iter()
            .find(|r| r.params == self.best && r.flag == Flag::Ok)
            .expect("best parameters come from the table")
    }
}

/// Data of one trial, prepared once and shared by all grid points.
struct TrialData {
    batch: SampleBatch,
    /// Training rows in the eigenbasis of `H` when that basis is dense.
    h_rotated: Option<SampleBatch>,
    estimate: Option<EstimateData>,
    ridge_path: Option<RidgePath>,
}

struct EstimateData {
    sigma: SpectralOperator,
    /// Training rows in the eigenbasis of the estimated covariance.
    rotated: SampleBatch,
    /// `v_iᵀ H v_i` along the estimated eigenvectors.
    h_along: Vec<f64>,
}

fn rotate(batch: &SampleBatch, v: &DMatrix<f64>) -> Result<SampleBatch> {
    let x = batch.design_matrix() * v;
    SampleBatch::from_matrix(&x, batch.response_vector().as_ref())
}

/// Test set shared by every method and sample size.
pub fn shared_test_set(inst: &ProblemInstance, seed: u64, size: usize) -> SampleBatch {
    sample_batch(inst, size, &mut StreamKey::new(seed, 0, 0, Purpose::Test).rng())
}

impl TrialData {
    fn new(state: &MethodState, inst: &ProblemInstance, n: usize, trial: usize, seed: u64) -> Result<Self> {
        let method = state.method;
        let batch = sample_batch(inst, n, &mut StreamKey::new(seed, n, trial, Purpose::Train).rng());
        let h_rotated = match (method, inst.covariance().basis()) {
            (Method::Presgd, Basis::Dense(v)) => Some(rotate(&batch, v)?),
            _ => None,
        };
        let estimate = if method == Method::PresgdEst {
            let unlabeled = sample_unlabeled(inst, n, &mut StreamKey::new(seed, n, trial, Purpose::Unlabeled).rng());
            let sigma = estimate_covariance(&unlabeled)?;
            let (rotated, h_along) = match sigma.basis() {
                Basis::Dense(v) => {
                    let h = inst.covariance();
                    let h_along = (0..sigma.dim())
                        .map(|i| {
                            let vi = sigma.eigenvector(i);
                            h.apply(&vi).map(|hv| hv.dot(&vi))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    (rotate(&batch, v)?, h_along)
                }
                _ => unreachable!("eigendecomposition yields a dense basis"),
            };
            Some(EstimateData { sigma, rotated, h_along })
        } else {
            None
        };
        let ridge_path = if method.uses_lambda() {
            let m = state
                .preridge_m
                .clone()
                .unwrap_or_else(|| identity_precond(inst.dim()));
            Some(RidgePath::new(&batch, &m)?)
        } else {
            None
        };
        Ok(TrialData {
            batch,
            h_rotated,
            estimate,
            ridge_path,
        })
    }
}

/// A fitted configuration, or the reason it was not run.
enum Fit {
    Done { w: Vector, diverged: bool },
    Skipped(String),
}

fn sgd_fit(batch: &SampleBatch, g: &[f64], eta: f64, back: Option<&SpectralOperator>) -> Result<Fit> {
    let cfg = SgdConfig::new(eta, batch.len())?;
    let r = run_sgd_diagonal(&mut BatchStream::new(batch)?, g, &cfg)?;
    let w = match back {
        Some(op) => op.from_coords(r.average.as_slice())?,
        None => r.average,
    };
    Ok(Fit::Done {
        w,
        diverged: r.diverged,
    })
}

fn cap_exceeded(eta: f64, trace: f64) -> Option<String> {
    (eta * trace > 1.0).then(|| format!("eta {eta} exceeds stability cap {}", 1.0 / trace))
}

/// Per-method state shared across trials: preconditioners that do not
/// depend on the training data.
struct MethodState {
    method: Method,
    preridge_m: Option<Preconditioner>,
}

impl MethodState {
    fn new(method: Method, inst: &ProblemInstance, grid: &GridSpec) -> Result<Self> {
        let preridge_m = if method == Method::Preridge {
            let h = inst.covariance();
            let gammas: Vec<f64> = h.eigenvalues().iter().map(|l| l.powf(grid.preridge_gamma_power)).collect();
            Some(ridge_family_precond(h, &gammas)?)
        } else {
            None
        };
        Ok(MethodState { method, preridge_m })
    }

    /// SGD preconditioner and stability cap for a β shared by all trials.
    fn exact_precond(&self, inst: &ProblemInstance, beta: f64) -> Result<(Preconditioner, f64)> {
        let g = match self.method {
            Method::Sgd => identity_precond(inst.dim()),
            _ => exact_sgd_precond(inst.covariance(), beta)?,
        };
        let tr = trace_of_product(g.operator(), inst.covariance())?;
        Ok((g, tr))
    }

    fn fit(&self, inst: &ProblemInstance, data: &TrialData, params: &Params) -> Result<Fit> {
        match self.method {
            Method::Sgd | Method::Presgd => {
                let eta = params.eta.unwrap_or(f64::NAN);
                let (g, tr) = self.exact_precond(inst, params.beta.unwrap_or(0.0))?;
                if let Some(reason) = cap_exceeded(eta, tr) {
                    return Ok(Fit::Skipped(reason));
                }
                let op = g.operator();
                match (&data.h_rotated, op.basis()) {
                    (Some(rotated), Basis::Dense(_)) => sgd_fit(rotated, op.eigenvalues(), eta, Some(op)),
                    _ => {
                        let g_diag = op.diagonal().expect("sparse basis is diagonal");
                        sgd_fit(&data.batch, &g_diag, eta, None)
                    }
                }
            }
            Method::PresgdEst => {
                let eta = params.eta.unwrap_or(f64::NAN);
                let beta = params.beta.unwrap_or(0.0);
                let est = data.estimate.as_ref().expect("prepared for the estimated preconditioner");
                if beta == 0.0 {
                    if let Some(reason) = cap_exceeded(eta, inst.covariance().trace()) {
                        return Ok(Fit::Skipped(reason));
                    }
                    return sgd_fit(&data.batch, &vec![1.0; inst.dim()], eta, None);
                }
                let g: Vec<f64> = est.sigma.eigenvalues().iter().map(|s| 1.0 / (beta * s + 1.0)).collect();
                let tr: f64 = g.iter().zip(&est.h_along).map(|(a, b)| a * b).sum();
                if let Some(reason) = cap_exceeded(eta, tr) {
                    return Ok(Fit::Skipped(reason));
                }
                sgd_fit(&est.rotated, &g, eta, Some(&est.sigma))
            }
            Method::Ridge | Method::Preridge => {
                let path = data.ridge_path.as_ref().expect("prepared for ridge");
                Ok(Fit::Done {
                    w: path.solve(params.lambda.unwrap_or(f64::NAN))?,
                    diverged: false,
                })
            }
        }
    }
}

/// Every configuration of `grid` used by `method`, sorted by `(η, β, λ)`.
pub fn grid_points(method: Method, grid: &GridSpec) -> Vec<Params> {
    let mut points = Vec::new();
    match method {
        Method::Sgd => points.extend(grid.eta.iter().map(|&eta| Params {
            eta: Some(eta),
            ..Params::default()
        })),
        Method::Presgd | Method::PresgdEst => {
            for &eta in &grid.eta {
                for &beta in &grid.beta {
                    points.push(Params {
                        eta: Some(eta),
                        beta: Some(beta),
                        lambda: None,
                    });
                }
            }
        }
        Method::Ridge | Method::Preridge => points.extend(grid.lambda.iter().map(|&lambda| Params {
            lambda: Some(lambda),
            ..Params::default()
        })),
    }
    points.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).unwrap());
    points.dedup();
    points
}

fn metric_of(o: &TrialOutcome, metric: Metric) -> f64 {
    match metric {
        Metric::MeanMse => o.mse,
        Metric::MeanExcess => o.excess,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn evaluate_row(
    state: &MethodState,
    inst: &ProblemInstance,
    trials: &[TrialData],
    test: &SampleBatch,
    params: Params,
    metric: Metric,
) -> GridRow {
    let mut outcomes = Vec::with_capacity(trials.len());
    let mut flag = Flag::Ok;
    let mut reason = None;
    for (t, data) in trials.iter().enumerate() {
        let start = Instant::now();
        match state.fit(inst, data, &params) {
            Ok(Fit::Done { w, diverged }) => {
                let (mse, excess) = if diverged {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    match (empirical_mse(&w, test), excess_risk_exact(inst, &w)) {
                        (Ok(m), Ok(e)) => (m, e),
                        (Err(e), _) | (_, Err(e)) => {
                            flag = Flag::Failed;
                            reason = Some(e.to_string());
                            break;
                        }
                    }
                };
                if diverged || !mse.is_finite() {
                    flag = Flag::Diverged;
                }
                outcomes.push(TrialOutcome {
                    trial: t,
                    mse,
                    excess,
                    diverged: diverged || !mse.is_finite(),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                });
            }
            Ok(Fit::Skipped(why)) => {
                flag = Flag::Skipped;
                reason = Some(why);
                outcomes.clear();
                break;
            }
            Err(e) => {
                flag = Flag::Failed;
                reason = Some(e.to_string());
                break;
            }
        }
    }
    let (mean, std) = if flag == Flag::Ok {
        let values: Vec<f64> = outcomes.iter().map(|o| metric_of(o, metric)).collect();
        mean_std(&values)
    } else {
        (f64::NAN, f64::NAN)
    };
    GridRow {
        params,
        mean,
        std,
        trials: outcomes.len(),
        flag,
        reason,
        outcomes,
    }
}

fn prepare_trials(state: &MethodState, inst: &ProblemInstance, n: usize, trials: usize, seed: u64) -> Result<Vec<TrialData>> {
    (0..trials)
        .into_par_iter()
        .map(|t| TrialData::new(state, inst, n, t, seed))
        .collect()
}

/// Evaluates explicit configurations over `trials` trials each.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_points(
    method: Method,
    inst: &ProblemInstance,
    n: usize,
    points: &[Params],
    trials: usize,
    test: &SampleBatch,
    metric: Metric,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<GridRow>> {
    if n < 2 {
        return Err(Error::invalid("n", "must be at least 2"));
    }
    let state = MethodState::new(method, inst, grid)?;
    let data = prepare_trials(&state, inst, n, trials, seed)?;
    Ok(points
        .par_iter()
        .map(|p| evaluate_row(&state, inst, &data, test, *p, metric))
        .collect())
}

/// Grid search for `method` at sample size `n`. The best point minimizes
/// the mean metric; ties go to the smallest `(η, β, λ)`.
pub fn tune_method(method: Method, inst: &ProblemInstance, n: usize, grid: &GridSpec, seed: u64) -> Result<TunedResult> {
    grid.validate(method)?;
    let test = shared_test_set(inst, seed, grid.test_size);
    tune_with_test(method, inst, n, grid, seed, &test)
}

/// [`tune_method`] against a caller-supplied test set.
pub fn tune_with_test(
    method: Method,
    inst: &ProblemInstance,
    n: usize,
    grid: &GridSpec,
    seed: u64,
    test: &SampleBatch,
) -> Result<TunedResult> {
    grid.validate(method)?;
    let points = grid_points(method, grid);
    let table = evaluate_points(method, inst, n, &points, grid.trials, test, grid.metric, grid, seed)?;
    select_best(method, n, table)
}

/// Picks the row with the smallest mean; ties go to the earliest row, which
/// is the smallest `(η, β, λ)` for tables built by [`grid_points`].
pub fn select_best(method: Method, n: usize, table: Vec<GridRow>) -> Result<TunedResult> {
    let mut best: Option<(f64, Params)> = None;
    for row in &table {
        if row.flag == Flag::Ok && best.is_none_or(|(v, _)| row.mean < v) {
            best = Some((row.mean, row.params));
        }
    }
    match best {
        Some((best_value, best)) => Ok(TunedResult {
            method,
            n,
            best,
            best_value,
            table,
        }),
        None => Err(Error::AllPointsFailed(
            table
                .iter()
                .map(|r| {
                    format!(
                        "{:?}: {}",
                        r.params,
                        r.reason.clone().unwrap_or_else(|| r.flag.as_str().to_string())
                    )
                })
                .collect(),
        )),
    }
}

/// Proof-driven settings: `β* = 1/λ_{k*}` and `η* = 1/max(λ̂, tr H̃)` with
/// `k*` and `λ̂` taken from the ridge head-size rule at `lambda_ref`. The
/// estimated variant uses `β = 1/(8Nλ_{k*})` with `N` unlabeled rows and
/// `η = 1/max(λ̂, tr H)`, which respects the cap because `tr(G̃H) ≤ tr H`.
pub fn heuristic_config(method: Method, inst: &ProblemInstance, n: usize, lambda_ref: f64) -> Result<Params> {
    if !(lambda_ref > 0.0) {
        return Err(Error::invalid("lambda_ref", "must be positive"));
    }
    let h = inst.covariance();
    let spectrum = h.eigenvalues();
    let (k_star, lambda_hat) = ridge_k_star(spectrum, lambda_ref, n, HEURISTIC_B)?;
    Ok(match method {
        Method::Sgd => Params {
            eta: Some(heuristic_eta(lambda_hat, h.trace())?),
            ..Params::default()
        },
        Method::Presgd => {
            let beta = heuristic_beta_exact(spectrum, k_star)?;
            let g = exact_sgd_precond(h, beta)?;
            let (h_tilde, _) = transformed_problem(&g, h, inst.target())?;
            Params {
                eta: Some(heuristic_eta(lambda_hat, h_tilde.trace())?),
                beta: Some(beta),
                lambda: None,
            }
        }
        Method::PresgdEst => {
            let beta = if k_star == 0 {
                0.0
            } else {
                heuristic_beta_estimated(spectrum[k_star - 1], n)?
            };
            Params {
                eta: Some(heuristic_eta(lambda_hat, h.trace())?),
                beta: Some(beta),
                lambda: None,
            }
        }
        Method::Ridge | Method::Preridge => Params {
            lambda: Some(lambda_ref),
            ..Params::default()
        },
    })
}

/// Parameters of a learning curve: fixed, or re-tuned at every sample size.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveParams {
    Fixed(Params),
    Tuned(GridSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub params: Params,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub flag: Flag,
}

/// Mean metric against sample size.
pub fn learning_curve(
    method: Method,
    params: &CurveParams,
    inst: &ProblemInstance,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n_values", "must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let point = match params {
            CurveParams::Fixed(p) => {
                let grid = GridSpec {
                    trials,
                    ..GridSpec::default()
                };
                let test = shared_test_set(inst, seed, grid.test_size);
                let row = evaluate_points(method, inst, n, &[*p], trials, &test, grid.metric, &grid, seed)?
                    .remove(0);
                CurvePoint {
                    n,
                    params: *p,
                    mean: row.mean,
                    std: row.std,
                    trials: row.trials,
                    flag: row.flag,
                }
            }
            CurveParams::Tuned(grid) => {
                let grid = GridSpec {
                    trials,
                    ..grid.clone()
                };
                let tuned = tune_method(method, inst, n, &grid, seed)?;
                let row = tuned.best_row();
                CurvePoint {
                    n,
                    params: tuned.best,
                    mean: row.mean,
                    std: row.std,
                    trials: row.trials,
                    flag: row.flag,
                }
            }
        };
        out.push(point);
    }
    Ok(out)
}
