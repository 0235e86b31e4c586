//! Closed-form bias/variance bounds for ridge and tail-averaged SGD.
//!
//! All evaluators fix the absolute constants hidden in `≲`/`≳` to one and
//! report raw components. Comparisons apply an explicit slack
//! ([`BoundConstants::slack`]) outside the evaluators. Infinite tails are
//! truncated at `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralOperator, Vector};

/// Exponents beyond this flush `e^{-x}` to zero.
const EXP_FLUSH: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Threshold constant in the ridge head-size rule.
    pub b: f64,
    /// Multiplicative slack applied when comparing bounds.
    pub slack: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants { b: 2.0, slack: 100.0 }
    }
}

impl BoundConstants {
    pub fn new(b: f64, slack: f64) -> Result<Self> {
        if !(b > 1.0 && b.is_finite()) {
            return Err(Error::invalid("b", format!("{b} must exceed 1")));
        }
        if !(slack > 0.0 && slack.is_finite()) {
            return Err(Error::invalid("slack", format!("{slack} must be positive")));
        }
        Ok(BoundConstants { b, slack })
    }
}

/// Contribution of one eigendirection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionTerm {
    pub index: usize,
    pub bias: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBoundReport {
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
    pub k_star: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_dagger: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_direction: Option<Vec<DirectionTerm>>,
}

impl RiskBoundReport {
    fn from_terms(terms: Vec<DirectionTerm>, k_star: usize) -> Self {
        let bias: f64 = terms.iter().map(|t| t.bias).sum();
        let variance: f64 = terms.iter().map(|t| t.variance).sum();
        RiskBoundReport {
            bias,
            variance,
            total: bias + variance,
            k_star,
            lambda_hat: None,
            k1: None,
            k2: None,
            k_dagger: None,
            per_direction: Some(terms),
        }
    }

    /// Drops the per-direction breakdown.
    pub fn without_directions(mut self) -> Self {
        self.per_direction = None;
        self
    }
}

/// Which power of `‖w̃*‖_{H̃}` multiplies the SGD variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFactor {
    #[default]
    Squared,
    Unsquared,
}

fn check_common(n: usize, sigma2: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid("sigma2", format!("{sigma2} is not a non-negative real")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("{eta} is not a positive real")));
    }
    Ok(())
}

/// Suffix sums `s[k] = Σ_{i≥k} v_i`, with `s[d] = 0`.
fn suffix_sums(v: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; v.len() + 1];
    for i in (0..v.len()).rev() {
        s[i] = s[i + 1] + v[i];
    }
    s
}

/// Ridge head size `k* = min{k : b·λ̂_{k+1} ≤ (λ + Σ_{i>k} λ̂_i)/N}` and the
/// effective regularization `λ̂ = λ + Σ_{i>k*} λ̂_i`.
///
/// `spectrum` is non-increasing; positions use zero-based indexing so the
/// tail past `k` is `spectrum[k..]`.
pub fn ridge_k_star(spectrum: &[f64], lambda: f64, n: usize, b: f64) -> Result<(usize, f64)> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("{lambda} is not a non-negative real")));
    }
    if !(b > 1.0) {
        return Err(Error::invalid("b", format!("{b} must exceed 1")));
    }
    let tail = suffix_sums(spectrum);
    let nf = n as f64;
    let d = spectrum.len();
    let k = (0..=d)
        .find(|&k| {
            let next = if k < d { spectrum[k] } else { 0.0 };
            b * next <= (lambda + tail[k]) / nf
        })
        .unwrap_or(d);
    Ok((k, lambda + tail[k]))
}

fn ridge_report(
    h_hat: &SpectralOperator,
    w_hat: &Vector,
    lambda: f64,
    n: usize,
    sigma2: f64,
    consts: &BoundConstants,
) -> Result<RiskBoundReport> {
    check_common(n, sigma2)?;
    let (k_star, lambda_hat) = ridge_k_star(h_hat.eigenvalues(), lambda, n, consts.b)?;
    let c = h_hat.coords(w_hat)?;
    let nf = n as f64;
    let mut terms = Vec::with_capacity(c.len());
    for (i, (&l, &ci)) in h_hat.eigenvalues().iter().zip(&c).enumerate() {
        let (bias, variance) = if i < k_star {
            let bias = if ci == 0.0 {
                0.0
            } else if l == 0.0 {
                return Err(Error::ZeroEigenvalueInHead { index: i });
            } else {
                lambda_hat * lambda_hat / (nf * nf) * ci * ci / l
            };
            (bias, sigma2 / nf)
        } else {
            let variance = if l == 0.0 {
                0.0
            } else {
                sigma2 * nf * l * l / (lambda_hat * lambda_hat)
            };
            (l * ci * ci, variance)
        };
        terms.push(DirectionTerm { index: i, bias, variance });
    }
    let mut report = RiskBoundReport::from_terms(terms, k_star);
    report.lambda_hat = Some(lambda_hat);
    Ok(report)
}

/// Ridge lower bound at the transformed problem `(Ĥ, ŵ*)`:
/// bias `λ̂²/N²·‖ŵ*‖²_{Ĥ⁻¹_{0:k*}} + ‖ŵ*‖²_{Ĥ_{k*:∞}}`,
/// variance `σ²(k*/N + N/λ̂²·Σ_{i>k*} λ̂_i²)`.
pub fn ridge_lower_bound(
    h_hat: &SpectralOperator,
    w_hat: &Vector,
    lambda: f64,
    n: usize,
    sigma2: f64,
    consts: &BoundConstants,
) -> Result<RiskBoundReport> {
    ridge_report(h_hat, w_hat, lambda, n, sigma2, consts)
}

/// Ridge upper bound. With unit constants it has the same components as
/// [`ridge_lower_bound`].
pub fn ridge_upper_bound(
    h_hat: &SpectralOperator,
    w_hat: &Vector,
    lambda: f64,
    n: usize,
    sigma2: f64,
    consts: &BoundConstants,
) -> Result<RiskBoundReport> {
    ridge_report(h_hat, w_hat, lambda, n, sigma2, consts)
}

/// Per-direction head and tail bias terms of the SGD bound.
/// `head[i] = ∞` marks a zero eigenvalue with a nonzero component.
fn sgd_bias_terms(values: &[f64], c: &[f64], eta: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let scale = 1.0 / (eta * eta * nf * nf);
    let head = values
        .iter()
        .zip(c)
        .map(|(&l, &ci)| {
            if ci == 0.0 {
                0.0
            } else if l == 0.0 {
                f64::INFINITY
            } else {
                let x = 2.0 * nf * eta * l;
                if x > EXP_FLUSH {
                    0.0
                } else {
                    (-x).exp() * ci * ci / l * scale
                }
            }
        })
        .collect();
    let tail = values.iter().zip(c).map(|(&l, &ci)| l * ci * ci).collect();
    (head, tail)
}

fn signal_factor(h: &SpectralOperator, w: &Vector, factor: SignalFactor) -> Result<f64> {
    let sq = h.weighted_norm_sq(w)?;
    Ok(match factor {
        SignalFactor::Squared => sq,
        SignalFactor::Unsquared => sq.sqrt(),
    })
}

fn warn_step_cap(h: &SpectralOperator, eta: f64) {
    let tr = h.trace();
    if eta * tr > 1.0 {
        log::warn!("step size {eta} exceeds 1/tr = {}", 1.0 / tr);
    }
}

#[allow(clippy::too_many_arguments)]
fn sgd_upper_terms(
    values: &[f64],
    c: &[f64],
    eta: f64,
    n: usize,
    noise_plus_signal: f64,
    k1: usize,
    k2: usize,
) -> Result<Vec<DirectionTerm>> {
    let (head, tail) = sgd_bias_terms(values, c, eta, n);
    let nf = n as f64;
    let mut terms = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let bias = if i < k1 { head[i] } else { tail[i] };
        if bias.is_infinite() {
            return Err(Error::ZeroEigenvalueInHead { index: i });
        }
        let var = if i < k2 {
            1.0 / nf
        } else {
            nf * eta * eta * values[i] * values[i]
        };
        terms.push(DirectionTerm {
            index: i,
            bias,
            variance: noise_plus_signal * var,
        });
    }
    Ok(terms)
}

/// SGD upper bound at `(H̃, w̃*)` for given head sizes `k1` (bias) and `k2`
/// (variance):
/// bias `1/(η²N²)·Σ_{i<k1} e^{−2Nηλ̃_i} c_i²/λ̃_i + Σ_{i≥k1} λ̃_i c_i²`,
/// variance `(σ² + ‖w̃*‖²_{H̃})·(k2/N + Nη²·Σ_{i≥k2} λ̃_i²)`.
#[allow(clippy::too_many_arguments)]
pub fn sgd_upper_bound(
    h_tilde: &SpectralOperator,
    w_tilde: &Vector,
    eta: f64,
    n: usize,
    sigma2: f64,
    k1: usize,
    k2: usize,
    factor: SignalFactor,
) -> Result<RiskBoundReport> {
    check_common(n, sigma2)?;
    check_eta(eta)?;
    let d = h_tilde.dim();
    if k1 > d || k2 > d {
        return Err(Error::invalid("k", format!("head sizes ({k1}, {k2}) exceed dimension {d}")));
    }
    warn_step_cap(h_tilde, eta);
    let c = h_tilde.coords(w_tilde)?;
    let s = sigma2 + signal_factor(h_tilde, w_tilde, factor)?;
    let terms = sgd_upper_terms(h_tilde.eigenvalues(), &c, eta, n, s, k1, k2)?;
    let mut report = RiskBoundReport::from_terms(terms, k1);
    report.k1 = Some(k1);
    report.k2 = Some(k2);
    Ok(report)
}

/// Index minimizing `Σ_{i<k} head_i + Σ_{i≥k} tail_i`; ties go to the
/// smallest `k`.
fn best_split(head: &[f64], tail: &[f64]) -> usize {
    let d = head.len();
    let tail_sum = suffix_sums(tail);
    let mut prefix = 0.0;
    let mut best = (tail_sum[0], 0);
    for k in 1..=d {
        prefix += head[k - 1];
        let v = prefix + tail_sum[k];
        if v < best.0 {
            best = (v, k);
        }
    }
    best.1
}

/// [`sgd_upper_bound`] minimized over `k1` and `k2` independently.
pub fn sgd_upper_bound_min(
    h_tilde: &SpectralOperator,
    w_tilde: &Vector,
    eta: f64,
    n: usize,
    sigma2: f64,
    factor: SignalFactor,
) -> Result<RiskBoundReport> {
    check_common(n, sigma2)?;
    check_eta(eta)?;
    let values = h_tilde.eigenvalues();
    let c = h_tilde.coords(w_tilde)?;
    let (head, tail) = sgd_bias_terms(values, &c, eta, n);
    let k1 = best_split(&head, &tail);
    let nf = n as f64;
    let var_head = vec![1.0 / nf; values.len()];
    let var_tail: Vec<f64> = values.iter().map(|l| nf * eta * eta * l * l).collect();
    let k2 = best_split(&var_head, &var_tail);
    sgd_upper_bound(h_tilde, w_tilde, eta, n, sigma2, k1, k2, factor)
}

/// Number of leading eigenvalues at or above `threshold`.
fn count_at_least(values: &[f64], threshold: f64) -> usize {
    values.iter().take_while(|&&l| l >= threshold).count()
}

/// SGD lower bound with `k* = max{k : λ̃_k ≥ 1/(Nη)}` and
/// `k† = max{k : λ̃_k ≥ 2/(3Nη)}`:
/// bias as in the upper bound with `k1 = k*`, variance
/// `σ²/N·(k* + N²η²Σ_{i>k*} λ̃_i²) + ‖w̃*‖²_{H̃}·(η/λ̃₁)·Σ_{i>k†} λ̃_i²`.
pub fn sgd_lower_bound(
    h_tilde: &SpectralOperator,
    w_tilde: &Vector,
    eta: f64,
    n: usize,
    sigma2: f64,
) -> Result<RiskBoundReport> {
    check_common(n, sigma2)?;
    check_eta(eta)?;
    let values = h_tilde.eigenvalues();
    let nf = n as f64;
    if let Some(&top) = values.first() {
        if eta * top > 1.0 {
            log::warn!("step size {eta} exceeds 1/λ₁ = {}", 1.0 / top);
        }
    }
    let k_star = count_at_least(values, 1.0 / (nf * eta));
    let k_dagger = count_at_least(values, 2.0 / (3.0 * nf * eta));
    let c = h_tilde.coords(w_tilde)?;
    let signal = h_tilde.weighted_norm_sq(w_tilde)?;
    let top = values.first().copied().unwrap_or(0.0);
    let (head, tail) = sgd_bias_terms(values, &c, eta, n);
    let mut terms = Vec::with_capacity(values.len());
    for (i, &l) in values.iter().enumerate() {
        let bias = if i < k_star { head[i] } else { tail[i] };
        if bias.is_infinite() {
            return Err(Error::ZeroEigenvalueInHead { index: i });
        }
        let mut variance = if i < k_star {
            sigma2 / nf
        } else {
            sigma2 * nf * eta * eta * l * l
        };
        if i >= k_dagger && signal > 0.0 {
            variance += signal * eta / top * l * l;
        }
        terms.push(DirectionTerm { index: i, bias, variance });
    }
    let mut report = RiskBoundReport::from_terms(terms, k_star);
    report.k1 = Some(k_star);
    report.k_dagger = Some(k_dagger);
    Ok(report)
}

/// Step size `1/max(λ̂, tr H̃)`.
pub fn heuristic_eta(lambda_hat: f64, trace_h_tilde: f64) -> Result<f64> {
    if !(lambda_hat > 0.0 && trace_h_tilde > 0.0) {
        return Err(Error::invalid("heuristic_eta", "inputs must be positive"));
    }
    Ok(1.0 / lambda_hat.max(trace_h_tilde))
}

/// `β = 1/λ_{k*}` for the one-based head size `k*`; zero when `k* = 0`.
pub fn heuristic_beta_exact(spectrum: &[f64], k_star: usize) -> Result<f64> {
    if k_star == 0 {
        return Ok(0.0);
    }
    let l = *spectrum
        .get(k_star - 1)
        .ok_or_else(|| Error::invalid("k_star", format!("{k_star} exceeds dimension {}", spectrum.len())))?;
    if !(l > 0.0) {
        return Err(Error::ZeroEigenvalueInHead { index: k_star - 1 });
    }
    Ok(1.0 / l)
}

/// `β = 1/(8·m·λ_{k*})` for a preconditioner estimated from `m` unlabeled rows.
pub fn heuristic_beta_estimated(lambda_k: f64, unlabeled_count: usize) -> Result<f64> {
    if !(lambda_k > 0.0) || unlabeled_count == 0 {
        return Err(Error::invalid("heuristic_beta_estimated", "inputs must be positive"));
    }
    Ok(1.0 / (8.0 * unlabeled_count as f64 * lambda_k))
}

/// Sample size past which the heuristic comparison is in its intended regime:
/// `2·ln(2·tr(H̃)/λ̂)·tr(H̃)/λ_{k*}`. Clamped at zero when the log is negative.
pub fn large_n_threshold(trace_h_tilde: f64, lambda_hat: f64, lambda_k: f64) -> Result<f64> {
    if !(trace_h_tilde > 0.0 && lambda_hat > 0.0 && lambda_k > 0.0) {
        return Err(Error::invalid("large_n_threshold", "inputs must be positive"));
    }
    Ok((2.0 * (2.0 * trace_h_tilde / lambda_hat).ln() * trace_h_tilde / lambda_k).max(0.0))
}

/// Flatness `κ(N) = tr(H)/(N·λ_{min(N,d)})`.
pub fn kappa(h: &SpectralOperator, n: usize) -> Result<f64> {
    if n == 0 || h.dim() == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let idx = n.min(h.dim()) - 1;
    let l = h.eigenvalues()[idx];
    if l <= 0.0 {
        return Err(Error::Singular { index: idx });
    }
    Ok(h.trace() / (n as f64 * l))
}

/// Spiked instance on which tail-averaged SGD provably beats ridge:
/// `d = N`, `λ₁ = ln N/√N`, `λ_i = (1 − ln N/√N)/N` for `i > 1`, and
/// `w* = σ·√(√N/ln N)·e₁`.
pub fn spiked_instance(n: usize, sigma2: f64) -> Result<(SpectralOperator, Vector)> {
    if n < 3 {
        return Err(Error::invalid("n", "must be at least 3"));
    }
    let nf = n as f64;
    let spike = nf.ln() / nf.sqrt();
    let mut values = vec![(1.0 - spike) / nf; n];
    values[0] = spike;
    let h = SpectralOperator::from_diagonal(&values)?;
    let mut w = Vector::zeros(n);
    w[0] = sigma2.sqrt() * (nf.sqrt() / nf.ln()).sqrt();
    Ok((h, w))
}

/// Outcome of the ridge-versus-SGD bound comparison on [`spiked_instance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub n: usize,
    /// Grid value of `λ` minimizing the ridge lower bound.
    pub lambda: f64,
    pub ridge_lower: f64,
    /// SGD upper bound at `η = N^{-1/2}`, minimized over head sizes.
    pub sgd_upper: f64,
    pub ratio: f64,
}

/// Compares the grid-tuned ridge lower bound with the SGD upper bound at
/// `η = N^{-1/2}` on the spiked instance with unit noise.
pub fn spiked_separation(n: usize, lambda_grid: &[f64], consts: &BoundConstants) -> Result<Separation> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "must be non-empty"));
    }
    let sigma2 = 1.0;
    let (h, w) = spiked_instance(n, sigma2)?;
    let mut best: Option<(f64, f64)> = None;
    for &lambda in lambda_grid {
        let r = ridge_lower_bound(&h, &w, lambda, n, sigma2, consts)?.total;
        if best.is_none_or(|(v, _)| r < v) {
            best = Some((r, lambda));
        }
    }
    let (ridge_lower, lambda) = best.unwrap();
    let eta = 1.0 / (n as f64).sqrt();
    let sgd_upper = sgd_upper_bound_min(&h, &w, eta, n, sigma2, SignalFactor::Squared)?.total;
    Ok(Separation {
        n,
        lambda,
        ridge_lower,
        sgd_upper,
        ratio: ridge_lower / sgd_upper,
    })
}

/// `count` log-spaced points over `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> SpectralOperator {
        SpectralOperator::from_diagonal(v).unwrap()
    }

    fn consts() -> BoundConstants {
        BoundConstants::default()
    }

    /// Linear scan straight from the definition, recomputing tails each time.
    fn k_star_scan(s: &[f64], lambda: f64, n: usize, b: f64) -> usize {
        for k in 0..=s.len() {
            let next = s.get(k).copied().unwrap_or(0.0);
            let tail: f64 = s[k..].iter().sum();
            if b * next <= (lambda + tail) / n as f64 {
                return k;
            }
        }
        unreachable!()
    }

    #[test]
    fn k_star_flat_spectrum() {
        assert_eq!(ridge_k_star(&[1.0; 4], 0.0, 1, 2.0).unwrap(), (0, 4.0));
    }

    #[test]
    fn k_star_large_lambda() {
        let s = [3.0, 1.0, 0.5];
        assert_eq!(ridge_k_star(&s, 2.0 * 10.0 * 3.0, 10, 2.0).unwrap().0, 0);
    }

    #[test]
    fn k_star_inverse_square_matches_scan() {
        let s: Vec<f64> = (1..=200).map(|i| 1.0 / (i * i) as f64).collect();
        let (k, lh) = ridge_k_star(&s, 1.0, 100, 2.0).unwrap();
        assert_eq!(k, k_star_scan(&s, 1.0, 100, 2.0));
        let tail = |k: usize| -> f64 { s[k..].iter().sum() };
        assert!(2.0 * s[k] <= (1.0 + tail(k)) / 100.0);
        if k > 0 {
            assert!(2.0 * s[k - 1] > (1.0 + tail(k - 1)) / 100.0);
        }
        assert_relative_eq!(lh, 1.0 + tail(k), max_relative = 1e-12);
    }

    #[test]
    fn ridge_bound_zero_problem() {
        let h = diag(&[1.0, 0.5]);
        let r = ridge_lower_bound(&h, &Vector::zeros(2), 0.1, 10, 0.0, &consts()).unwrap();
        assert_eq!((r.bias, r.variance, r.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ridge_bound_single_direction() {
        let n = 5;
        let lambda = 2.0 * n as f64;
        let sigma2 = 0.7;
        let h = diag(&[1.0]);
        let r = ridge_lower_bound(&h, &Vector::from_vec(vec![1.0]), lambda, n, sigma2, &consts()).unwrap();
        assert_eq!(r.k_star, 0);
        let lh = lambda + 1.0;
        assert_eq!(r.lambda_hat, Some(lh));
        assert_relative_eq!(r.bias, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.variance, sigma2 * n as f64 / (lh * lh), max_relative = 1e-15);
        let u = ridge_upper_bound(&h, &Vector::from_vec(vec![1.0]), lambda, n, sigma2, &consts()).unwrap();
        assert_eq!(u, r);
    }

    #[test]
    fn ridge_bound_directions_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..2.0)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let w = Vector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let r = ridge_upper_bound(&diag(&s), &w, 0.05, 20, 1.0, &consts()).unwrap();
        let dirs = r.per_direction.as_ref().unwrap();
        let b: f64 = dirs.iter().map(|t| t.bias).sum();
        let v: f64 = dirs.iter().map(|t| t.variance).sum();
        assert!((b - r.bias).abs() <= 1e-12 * r.bias.max(1.0));
        assert!((v - r.variance).abs() <= 1e-12 * r.variance.max(1.0));
        assert_eq!(r.total, r.bias + r.variance);
    }

    #[test]
    fn zero_eigenvalues_stay_in_the_tail() {
        // A zero next eigenvalue always satisfies the head-size rule.
        let h = diag(&[1.0, 0.0]);
        let w = Vector::from_vec(vec![0.0, 1.0]);
        let r = ridge_lower_bound(&h, &w, 0.0, 1, 1.0, &consts()).unwrap();
        assert_eq!(r.k_star, 1);
        assert_eq!(r.lambda_hat, Some(0.0));
        assert_eq!((r.bias, r.variance), (0.0, 1.0));
    }

    #[test]
    fn zero_eigenvalue_in_sgd_head_rejected() {
        let h = diag(&[1.0, 0.0]);
        let w = Vector::from_vec(vec![0.0, 1.0]);
        let err = sgd_upper_bound(&h, &w, 0.5, 4, 1.0, 2, 0, SignalFactor::Squared).unwrap_err();
        assert_eq!(err, Error::ZeroEigenvalueInHead { index: 1 });
    }

    #[test]
    fn sgd_bound_variance_only() {
        let h = diag(&[1.0, 1.0]);
        let r = sgd_upper_bound(&h, &Vector::zeros(2), 0.25, 8, 1.0, 0, 0, SignalFactor::Squared).unwrap();
        assert_eq!(r.bias, 0.0);
        assert_relative_eq!(r.variance, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sgd_bound_full_head() {
        let vals = [0.8, 0.3, 0.1];
        let h = diag(&vals);
        let w = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let (eta, n, s2) = (0.5, 16, 0.3);
        let r = sgd_upper_bound(&h, &w, eta, n, s2, 3, 3, SignalFactor::Squared).unwrap();
        let nf = n as f64;
        let bias: f64 = (0..3)
            .map(|i| (-2.0 * nf * eta * vals[i]).exp() * w[i] * w[i] / vals[i])
            .sum::<f64>()
            / (eta * eta * nf * nf);
        let signal: f64 = (0..3).map(|i| vals[i] * w[i] * w[i]).sum();
        assert_relative_eq!(r.bias, bias, max_relative = 1e-14);
        assert_relative_eq!(r.variance, (s2 + signal) * 3.0 / nf, max_relative = 1e-14);
    }

    #[test]
    fn unsquared_signal_factor() {
        let h = diag(&[1.0]);
        let w = Vector::from_vec(vec![2.0]);
        let sq = sgd_upper_bound(&h, &w, 0.5, 4, 0.0, 1, 1, SignalFactor::Squared).unwrap();
        let un = sgd_upper_bound(&h, &w, 0.5, 4, 0.0, 1, 1, SignalFactor::Unsquared).unwrap();
        assert_relative_eq!(sq.variance, 4.0 / 4.0);
        assert_relative_eq!(un.variance, 2.0 / 4.0);
    }

    #[test]
    fn sgd_min_single_direction() {
        let h = diag(&[0.5]);
        let w = Vector::from_vec(vec![1.0]);
        let m = sgd_upper_bound_min(&h, &w, 0.5, 10, 1.0, SignalFactor::Squared).unwrap();
        let mut best_b = f64::INFINITY;
        let mut best_v = f64::INFINITY;
        for k in 0..=1 {
            let r = sgd_upper_bound(&h, &w, 0.5, 10, 1.0, k, k, SignalFactor::Squared).unwrap();
            best_b = best_b.min(r.bias);
            best_v = best_v.min(r.variance);
        }
        assert_eq!(m.bias, best_b);
        assert_eq!(m.variance, best_v);
    }

    #[test]
    fn flushed_exponential() {
        let h = diag(&[1.0]);
        let w = Vector::from_vec(vec![1.0]);
        let r = sgd_upper_bound(&h, &w, 0.5, 10_000, 0.0, 1, 1, SignalFactor::Squared).unwrap();
        assert_eq!(r.bias, 0.0);
    }

    #[test]
    fn lower_bound_counts() {
        let h = diag(&[0.5, 0.2, 0.1]);
        let r = sgd_lower_bound(&h, &Vector::zeros(3), 0.1, 5, 1.0).unwrap();
        // Nη·λ̃₁ = 0.25 < 1
        assert_eq!(r.k_star, 0);
        let vals = [1.0, 0.5, 0.3, 0.2, 0.05];
        let h = diag(&vals);
        let w = Vector::from_vec(vec![1.0; 5]);
        let (eta, n) = (0.25, 10);
        let r = sgd_lower_bound(&h, &w, eta, n, 1.0).unwrap();
        let ks = vals.iter().filter(|&&l| l >= 1.0 / (n as f64 * eta)).count();
        let kd = vals.iter().filter(|&&l| l >= 2.0 / (3.0 * n as f64 * eta)).count();
        assert_eq!(r.k_star, ks);
        assert_eq!(r.k_dagger, Some(kd));
        let zero = sgd_lower_bound(&h, &Vector::zeros(5), eta, n, 1.0).unwrap();
        let expect: f64 = (ks as f64 + (n * n) as f64 * eta * eta * vals[ks..].iter().map(|l| l * l).sum::<f64>())
            / n as f64;
        assert_relative_eq!(zero.variance, expect, max_relative = 1e-14);
    }

    #[test]
    fn heuristics() {
        assert_eq!(heuristic_eta(5.0, 2.0).unwrap(), 0.2);
        assert_eq!(heuristic_eta(2.0, 5.0).unwrap(), 0.2);
        assert_eq!(heuristic_eta(3.0, 3.0).unwrap(), 1.0 / 3.0);
        assert_relative_eq!(heuristic_beta_exact(&[1.0, 0.1], 2).unwrap(), 10.0);
        assert_eq!(heuristic_beta_exact(&[1.0, 0.1], 0).unwrap(), 0.0);
        assert_relative_eq!(
            heuristic_beta_exact(&[1.0, 0.05], 2).unwrap(),
            2.0 * heuristic_beta_exact(&[1.0, 0.1], 2).unwrap()
        );
        assert_eq!(heuristic_beta_estimated(0.5, 2).unwrap(), 0.125);
        assert_eq!(heuristic_beta_estimated(1.0, 1).unwrap(), 0.125);
        assert_eq!(
            heuristic_beta_estimated(0.3, 20).unwrap(),
            2.0 * heuristic_beta_estimated(0.3, 40).unwrap()
        );
        // tr = e/2, λ̂ = 1: 2·ln(e)·(e/2)/λ_k
        let e = std::f64::consts::E;
        assert_relative_eq!(large_n_threshold(e / 2.0, 1.0, 0.5).unwrap(), 2.0 * e, max_relative = 1e-15);
        assert_eq!(large_n_threshold(1.0, 10.0, 0.5).unwrap(), 0.0);
        assert!(large_n_threshold(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn kappa_values() {
        assert_relative_eq!(kappa(&SpectralOperator::identity(7), 7).unwrap(), 1.0);
        let eps = 1e-3;
        assert_relative_eq!(kappa(&diag(&[1.0, eps]), 2).unwrap(), (1.0 + eps) / (2.0 * eps), max_relative = 1e-14);
        let h = diag(&(1..=200).map(|i| 1.0 / i as f64).collect::<Vec<_>>());
        let harmonic: f64 = (1..=200).map(|i| 1.0 / i as f64).sum();
        assert_relative_eq!(kappa(&h, 100).unwrap(), harmonic / (100.0 * 0.01), max_relative = 1e-12);
        assert!(kappa(&diag(&[1.0, 0.0]), 5).is_err());
    }

    #[test]
    fn spiked_instance_shape() {
        let (h, w) = spiked_instance(100, 1.0).unwrap();
        assert_eq!(h.dim(), 100);
        let spike = 100f64.ln() / 10.0;
        assert_eq!(h.eigenvalues()[0], spike);
        assert_relative_eq!(h.trace(), spike + 99.0 * (1.0 - spike) / 100.0, max_relative = 1e-12);
        assert_relative_eq!(w[0] * w[0], 10.0 / 100f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-4, 1e1, 14);
        assert_eq!(g.len(), 14);
        assert_relative_eq!(g[0], 1e-4, max_relative = 1e-12);
        assert_relative_eq!(g[13], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = ridge_lower_bound(&diag(&[1.0, 0.5]), &Vector::from_vec(vec![1.0, 1.0]), 0.1, 4, 1.0, &consts())
            .unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: RiskBoundReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let stripped = serde_json::to_string(&r.without_directions()).unwrap();
        assert!(!stripped.contains("per_direction"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn spectrum(d: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(1e-4f64..3.0, d).prop_map(|mut v| {
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                v
            })
        }

        proptest! {
            #[test]
            fn k_star_is_minimal(s in (1usize..60).prop_flat_map(spectrum), lambda in 0.0f64..5.0, n in 1usize..500) {
                let (k, _) = ridge_k_star(&s, lambda, n, 2.0).unwrap();
                prop_assert_eq!(k, k_star_scan(&s, lambda, n, 2.0));
            }

            #[test]
            fn min_bound_is_envelope(s in spectrum(8), w in prop::collection::vec(-2.0f64..2.0, 8), eta in 0.01f64..0.5, n in 1usize..200) {
                let h = diag(&s);
                let w = Vector::from_vec(w);
                let m = sgd_upper_bound_min(&h, &w, eta, n, 1.0, SignalFactor::Squared).unwrap();
                for k in 0..=8 {
                    let r = sgd_upper_bound(&h, &w, eta, n, 1.0, k, k, SignalFactor::Squared).unwrap();
                    prop_assert!(m.total <= r.total * (1.0 + 1e-12));
                }
                prop_assert_eq!(m.total, m.bias + m.variance);
            }
        }
    }
}
