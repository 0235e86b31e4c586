//! Single-pass preconditioned SGD with a constant step size and tail
//! averaging.
//!
//! The update is `w ← w − η(⟨w, x⟩ − y)·Gx` on a fresh sample per step. After
//! `N` steps the returned estimate is the mean of the iterates
//! `w_t, t = tail_start … N−1`, where `w_0` is the initial point.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::precondition::Preconditioner;
use crate::problem::{ProblemInstance, SampleBatch};
use crate::spectral::{trace_of_product, Basis, Vector};

/// Iterate coordinates beyond this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub eta: f64,
    pub n: usize,
    pub tail_start: usize,
    pub w0: Option<Vector>,
}

impl SgdConfig {
    /// Step size `eta`, `n` samples, averaging window starting at `⌈n/2⌉`.
    pub fn new(eta: f64, n: usize) -> Result<Self> {
        let cfg = SgdConfig {
            eta,
            n,
            tail_start: n.div_ceil(2),
            w0: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tail_start(mut self, tail_start: usize) -> Result<Self> {
        self.tail_start = tail_start;
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial(mut self, w0: Vector) -> Self {
        self.w0 = Some(w0);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", format!("{} is not a positive real", self.eta)));
        }
        if !(0 < self.tail_start && self.tail_start < self.n) {
            return Err(Error::invalid(
                "tail_start",
                format!("need 0 < {} < n = {}", self.tail_start, self.n),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdResult {
    /// Tail average of the iterates.
    pub average: Vector,
    pub last: Vector,
    pub steps: usize,
    pub eta: f64,
    /// Set when an iterate became non-finite or exceeded [`DIVERGENCE_LIMIT`].
    pub diverged: bool,
}

/// Source of labeled samples consumed one at a time.
pub trait SampleStream {
    fn dim(&self) -> usize;
    /// Writes the next feature vector into `x` and returns its response, or
    /// `None` once the stream is exhausted.
    fn next_into(&mut self, x: &mut [f64]) -> Option<f64>;
    /// Number of samples handed out so far.
    fn drawn(&self) -> usize;
}

/// Replays the rows of a labeled batch once, in order.
pub struct BatchStream<'a> {
    batch: &'a SampleBatch,
    responses: &'a [f64],
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(batch: &'a SampleBatch) -> Result<Self> {
        let responses = batch.responses().ok_or(Error::MissingResponses)?;
        Ok(BatchStream {
            batch,
            responses,
            pos: 0,
        })
    }
}

impl SampleStream for BatchStream<'_> {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn next_into(&mut self, x: &mut [f64]) -> Option<f64> {
        if self.pos >= self.batch.len() {
            return None;
        }
        x.copy_from_slice(self.batch.row(self.pos));
        let y = self.responses[self.pos];
        self.pos += 1;
        Some(y)
    }

    fn drawn(&self) -> usize {
        self.pos
    }
}

/// Fresh draws from a problem instance.
pub struct InstanceStream<'a, R> {
    inst: &'a ProblemInstance,
    rng: R,
    z: Vec<f64>,
    drawn: usize,
}

impl<'a, R: Rng> InstanceStream<'a, R> {
    pub fn new(inst: &'a ProblemInstance, rng: R) -> Self {
        InstanceStream {
            inst,
            rng,
            z: vec![0.0; inst.dim()],
            drawn: 0,
        }
    }
}

impl<R: Rng> SampleStream for InstanceStream<'_, R> {
    fn dim(&self) -> usize {
        self.inst.dim()
    }

    fn next_into(&mut self, x: &mut [f64]) -> Option<f64> {
        self.inst.draw_features(&mut self.rng, &mut self.z, x);
        let clean: f64 = x.iter().zip(self.inst.target().iter()).map(|(a, b)| a * b).sum();
        let sigma = self.inst.noise_variance().sqrt();
        let eps: f64 = self.rng.sample(rand_distr::StandardNormal);
        self.drawn += 1;
        Some(if sigma > 0.0 { clean + sigma * eps } else { clean })
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

/// Fixed `(x, y)` pairs, cycled. Intended for hand-checked recursions.
pub struct FixedStream {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    drawn: usize,
}

impl FixedStream {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::invalid("stream", "needs equally many non-zero features and responses"));
        }
        let d = xs[0].len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("stream", "feature rows differ in length"));
        }
        Ok(FixedStream { xs, ys, drawn: 0 })
    }
}

impl SampleStream for FixedStream {
    fn dim(&self) -> usize {
        self.xs[0].len()
    }

    fn next_into(&mut self, x: &mut [f64]) -> Option<f64> {
        let i = self.drawn % self.xs.len();
        x.copy_from_slice(&self.xs[i]);
        self.drawn += 1;
        Some(self.ys[i])
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

/// Presents another stream's features in the coordinates of an orthonormal
/// basis: `x ↦ Vᵀx`.
struct RotatedStream<'a, S> {
    inner: &'a mut S,
    basis: &'a DMatrix<f64>,
    buf: Vec<f64>,
}

impl<S: SampleStream> SampleStream for RotatedStream<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn next_into(&mut self, x: &mut [f64]) -> Option<f64> {
        let y = self.inner.next_into(&mut self.buf)?;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = self.basis.column(i).iter().zip(&self.buf).map(|(a, b)| a * b).sum();
        }
        Some(y)
    }

    fn drawn(&self) -> usize {
        self.inner.drawn()
    }
}

/// `∇l(w; x, y) = (⟨w, x⟩ − y)·x`.
pub fn per_sample_gradient(w: &Vector, x: &Vector, y: f64) -> Result<Vector> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(x * (w.dot(x) - y))
}

/// One preconditioned step `w − η(⟨w, x⟩ − y)·Gx`.
pub fn sgd_step(w: &Vector, x: &Vector, y: f64, g: &Preconditioner, eta: f64) -> Result<Vector> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("{eta} is not a positive real")));
    }
    if !y.is_finite() || w.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "sgd step input" });
    }
    let residual = w.dot(x) - y;
    if g.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: x.len(),
        });
    }
    let gx = g.operator().apply(x)?;
    Ok(w - gx * (eta * residual))
}

/// Runs SGD with a coordinatewise preconditioner `diag(g)` in the stream's
/// own coordinates.
pub fn run_sgd_diagonal<S: SampleStream>(stream: &mut S, g: &[f64], cfg: &SgdConfig) -> Result<SgdResult> {
    cfg.validate()?;
    let d = stream.dim();
    if g.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: g.len() });
    }
    let mut w: Vec<f64> = match &cfg.w0 {
        Some(w0) if w0.len() != d => {
            return Err(Error::DimensionMismatch { expected: d, got: w0.len() })
        }
        Some(w0) => w0.as_slice().to_vec(),
        None => vec![0.0; d],
    };
    let mut x = vec![0.0; d];
    // Running mean, so that a constant iterate sequence averages exactly.
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    let mut steps = 0usize;
    let mut diverged = false;
    let step_scale: Vec<f64> = g.iter().map(|gi| cfg.eta * gi).collect();
    for t in 0..cfg.n {
        if t >= cfg.tail_start {
            count += 1;
            let inv = 1.0 / count as f64;
            for (m, wi) in mean.iter_mut().zip(&w) {
                *m += (wi - *m) * inv;
            }
        }
        let y = stream.next_into(&mut x).ok_or_else(|| {
            Error::invalid("stream", format!("exhausted after {t} of {} samples", cfg.n))
        })?;
        let residual: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - y;
        let mut peak = 0.0f64;
        for ((wi, xi), si) in w.iter_mut().zip(&x).zip(&step_scale) {
            *wi -= si * residual * xi;
            peak = peak.max(wi.abs());
        }
        steps += 1;
        if !(peak <= DIVERGENCE_LIMIT) {
            diverged = true;
            break;
        }
    }
    let average = if count > 0 { mean } else { w.clone() };
    Ok(SgdResult {
        average: Vector::from_vec(average),
        last: Vector::from_vec(w),
        steps,
        eta: cfg.eta,
        diverged,
    })
}

/// Runs preconditioned SGD over `stream`.
///
/// Diagonal preconditioners update coordinatewise in `O(d)` per step. A
/// dense preconditioner `G = V diag(g) Vᵀ` runs in its eigenbasis, rotating
/// one feature vector per step, and the iterates are rotated back at the
/// end. In that case divergence is judged on the rotated coordinates.
pub fn run_sgd<S: SampleStream>(stream: &mut S, g: &Preconditioner, cfg: &SgdConfig) -> Result<SgdResult> {
    let op = g.operator();
    if op.dim() != stream.dim() {
        return Err(Error::DimensionMismatch {
            expected: stream.dim(),
            got: op.dim(),
        });
    }
    match op.basis() {
        Basis::Dense(v) => {
            let mut rotated_cfg = cfg.clone();
            rotated_cfg.w0 = cfg.w0.as_ref().map(|w0| op.coords(w0)).transpose()?.map(Vector::from_vec);
            let d = stream.dim();
            let mut rotated = RotatedStream {
                inner: stream,
                basis: v,
                buf: vec![0.0; d],
            };
            let r = run_sgd_diagonal(&mut rotated, op.eigenvalues(), &rotated_cfg)?;
            Ok(SgdResult {
                average: op.from_coords(r.average.as_slice())?,
                last: op.from_coords(r.last.as_slice())?,
                ..r
            })
        }
        _ => {
            let g_diag = op.diagonal().expect("sparse basis is diagonal");
            run_sgd_diagonal(stream, &g_diag, cfg)
        }
    }
}

/// Runs SGD on fresh samples from `inst`, warning when `η` exceeds the
/// stability cap `1/tr(GH)`.
pub fn run_sgd_on_instance<R: Rng>(
    inst: &ProblemInstance,
    g: &Preconditioner,
    cfg: &SgdConfig,
    rng: R,
) -> Result<SgdResult> {
    let tr = trace_of_product(g.operator(), inst.covariance())?;
    if cfg.eta * tr > 1.0 {
        log::warn!("step size {} exceeds the stability cap {}", cfg.eta, 1.0 / tr);
    }
    let mut stream = InstanceStream::new(inst, rng);
    run_sgd(&mut stream, g, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precondition::{exact_sgd_precond, identity_precond};
    use crate::problem::sample_batch;
    use crate::spectral::{sym_eigendecompose, SpectralOperator};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn loss(w: &Vector, x: &Vector, y: f64) -> f64 {
        0.5 * (w.dot(x) - y).powi(2)
    }

    #[test]
    fn gradient_trivial_cases() {
        let w = Vector::from_vec(vec![1.0, -2.0]);
        let x = Vector::from_vec(vec![0.3, 0.7]);
        assert_eq!(per_sample_gradient(&w, &x, w.dot(&x)).unwrap(), Vector::zeros(2));
        let g = per_sample_gradient(&Vector::zeros(2), &Vector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        assert_eq!(g, Vector::from_vec(vec![-1.0, 0.0]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = Vector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
            let x = Vector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
            let y: f64 = StandardNormal.sample(&mut rng);
            let g = per_sample_gradient(&w, &x, y).unwrap();
            let h = 1e-6;
            for j in 0..5 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (loss(&wp, &x, y) - loss(&wm, &x, y)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn step_examples() {
        let one = identity_precond(1);
        let w = sgd_step(&Vector::zeros(1), &Vector::from_vec(vec![1.0]), 1.0, &one, 0.5).unwrap();
        assert_eq!(w[0], 0.5);

        let ws = Vector::from_vec(vec![1.0, 2.0]);
        let x = Vector::from_vec(vec![0.5, -1.0]);
        assert_eq!(sgd_step(&ws, &x, ws.dot(&x), &identity_precond(2), 0.3).unwrap(), ws);

        let h = SpectralOperator::from_diagonal(&[1.0, 0.25]).unwrap();
        let g = exact_sgd_precond(&h, 2.0).unwrap();
        let w0 = Vector::from_vec(vec![0.1, 0.2]);
        let y = 0.4;
        let stepped = sgd_step(&w0, &x, y, &g, 0.1).unwrap();
        let r = w0.dot(&x) - y;
        let gv = [1.0 / 3.0, 1.0 / 1.5];
        for j in 0..2 {
            assert_relative_eq!(stepped[j], w0[j] - 0.1 * r * gv[j] * x[j], max_relative = 1e-15);
        }
        assert!(sgd_step(&w0, &x, f64::NAN, &g, 0.1).is_err());
    }

    #[test]
    fn hand_unrolled_recursion() {
        let mut s = FixedStream::new(vec![vec![1.0]], vec![1.0]).unwrap();
        let cfg = SgdConfig::new(0.5, 4).unwrap().with_tail_start(2).unwrap();
        let r = run_sgd(&mut s, &identity_precond(1), &cfg).unwrap();
        assert_eq!(r.average[0], 0.8125);
        assert_eq!(r.steps, 4);
        assert_eq!(s.drawn(), 4);
        assert!(!r.diverged);
    }

    #[test]
    fn odd_sample_count_window() {
        let cfg = SgdConfig::new(0.1, 7).unwrap();
        assert_eq!(cfg.tail_start, 4);
        assert!(SgdConfig::new(0.1, 1).is_err());
        assert!(SgdConfig::new(0.0, 10).is_err());
    }

    #[test]
    fn noiseless_fixed_point() {
        let inst = crate::problem::make_power_law_instance(
            6,
            &crate::problem::SpectrumMode::Inv1,
            &crate::problem::TargetMode::Inv1,
            0.0,
        )
        .unwrap();
        let cfg = SgdConfig::new(0.1, 50).unwrap().with_initial(inst.target().clone());
        let r = run_sgd_on_instance(&inst, &identity_precond(6), &cfg, ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.average, *inst.target());
    }

    #[test]
    fn zero_beta_is_bit_identical() {
        let inst = crate::problem::make_power_law_instance(
            20,
            &crate::problem::SpectrumMode::Inv2,
            &crate::problem::TargetMode::Ones,
            1.0,
        )
        .unwrap();
        let cfg = SgdConfig::new(0.2, 200).unwrap();
        let g0 = exact_sgd_precond(inst.covariance(), 0.0).unwrap();
        for seed in 0..5 {
            let a = run_sgd_on_instance(&inst, &g0, &cfg, ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = run_sgd_on_instance(&inst, &identity_precond(20), &cfg, ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_pass_accounting() {
        let inst = crate::problem::make_power_law_instance(
            4,
            &crate::problem::SpectrumMode::Inv1,
            &crate::problem::TargetMode::Ones,
            1.0,
        )
        .unwrap();
        let mut s = InstanceStream::new(&inst, ChaCha8Rng::seed_from_u64(2));
        let cfg = SgdConfig::new(0.1, 37).unwrap();
        run_sgd(&mut s, &identity_precond(4), &cfg).unwrap();
        assert_eq!(s.drawn(), 37);

        let batch = sample_batch(&inst, 10, &mut ChaCha8Rng::seed_from_u64(3));
        let mut bs = BatchStream::new(&batch).unwrap();
        assert!(run_sgd(&mut bs, &identity_precond(4), &SgdConfig::new(0.1, 11).unwrap()).is_err());
    }

    #[test]
    fn divergence_is_flagged() {
        let mut s = FixedStream::new(vec![vec![1.0]], vec![1.0]).unwrap();
        let cfg = SgdConfig::new(3.0, 1000).unwrap();
        let r = run_sgd(&mut s, &identity_precond(1), &cfg).unwrap();
        assert!(r.diverged);
        assert!(r.steps < 1000);
    }

    #[test]
    fn dense_path_matches_explicit_steps() {
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let h = sym_eigendecompose(&(&b * b.transpose() / d as f64)).unwrap();
        let g = exact_sgd_precond(&h, 3.0).unwrap();
        let inst = crate::problem::ProblemInstance::new(
            h.map_eigenvalues(|l| l + 0.1).unwrap(),
            Vector::from_element(d, 1.0),
            0.5,
        )
        .unwrap();
        let batch = sample_batch(&inst, 40, &mut rng);
        let cfg = SgdConfig::new(0.05, 40).unwrap();
        let r = run_sgd(&mut BatchStream::new(&batch).unwrap(), &g, &cfg).unwrap();
        let mut w = Vector::zeros(d);
        let mut sum = Vector::zeros(d);
        let y = batch.responses().unwrap();
        for t in 0..40 {
            if t >= cfg.tail_start {
                sum += &w;
            }
            let x = Vector::from_row_slice(batch.row(t));
            w = sgd_step(&w, &x, y[t], &g, 0.05).unwrap();
        }
        let avg = sum / (40 - cfg.tail_start) as f64;
        assert!((r.average - avg).amax() < 1e-12);
    }

    #[test]
    fn noiseless_contraction() {
        let inst = crate::problem::ProblemInstance::new(
            SpectralOperator::from_diagonal(&[0.5]).unwrap(),
            Vector::from_vec(vec![1.0]),
            0.0,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for e in 4..=12 {
            let n = 1usize << e;
            let cfg = SgdConfig::new(1.0, n).unwrap();
            let mut total = 0.0;
            for trial in 0..10 {
                let r = run_sgd_on_instance(&inst, &identity_precond(1), &cfg, ChaCha8Rng::seed_from_u64(trial)).unwrap();
                total += crate::risk::excess_risk_exact(&inst, &r.average).unwrap();
            }
            let mean = total / 10.0;
            assert!(mean <= prev, "n = {n}: {mean} > {prev}");
            prev = mean;
        }
    }
}
