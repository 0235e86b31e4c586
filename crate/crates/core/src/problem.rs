//! Synthetic Gaussian least-squares instances and sample generation.
//!
//! Features are drawn as `x ~ N(0, H)` and responses as `y = ⟨x, w*⟩ + ε`
//! with independent `ε ~ N(0, σ²)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Basis, SpectralOperator, Vector};

/// Eigenvalue profile of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum SpectrumMode {
    /// `λ_i = 1/i`
    #[serde(rename = "inv_1")]
    Inv1,
    /// `λ_i = 1/i²`
    #[serde(rename = "inv_2")]
    Inv2,
    #[serde(rename = "custom")]
    Custom { values: Vec<f64> },
}

/// Ground-truth profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum TargetMode {
    #[serde(rename = "ones")]
    Ones,
    /// `w*[i] = 1/i`
    #[serde(rename = "inv_1")]
    Inv1,
    /// `w*[i] = i^-10`
    #[serde(rename = "inv_10")]
    Inv10,
    #[serde(rename = "custom")]
    Custom { values: Vec<f64> },
}

impl SpectrumMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "inv_1" => Some(SpectrumMode::Inv1),
            "inv_2" => Some(SpectrumMode::Inv2),
            _ => None,
        }
    }

    fn values(&self, d: usize) -> Result<Vec<f64>> {
        let values: Vec<f64> = match self {
            SpectrumMode::Inv1 => (1..=d).map(|i| 1.0 / i as f64).collect(),
            SpectrumMode::Inv2 => (1..=d).map(|i| 1.0 / (i as f64 * i as f64)).collect(),
            SpectrumMode::Custom { values } => {
                if values.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    });
                }
                values.clone()
            }
        };
        if let Some(i) = values.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                "spectrum",
                format!("eigenvalue {} at index {i} is not strictly positive", values[i]),
            ));
        }
        Ok(values)
    }
}

impl TargetMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ones" => Some(TargetMode::Ones),
            "inv_1" => Some(TargetMode::Inv1),
            "inv_10" => Some(TargetMode::Inv10),
            _ => None,
        }
    }

    fn values(&self, d: usize) -> Result<Vec<f64>> {
        let values: Vec<f64> = match self {
            TargetMode::Ones => vec![1.0; d],
            TargetMode::Inv1 => (1..=d).map(|i| 1.0 / i as f64).collect(),
            TargetMode::Inv10 => (1..=d).map(|i| (i as f64).powi(-10)).collect(),
            TargetMode::Custom { values } => {
                if values.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    });
                }
                values.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "target" });
        }
        Ok(values)
    }
}

/// Serializable description of a diagonal instance (the instance document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub d: usize,
    pub sigma2: f64,
    pub spectrum: SpectrumMode,
    pub target: TargetMode,
}

impl InstanceSpec {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance spec serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        make_power_law_instance(self.d, &self.spectrum, &self.target, self.sigma2)
    }
}

/// A least-squares problem: covariance `H`, ground truth `w*`, noise `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    covariance: SpectralOperator,
    target: Vector,
    noise_variance: f64,
    sqrt_eigenvalues: Vec<f64>,
}

impl ProblemInstance {
    /// Validates that `H` is strictly positive definite with finite trace.
    pub fn new(covariance: SpectralOperator, target: Vector, noise_variance: f64) -> Result<Self> {
        if target.len() != covariance.dim() {
            return Err(Error::DimensionMismatch {
                expected: covariance.dim(),
                got: target.len(),
            });
        }
        if covariance.dim() == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if let Some(index) = covariance.eigenvalues().iter().position(|&l| l <= 0.0) {
            return Err(Error::Singular { index });
        }
        if !covariance.trace().is_finite() {
            return Err(Error::NonFinite { context: "trace" });
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid("sigma2", format!("{noise_variance} is not a non-negative real")));
        }
        let sqrt_eigenvalues = covariance.eigenvalues().iter().map(|l| l.sqrt()).collect();
        Ok(ProblemInstance {
            covariance,
            target,
            noise_variance,
            sqrt_eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn covariance(&self) -> &SpectralOperator {
        &self.covariance
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Writes one feature draw `x ~ N(0, H)` into `out`.
    pub(crate) fn draw_features<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        for (zi, s) in z.iter_mut().zip(&self.sqrt_eigenvalues) {
            let g: f64 = rng.sample(StandardNormal);
            *zi = g * s;
        }
        match self.covariance.basis() {
            Basis::Identity => out.copy_from_slice(z),
            Basis::Permutation(p) => {
                for (i, &j) in p.iter().enumerate() {
                    out[j] = z[i];
                }
            }
            Basis::Dense(v) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|c| v[(r, c)] * z[c]).sum();
                }
            }
        }
    }
}

/// Builds a diagonal instance from spectrum and target profiles.
pub fn make_power_law_instance(
    d: usize,
    spectrum: &SpectrumMode,
    target: &TargetMode,
    sigma2: f64,
) -> Result<ProblemInstance> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    let h = SpectralOperator::from_diagonal(&spectrum.values(d)?)?;
    ProblemInstance::new(h, Vector::from_vec(target.values(d)?), sigma2)
}

/// Rows of features with optional responses, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    features: Vec<f64>,
    responses: Option<Vec<f64>>,
}

impl SampleBatch {
    pub fn from_rows(dim: usize, features: Vec<f64>, responses: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::invalid("features", "length is not a multiple of the dimension"));
        }
        let n = features.len() / dim;
        if let Some(y) = &responses {
            if y.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: y.len(),
                });
            }
        }
        Ok(SampleBatch {
            dim,
            features,
            responses,
        })
    }

    pub fn from_matrix(x: &DMatrix<f64>, y: Option<&Vector>) -> Result<Self> {
        let mut features = Vec::with_capacity(x.len());
        for row in x.row_iter() {
            features.extend(row.iter());
        }
        Self::from_rows(x.ncols(), features, y.map(|y| y.as_slice().to_vec()))
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    /// The `n × d` design matrix.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.features)
    }

    pub fn response_vector(&self) -> Option<Vector> {
        self.responses.as_ref().map(|y| Vector::from_column_slice(y))
    }

    /// Applies `f` to every feature row, producing a new batch of dimension
    /// `out_dim` with the same responses.
    pub fn map_rows(&self, out_dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut features = vec![0.0; self.len() * out_dim];
        for (i, out) in features.chunks_exact_mut(out_dim).enumerate() {
            f(self.row(i), out);
        }
        SampleBatch {
            dim: out_dim,
            features,
            responses: self.responses.clone(),
        }
    }
}

/// Draws `n` labeled samples. Within a row the feature noise is drawn before
/// the response noise.
pub fn sample_batch<R: Rng + ?Sized>(inst: &ProblemInstance, n: usize, rng: &mut R) -> SampleBatch {
    let d = inst.dim();
    let sigma = inst.noise_variance.sqrt();
    let mut features = vec![0.0; n * d];
    let mut responses = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    let w = inst.target.as_slice();
    for row in features.chunks_exact_mut(d) {
        inst.draw_features(rng, &mut z, row);
        let clean: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        let eps: f64 = rng.sample(StandardNormal);
        responses.push(if sigma > 0.0 { clean + sigma * eps } else { clean });
    }
    SampleBatch {
        dim: d,
        features,
        responses: Some(responses),
    }
}

/// Draws `m` unlabeled feature rows from the same distribution.
pub fn sample_unlabeled<R: Rng + ?Sized>(inst: &ProblemInstance, m: usize, rng: &mut R) -> SampleBatch {
    let d = inst.dim();
    let mut features = vec![0.0; m * d];
    let mut z = vec![0.0; d];
    for row in features.chunks_exact_mut(d) {
        inst.draw_features(rng, &mut z, row);
    }
    SampleBatch {
        dim: d,
        features,
        responses: None,
    }
}

/// Signal-to-noise ratio `‖w*‖²_H / σ²`; infinite when `σ² = 0`.
pub fn snr(inst: &ProblemInstance) -> f64 {
    let signal = inst
        .covariance
        .weighted_norm_sq(&inst.target)
        .expect("target matches covariance dimension");
    if inst.noise_variance == 0.0 {
        f64::INFINITY
    } else {
        signal / inst.noise_variance
    }
}

/// One probe matrix of the fourth-moment check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub probe: String,
    pub alpha: f64,
}

/// Monte Carlo check of the moment assumptions behind the risk bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub trace_finite: bool,
    /// Smallest `α` such that `E[xxᵀAxxᵀ] − HAH ⪯ α tr(AH) H` holds on every probe.
    pub alpha_hat: f64,
    /// Noise is drawn independently of the features, so `E[ε²xxᵀ] = σ²H`.
    pub noise_ok: bool,
    /// Monte Carlo `λ_max(H^{-1/2} Ê[ε²xxᵀ] H^{-1/2}) / σ²`; `None` when `σ² = 0`.
    pub noise_ratio: Option<f64>,
    pub samples: usize,
    pub probes: Vec<ProbeResult>,
}

/// Estimates the fourth-moment constant over the probe set
/// `{I, v₁v₁ᵀ, v_d v_dᵀ, H⁻¹}` and the noise-covariance ratio.
pub fn assumption_diagnostics<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    rng: &mut R,
    samples: usize,
) -> Result<AssumptionReport> {
    if samples < 1000 {
        return Err(Error::invalid("samples", "at least 1000 samples are required"));
    }
    let d = inst.dim();
    let h = &inst.covariance;
    let lambdas = h.eigenvalues();
    let batch = sample_batch(inst, samples, rng);
    let y = batch.responses().unwrap();
    let w = inst.target.as_slice();

    // Whitened features in the eigenbasis of H: u ~ N(0, I).
    let mut whitened = Vec::with_capacity(samples * d);
    let mut noise = Vec::with_capacity(samples);
    for t in 0..samples {
        let x = batch.row(t);
        let c = h.coords_of_slice(x);
        whitened.extend(c.iter().zip(&inst.sqrt_eigenvalues).map(|(c, s)| c / s));
        let clean: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
        noise.push(y[t] - clean);
    }

    let mut probe_weights: Vec<(String, Vec<f64>)> = vec![("identity".into(), vec![1.0; d])];
    let mut top = vec![0.0; d];
    top[0] = 1.0;
    probe_weights.push(("top_direction".into(), top));
    if d > 1 {
        let mut bottom = vec![0.0; d];
        bottom[d - 1] = 1.0;
        probe_weights.push(("bottom_direction".into(), bottom));
    }
    probe_weights.push(("inverse_covariance".into(), lambdas.iter().map(|l| 1.0 / l).collect()));

    let mut probes = Vec::new();
    for (name, a) in probe_weights {
        let trace_ah: f64 = a.iter().zip(lambdas).map(|(a, l)| a * l).sum();
        let mut k = DMatrix::<f64>::zeros(d, d);
        for u in whitened.chunks_exact(d) {
            let q: f64 = u.iter().zip(a.iter().zip(lambdas)).map(|(u, (a, l))| a * l * u * u).sum();
            k.ger(q / samples as f64, &Vector::from_column_slice(u), &Vector::from_column_slice(u), 1.0);
        }
        for i in 0..d {
            k[(i, i)] -= a[i] * lambdas[i];
        }
        let alpha = max_eigenvalue(k) / trace_ah;
        probes.push(ProbeResult { probe: name, alpha });
    }
    let alpha_hat = probes.iter().map(|p| p.alpha).fold(f64::NEG_INFINITY, f64::max);

    let noise_ratio = if inst.noise_variance > 0.0 {
        let mut m = DMatrix::<f64>::zeros(d, d);
        for (u, e) in whitened.chunks_exact(d).zip(&noise) {
            let v = Vector::from_column_slice(u);
            m.ger(e * e / samples as f64, &v, &v, 1.0);
        }
        Some(max_eigenvalue(m) / inst.noise_variance)
    } else {
        None
    };

    Ok(AssumptionReport {
        trace_finite: h.trace().is_finite(),
        alpha_hat,
        noise_ok: true,
        noise_ratio,
        samples,
        probes,
    })
}

fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}
