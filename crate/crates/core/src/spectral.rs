//! Positive semidefinite operators stored as eigenpairs.
//!
//! Every covariance-like object in the crate (the data covariance, the SGD
//! and ridge preconditioners, the transformed covariances and the estimated
//! covariance of unlabeled data) is a [`SpectralOperator`]: eigenvalues in
//! non-increasing order together with an orthonormal eigenbasis. Diagonal
//! operators keep a sparse basis (identity or a coordinate permutation) so
//! that applying them and evaluating norms costs `O(d)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Relative tolerance used when deciding that a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues in `[-CLAMP_TOL * max, 0)` are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-10;
/// Tolerance for orthonormality of an explicit basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Eigenbasis of a [`SpectralOperator`].
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// Column `i` is `e_i`.
    Identity,
    /// Column `i` is `e_{perm[i]}`.
    Permutation(Vec<usize>),
    /// Dense orthonormal matrix with eigenvectors as columns.
    Dense(DMatrix<f64>),
}

impl Basis {
    fn coordinate(&self, i: usize) -> Option<usize> {
        match self {
            Basis::Identity => Some(i),
            Basis::Permutation(p) => Some(p[i]),
            Basis::Dense(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    basis: Basis,
}

/// Stable descending order of `values`.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // NaN never reaches here: callers validate finiteness first.
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    order
}

fn clamp_nonnegative(values: &mut [f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "eigenvalues",
        });
    }
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = CLAMP_TOL * max;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v >= -tol {
                *v = 0.0;
            } else {
                return Err(Error::NotPositiveSemidefinite {
                    value: *v,
                    tolerance: tol,
                });
            }
        }
    }
    Ok(())
}

impl SpectralOperator {
    /// The `d`-dimensional identity.
    pub fn identity(dim: usize) -> Self {
        SpectralOperator {
            eigenvalues: vec![1.0; dim],
            basis: Basis::Identity,
        }
    }

    /// Operator that is diagonal in the standard basis.
    pub fn from_diagonal(diagonal: &[f64]) -> Result<Self> {
        let mut values = diagonal.to_vec();
        clamp_nonnegative(&mut values)?;
        let order = descending_order(&values);
        let sorted = order.iter().map(|&i| values[i]).collect();
        let basis = if order.iter().enumerate().all(|(i, &j)| i == j) {
            Basis::Identity
        } else {
            Basis::Permutation(order)
        };
        Ok(SpectralOperator {
            eigenvalues: sorted,
            basis,
        })
    }

    /// Builds an operator from eigenvalues and a matrix whose columns are the
    /// matching eigenvectors. The basis must be orthonormal.
    pub fn from_eigenpairs(eigenvalues: &[f64], basis: DMatrix<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: basis.ncols(),
            });
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(d, d)).amax();
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "basis",
                format!("columns not orthonormal (max deviation {err:e})"),
            ));
        }
        let mut values = eigenvalues.to_vec();
        clamp_nonnegative(&mut values)?;
        Ok(Self::sorted_dense(values, basis))
    }

    fn sorted_dense(values: Vec<f64>, basis: DMatrix<f64>) -> Self {
        let order = descending_order(&values);
        let d = values.len();
        let mut sorted_basis = DMatrix::<f64>::zeros(d, d);
        for (new, &old) in order.iter().enumerate() {
            sorted_basis.set_column(new, &basis.column(old));
        }
        SpectralOperator {
            eigenvalues: order.iter().map(|&i| values[i]).collect(),
            basis: Basis::Dense(sorted_basis),
        }
    }

    /// Eigendecomposition of a symmetric positive semidefinite matrix.
    pub fn from_symmetric(a: &DMatrix<f64>) -> Result<Self> {
        sym_eigendecompose(a)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// True when the basis is the standard basis up to a permutation.
    pub fn is_diagonal(&self) -> bool {
        !matches!(self.basis, Basis::Dense(_))
    }

    /// True when this is exactly the identity operator.
    pub fn is_identity(&self) -> bool {
        self.is_diagonal() && self.eigenvalues.iter().all(|&v| v == 1.0)
    }

    /// Diagonal entries in standard coordinates, for diagonal operators.
    pub fn diagonal(&self) -> Option<Vec<f64>> {
        match &self.basis {
            Basis::Identity => Some(self.eigenvalues.clone()),
            Basis::Permutation(p) => {
                let mut diag = vec![0.0; self.dim()];
                for (i, &j) in p.iter().enumerate() {
                    diag[j] = self.eigenvalues[i];
                }
                Some(diag)
            }
            Basis::Dense(_) => None,
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// The `i`-th eigenvector.
    pub fn eigenvector(&self, i: usize) -> Vector {
        match &self.basis {
            Basis::Dense(v) => v.column(i).into_owned(),
            b => {
                let mut e = Vector::zeros(self.dim());
                e[b.coordinate(i).unwrap()] = 1.0;
                e
            }
        }
    }

    /// Coordinates `v_iᵀw` of `w` in the eigenbasis.
    pub fn coords(&self, w: &Vector) -> Result<Vec<f64>> {
        self.check_dim(w.len())?;
        Ok(self.coords_of_slice(w.as_slice()))
    }

    pub(crate) fn coords_of_slice(&self, w: &[f64]) -> Vec<f64> {
        match &self.basis {
            Basis::Identity => w.to_vec(),
            Basis::Permutation(p) => p.iter().map(|&j| w[j]).collect(),
            Basis::Dense(v) => (0..self.dim())
                .map(|i| v.column(i).iter().zip(w).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Inverse of [`coords`](Self::coords): `Σ c_i v_i`.
    pub fn from_coords(&self, c: &[f64]) -> Result<Vector> {
        self.check_dim(c.len())?;
        Ok(match &self.basis {
            Basis::Identity => Vector::from_column_slice(c),
            Basis::Permutation(p) => {
                let mut w = Vector::zeros(self.dim());
                for (i, &j) in p.iter().enumerate() {
                    w[j] = c[i];
                }
                w
            }
            Basis::Dense(v) => v * Vector::from_column_slice(c),
        })
    }

    /// `A x`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let mut c = self.coords(x)?;
        for (ci, &l) in c.iter_mut().zip(&self.eigenvalues) {
            *ci *= l;
        }
        self.from_coords(&c)
    }

    /// Dense `V diag(λ) Vᵀ`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.basis {
            Basis::Dense(v) => {
                let scaled = v * DMatrix::from_diagonal(&Vector::from_column_slice(&self.eigenvalues));
                let m = scaled * v.transpose();
                (&m + m.transpose()) * 0.5
            }
            _ => DMatrix::from_diagonal(&Vector::from_vec(self.diagonal().unwrap())),
        }
    }

    /// Same eigenbasis, eigenvalue `i` replaced by `values[i]`, re-sorted.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        self.check_dim(values.len())?;
        let mut values = values.to_vec();
        clamp_nonnegative(&mut values)?;
        Ok(match &self.basis {
            Basis::Dense(v) => Self::sorted_dense(values, v.clone()),
            b => {
                // Ties keep the eigen order, not the coordinate order.
                let order = descending_order(&values);
                let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
                let perm: Vec<usize> = order.iter().map(|&i| b.coordinate(i).unwrap()).collect();
                let basis = if perm.iter().enumerate().all(|(i, &j)| i == j) {
                    Basis::Identity
                } else {
                    Basis::Permutation(perm)
                };
                SpectralOperator {
                    eigenvalues: sorted,
                    basis,
                }
            }
        })
    }

    /// Applies `f` to every eigenvalue and re-sorts.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.with_values(&values)
    }

    /// `A^p`. Negative powers require a strictly positive spectrum.
    pub fn power(&self, p: f64) -> Result<Self> {
        if p < 0.0 {
            if let Some(index) = self.eigenvalues.iter().position(|&l| l == 0.0) {
                return Err(Error::NegativePowerOfZero { index, power: p });
            }
        }
        if p == 1.0 {
            return Ok(self.clone());
        }
        self.map_eigenvalues(|l| l.powf(p))
    }

    /// Eigenvalues of `self` along the eigenvectors of `reference`, when the
    /// two operators share an eigenbasis.
    pub fn values_along(&self, reference: &SpectralOperator) -> Option<Vec<f64>> {
        if self.dim() != reference.dim() {
            return None;
        }
        if self.is_diagonal() && reference.is_diagonal() {
            let diag = self.diagonal().unwrap();
            return Some(
                (0..reference.dim())
                    .map(|i| diag[reference.basis.coordinate(i).unwrap()])
                    .collect(),
            );
        }
        if self.is_identity() {
            return Some(vec![1.0; self.dim()]);
        }
        let scale = self.eigenvalues.first().copied().unwrap_or(0.0).max(1e-300);
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..reference.dim() {
            let v = reference.eigenvector(i);
            let av = self.apply(&v).ok()?;
            let g = v.dot(&av);
            if (av - &v * g).amax() > 1e-8 * scale {
                return None;
            }
            out.push(g);
        }
        Some(out)
    }

    /// `‖w‖²_A = wᵀ A w`.
    pub fn weighted_norm_sq(&self, w: &Vector) -> Result<f64> {
        self.tail_norm_sq(w, 0)
    }

    /// `Σ_{i<k} (v_iᵀw)² / λ_i` over the leading `k` eigendirections.
    pub fn head_inv_norm_sq(&self, w: &Vector, k: usize) -> Result<f64> {
        self.check_k(k)?;
        let c = self.coords(w)?;
        let mut acc = 0.0;
        for i in 0..k {
            let l = self.eigenvalues[i];
            if l == 0.0 {
                return Err(Error::ZeroEigenvalueInHead { index: i });
            }
            acc += c[i] * c[i] / l;
        }
        Ok(acc)
    }

    /// `Σ_{i≥k} λ_i (v_iᵀw)²` over the eigendirections past the first `k`.
    pub fn tail_norm_sq(&self, w: &Vector, k: usize) -> Result<f64> {
        self.check_k(k)?;
        let c = self.coords(w)?;
        Ok((k..self.dim())
            .map(|i| self.eigenvalues[i] * c[i] * c[i])
            .sum())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.dim() {
            return Err(Error::invalid(
                "k",
                format!("{k} exceeds dimension {}", self.dim()),
            ));
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Eigendecomposition of a symmetric PSD matrix into a [`SpectralOperator`].
///
/// Eigenvalues come out non-increasing (stable on ties). Each eigenvector is
/// signed so that its largest-magnitude entry is positive.
pub fn sym_eigendecompose(a: &DMatrix<f64>) -> Result<SpectralOperator> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "symmetric matrix",
        });
    }
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    let tolerance = SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE);
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    clamp_nonnegative(&mut values)?;
    let mut vectors = eig.eigenvectors;
    for mut col in vectors.column_iter_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(SpectralOperator::sorted_dense(values, vectors))
}

/// `S A S` for symmetric `S`, as a spectral operator.
pub(crate) fn sandwich(outer: &SpectralOperator, inner: &SpectralOperator) -> Result<SpectralOperator> {
    if outer.dim() != inner.dim() {
        return Err(Error::DimensionMismatch {
            expected: outer.dim(),
            got: inner.dim(),
        });
    }
    if let Some(s) = outer.values_along(inner) {
        let values: Vec<f64> = s
            .iter()
            .zip(inner.eigenvalues())
            .map(|(s, l)| s * l * s)
            .collect();
        return inner.with_values(&values);
    }
    let s = outer.to_dense();
    let m = &s * inner.to_dense() * &s;
    sym_eigendecompose(&((&m + m.transpose()) * 0.5))
}

/// `tr(A B)` without forming the product's spectrum.
pub fn trace_of_product(a: &SpectralOperator, b: &SpectralOperator) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if let Some(bv) = b.values_along(a) {
        return Ok(a.eigenvalues().iter().zip(&bv).map(|(x, y)| x * y).sum());
    }
    let mut acc = 0.0;
    for i in 0..a.dim() {
        if a.eigenvalues[i] == 0.0 {
            continue;
        }
        let v = a.eigenvector(i);
        acc += a.eigenvalues[i] * v.dot(&b.apply(&v)?);
    }
    Ok(acc)
}
