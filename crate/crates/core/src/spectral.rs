//! Coefficient-space representation of functions in the Karhunen–Loève basis
//! of the reference covariance, and the norms and operators acting on it.
//!
//! Coordinates are 1-based in the mathematical sense (`x_j`, `j = 1..N`) and
//! stored 0-based: `coeffs[j - 1] = x_j`. The basis itself is never built.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// A function represented by its first `N` Karhunen–Loève coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    /// Wraps a coefficient vector, rejecting NaN and infinities.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { coeffs })
    }

    /// Internal constructor for vectors produced by finite arithmetic on
    /// finite inputs.
    pub(crate) fn from_vec_unchecked(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.iter().all(|v| v.is_finite()));
        Self { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coeffs: vec![0.0; dim],
        }
    }

    /// The unit vector `e_j` (1-based `j`) in dimension `dim`.
    pub fn basis(dim: usize, j: usize) -> Self {
        assert!(j >= 1 && j <= dim, "basis index {j} outside 1..={dim}");
        let mut coeffs = vec![0.0; dim];
        coeffs[j - 1] = 1.0;
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient `x_j` for 1-based `j`.
    pub fn coord(&self, j: usize) -> f64 {
        self.coeffs[j - 1]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_same_dim(&self, other: &SpectralField) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    /// `self - other`, coordinatewise.
    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same_dim(other)?;
        Ok(Self::from_vec_unchecked(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    /// `self + scale * other`, coordinatewise.
    pub fn add_scaled(&self, scale: f64, other: &SpectralField) -> Result<SpectralField> {
        self.check_same_dim(other)?;
        Ok(Self::from_vec_unchecked(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> SpectralField {
        Self::from_vec_unchecked(self.coeffs.iter().map(|a| factor * a).collect())
    }
}

/// Sobolev-like regularity index `r` of the sequence space `H^r`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SobolevIndex(pub f64);

impl SobolevIndex {
    pub const ZERO: SobolevIndex = SobolevIndex(0.0);

    pub fn value(self) -> f64 {
        self.0
    }

    /// Weight `j^{2r}` attached to coordinate `j` (1-based).
    #[inline]
    pub fn weight(self, j: usize) -> f64 {
        if self.0 == 0.0 {
            1.0
        } else {
            (j as f64).powf(2.0 * self.0)
        }
    }

    /// Weights `j^{2r}` for `j = 1..=n`.
    pub fn weights(self, n: usize) -> Vec<f64> {
        (1..=n).map(|j| self.weight(j)).collect()
    }
}

/// Eigenvalue square roots `λ_j = j^{-κ}` of the reference covariance, so that
/// `C φ_j = λ_j² φ_j`.
#[derive(Debug, Clone)]
pub struct CovarianceSpectrum {
    kappa: f64,
    lambdas: Vec<f64>,
    lambda_sq: Vec<f64>,
}

impl CovarianceSpectrum {
    /// Precomputes `λ_1..λ_{n_max}`. Requires `κ > 1/2` so the covariance is
    /// trace class.
    pub fn new(kappa: f64, n_max: usize) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.5) {
            return Err(Error::InvalidParameter(format!(
                "kappa = {kappa} violates κ > 1/2"
            )));
        }
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        let lambdas: Vec<f64> = (1..=n_max).map(|j| (j as f64).powf(-kappa)).collect();
        let lambda_sq = lambdas.iter().map(|l| l * l).collect();
        Ok(Self {
            kappa,
            lambdas,
            lambda_sq,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn n_max(&self) -> usize {
        self.lambdas.len()
    }

    /// `λ_j` for 1-based `j`.
    pub fn lambda(&self, j: usize) -> f64 {
        self.lambdas[j - 1]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `λ_j²`, the eigenvalues of `C`, 0-based.
    pub fn lambda_sq(&self) -> &[f64] {
        &self.lambda_sq
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim > self.n_max() {
            return Err(Error::SpectrumTooShort {
                requested: dim,
                available: self.n_max(),
            });
        }
        Ok(())
    }

    /// Whether `C` is trace class on `H^r`, i.e. `Σ λ_j² j^{2r} < ∞`.
    /// With `λ_j = j^{-κ}` the series is `Σ j^{2r-2κ}`, finite iff `r < κ - 1/2`.
    pub fn is_trace_class(&self, r: SobolevIndex) -> bool {
        r.0 < self.kappa - 0.5
    }
}

/// `⟨x, y⟩_r = Σ j^{2r} x_j y_j`.
pub fn sobolev_inner(x: &SpectralField, y: &SpectralField, r: SobolevIndex) -> Result<f64> {
    x.check_same_dim(y)?;
    let (a, b) = (x.coeffs(), y.coeffs());
    Ok(pairwise_sum(a.len(), |i| r.weight(i + 1) * a[i] * b[i]))
}

/// `‖x‖_r² = Σ j^{2r} x_j²`.
pub fn sobolev_norm_sq(x: &SpectralField, r: SobolevIndex) -> f64 {
    weighted_norm_sq(x.coeffs(), r)
}

pub(crate) fn weighted_norm_sq(a: &[f64], r: SobolevIndex) -> f64 {
    pairwise_sum(a.len(), |i| r.weight(i + 1) * a[i] * a[i])
}

/// Cameron–Martin norm `‖x‖_C² = Σ λ_j^{-2} x_j²`.
pub fn cameron_martin_norm_sq(x: &SpectralField, spec: &CovarianceSpectrum) -> Result<f64> {
    spec.check_dim(x.dim())?;
    Ok(cm_norm_sq_slice(x.coeffs(), spec))
}

#[inline]
pub(crate) fn cm_norm_sq_slice(a: &[f64], spec: &CovarianceSpectrum) -> f64 {
    let l = spec.lambdas();
    pairwise_sum(a.len(), |i| {
        let w = a[i] / l[i];
        w * w
    })
}

/// Applies `C^power` coordinatewise: `x_j ↦ λ_j^{2·power} x_j`.
pub fn covariance_apply(
    x: &SpectralField,
    spec: &CovarianceSpectrum,
    power: f64,
) -> Result<SpectralField> {
    spec.check_dim(x.dim())?;
    let coeffs = if power == 0.0 {
        x.coeffs().to_vec()
    } else if power == 1.0 {
        x.coeffs()
            .iter()
            .zip(spec.lambda_sq())
            .map(|(v, l2)| v * l2)
            .collect()
    } else if power == 0.5 {
        x.coeffs()
            .iter()
            .zip(spec.lambdas())
            .map(|(v, l)| v * l)
            .collect()
    } else {
        x.coeffs()
            .iter()
            .zip(spec.lambdas())
            .map(|(v, l)| v * l.powf(2.0 * power))
            .collect()
    };
    SpectralField::new(coeffs)
}

/// Draws from the truncated reference measure: `x_j = λ_j ξ_j`, `ξ_j ~ N(0,1)`.
pub fn sample_reference<R: Rng + ?Sized>(
    n: usize,
    spec: &CovarianceSpectrum,
    rng: &mut R,
) -> Result<SpectralField> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    spec.check_dim(n)?;
    reference_from_noise(&standard_normal(n, rng), spec)
}

/// Maps standard normal coordinates `ξ` to the reference draw `(C^N)^{1/2} ξ`.
pub fn reference_from_noise(xi: &SpectralField, spec: &CovarianceSpectrum) -> Result<SpectralField> {
    covariance_apply(xi, spec, 0.5)
}

/// `n` independent standard normal coordinates.
pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SpectralField {
    SpectralField::from_vec_unchecked((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Truncated trace `Σ_{j≤N} λ_j² j^{2r}` of `C_r` on `H^r`.
///
/// Uses `λ_j = j^{-κ}` directly, so `n` may exceed the precomputed length.
pub fn trace_sobolev(spec: &CovarianceSpectrum, r: SobolevIndex, n: usize) -> f64 {
    let exponent = 2.0 * (r.0 - spec.kappa());
    pairwise_sum(n, |i| ((i + 1) as f64).powf(exponent))
}

/// Orthogonal projection onto the span of the first `n` basis functions.
pub fn project(x: &SpectralField, n: usize) -> SpectralField {
    let keep = n.min(x.dim());
    SpectralField::from_vec_unchecked(x.coeffs()[..keep].to_vec())
}
