//! Target measures defined by a density `exp(-Ψ)` against the Gaussian
//! reference measure, truncated to the first `N` coordinates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{cm_norm_sq_slice, CovarianceSpectrum, SobolevIndex, SpectralField};
use crate::stats::pairwise_sum;

/// The change-of-measure functional `Ψ`. All kinds are bounded below by zero,
/// grow at most quadratically in `‖x‖_s` and have bounded second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsiKind {
    /// `Ψ = 0`: the target is the reference measure.
    Zero,
    /// `Ψ(x) = (a/2) ‖x‖_s²`, a Gaussian target with modified spectrum.
    QuadraticSobolev { a: f64 },
    /// `Ψ(x) = a (sqrt(1 + ‖x‖_s²) - 1)`, non-Gaussian with bounded gradient.
    SmoothNonlinear { a: f64 },
}

impl PsiKind {
    pub fn name(&self) -> &'static str {
        match self {
            PsiKind::Zero => "zero",
            PsiKind::QuadraticSobolev { .. } => "quadratic-sobolev",
            PsiKind::SmoothNonlinear { .. } => "smooth-nonlinear",
        }
    }

    pub fn weight(&self) -> f64 {
        match *self {
            PsiKind::Zero => 0.0,
            PsiKind::QuadraticSobolev { a } | PsiKind::SmoothNonlinear { a } => a,
        }
    }

    /// Whether the truncated target is Gaussian with a known diagonal
    /// precision, so it can be sampled exactly.
    pub fn is_gaussian(&self) -> bool {
        !matches!(self, PsiKind::SmoothNonlinear { .. })
    }
}

/// An element of `H^{-s}`, the dual of `H^s`, such as `∇Ψ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    coeffs: Vec<f64>,
}

impl DualField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coord(&self, j: usize) -> f64 {
        self.coeffs[j - 1]
    }

    /// Dual pairing with a primal field: the plain coefficient dot product.
    pub fn pair(&self, x: &SpectralField) -> Result<f64> {
        if self.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: x.dim(),
            });
        }
        let (a, b) = (&self.coeffs, x.coeffs());
        Ok(pairwise_sum(a.len(), |i| a[i] * b[i]))
    }

    /// `‖g‖_{-s}² = Σ j^{-2s} g_j²`.
    pub fn dual_norm_sq(&self, s: SobolevIndex) -> f64 {
        let neg = SobolevIndex(-s.0);
        pairwise_sum(self.coeffs.len(), |i| neg.weight(i + 1) * self.coeffs[i] * self.coeffs[i])
    }
}

/// Reference spectrum plus the functional `Ψ` on `H^s`.
#[derive(Debug, Clone)]
pub struct TargetModel {
    spec: CovarianceSpectrum,
    s: SobolevIndex,
    psi: PsiKind,
    /// `j^{2s}` for `j = 1..=n_max`.
    s_weights: Vec<f64>,
}

/// `Ψ(x)` and the drift `μ(x)` evaluated together, sharing `‖x‖_s²`.
pub(crate) struct Evaluation {
    pub psi: f64,
    pub drift: Vec<f64>,
}

impl TargetModel {
    /// Requires `0 <= s < κ - 1/2` and a non-negative weight.
    pub fn new(spec: CovarianceSpectrum, s: SobolevIndex, psi: PsiKind) -> Result<Self> {
        let mut problems = Vec::new();
        if !(s.0 >= 0.0 && s.0 < spec.kappa() - 0.5) {
            problems.push(format!(
                "s = {} violates 0 <= s < κ - 1/2 = {}",
                s.0,
                spec.kappa() - 0.5
            ));
        }
        let a = psi.weight();
        if !(a.is_finite() && a >= 0.0) {
            problems.push(format!("weight a = {a} must be finite and >= 0"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParameter(problems.join("; ")));
        }
        let s_weights = s.weights(spec.n_max());
        Ok(Self {
            spec,
            s,
            psi,
            s_weights,
        })
    }

    pub fn spec(&self) -> &CovarianceSpectrum {
        &self.spec
    }

    pub fn s(&self) -> SobolevIndex {
        self.s
    }

    pub fn psi_kind(&self) -> PsiKind {
        self.psi
    }

    pub(crate) fn s_weights(&self) -> &[f64] {
        &self.s_weights
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        self.spec.check_dim(x.len())
    }

    #[inline]
    fn s_norm_sq(&self, x: &[f64]) -> f64 {
        let w = &self.s_weights;
        pairwise_sum(x.len(), |i| w[i] * x[i] * x[i])
    }

    /// Factor `c` with `∇Ψ(x)_j = c · j^{2s} x_j`, together with `Ψ(x)`.
    #[inline]
    fn psi_and_grad_factor(&self, x: &[f64]) -> (f64, f64) {
        match self.psi {
            PsiKind::Zero => (0.0, 0.0),
            PsiKind::QuadraticSobolev { a } => (0.5 * a * self.s_norm_sq(x), a),
            PsiKind::SmoothNonlinear { a } => {
                let root = (1.0 + self.s_norm_sq(x)).sqrt();
                (a * (root - 1.0), a / root)
            }
        }
    }

    /// `Ψ^N(x)`; the truncation is implicit since `x` has `N` coordinates.
    pub fn psi(&self, x: &SpectralField) -> Result<f64> {
        self.check(x.coeffs())?;
        Ok(self.psi_and_grad_factor(x.coeffs()).0)
    }

    /// `∇Ψ^N(x)` as an element of `H^{-s}`.
    pub fn grad_psi(&self, x: &SpectralField) -> Result<DualField> {
        self.check(x.coeffs())?;
        let (_, c) = self.psi_and_grad_factor(x.coeffs());
        let coeffs = x
            .coeffs()
            .iter()
            .zip(&self.s_weights)
            .map(|(v, w)| c * w * v)
            .collect();
        Ok(DualField { coeffs })
    }

    /// `log π^N(x)` up to an additive constant: `-½‖x‖_C² - Ψ^N(x)`.
    pub fn log_density_unnorm(&self, x: &SpectralField) -> Result<f64> {
        self.check(x.coeffs())?;
        Ok(-0.5 * cm_norm_sq_slice(x.coeffs(), &self.spec) - self.psi_and_grad_factor(x.coeffs()).0)
    }

    /// Langevin drift `μ^N(x) = -(x + C^N ∇Ψ^N(x))`.
    pub fn drift_mu(&self, x: &SpectralField) -> Result<SpectralField> {
        self.check(x.coeffs())?;
        Ok(SpectralField::from_vec_unchecked(self.evaluate(x.coeffs()).drift))
    }

    pub(crate) fn evaluate(&self, x: &[f64]) -> Evaluation {
        let (psi, c) = self.psi_and_grad_factor(x);
        let drift = if c == 0.0 {
            x.iter().map(|v| -v).collect()
        } else {
            x.iter()
                .zip(self.spec.lambda_sq())
                .zip(&self.s_weights)
                .map(|((v, l2), w)| -(v + l2 * c * w * v))
                .collect()
        };
        Evaluation { psi, drift }
    }

    /// Per-coordinate stationary variance `(λ_j^{-2} + a j^{2s})^{-1}` of a
    /// Gaussian target (1-based `j`).
    pub fn gaussian_variance(&self, j: usize) -> Result<f64> {
        let a = match self.psi {
            PsiKind::Zero => 0.0,
            PsiKind::QuadraticSobolev { a } => a,
            PsiKind::SmoothNonlinear { .. } => {
                return Err(Error::UnsupportedTarget(self.psi.name()))
            }
        };
        let l2 = self.spec.lambda_sq()[j - 1];
        Ok(1.0 / (1.0 / l2 + a * self.s_weights[j - 1]))
    }

    /// Exact draw from `π^N` for the Gaussian kinds.
    pub fn sample_target_exact<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SpectralField> {
        if !self.psi.is_gaussian() {
            return Err(Error::UnsupportedTarget(self.psi.name()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        self.spec.check_dim(n)?;
        let coeffs = match self.psi {
            // Same arithmetic as sample_reference.
            PsiKind::Zero => self.spec.lambdas()[..n]
                .iter()
                .map(|l| l * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            _ => (1..=n)
                .map(|j| {
                    let sd = self.gaussian_variance(j).map(f64::sqrt).unwrap_or(0.0);
                    sd * rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
        };
        Ok(SpectralField::from_vec_unchecked(coeffs))
    }
}
