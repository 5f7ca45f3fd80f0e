//! Metropolis-adjusted Langevin sampling on spectral truncations of measures
//! that have a density against a Gaussian random-field reference measure.
//!
//! Functions live in coefficient space: a state is the vector of its first `N`
//! Karhunen–Loève coordinates, and the reference covariance is diagonal with
//! eigenvalues `λ_j² = j^{-2κ}`. On top of the sampler the crate provides the
//! observables of the high-dimensional scaling theory (limiting acceptance,
//! speed function, drift/martingale decomposition, limiting Langevin SPDE) and a
//! config-driven sweep runner that writes long-format CSV.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod limit;
pub mod spectral;
pub mod stats;
pub mod target;

pub use diagnostics::{
    decompose_q, empirical_drift, esjd, limiting_alpha, martingale_cov_trace, martingale_path,
    speed_and_optimum, stationary_cov_trace, DriftMode, QDecomposition, SpeedCurve, TraceEstimate,
};
pub use error::{Error, Result};
pub use kernel::{
    log_accept_ratio, mala_propose, mh_step, run_chain, rwm_propose, AcceptRule, ChainTrace,
    Kernel, KernelParams, ProposalKind, RecordingPolicy, ScalingExponent, StepOutcome,
};
pub use limit::{acf_rate_fit, euler_spde, interpolate_chain, PathKind, PathSample, SpdeOptions};
pub use spectral::{
    cameron_martin_norm_sq, covariance_apply, project, sample_reference, sobolev_inner,
    sobolev_norm_sq, trace_sobolev, CovarianceSpectrum, SobolevIndex, SpectralField,
};
pub use target::{DualField, PsiKind, TargetModel};
