//! Observables of the high-dimensional scaling limit.
//!
//! At the critical exponent the log acceptance ratio splits as
//! `Q^N = Z^N + i^N + err^N`, where `Z^N` is Gaussian given `x` and tends in law
//! to `Z_ℓ ~ N(-ℓ³/4, ℓ³/2)`. The limiting mean acceptance is
//! `α(ℓ) = E[1 ∧ e^{Z_ℓ}]`, and because the mean of `Z_ℓ` equals minus half its
//! variance this has the closed form `2Φ(-sqrt(ℓ³/8))`. The speed of the
//! limiting diffusion is `h(ℓ) = ℓ α(ℓ)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{accept_probability, jump_norm_sq, CachedState, ChainTrace, Kernel, KernelParams};
use crate::limit::{PathKind, PathSample};
use crate::spectral::{weighted_norm_sq, CovarianceSpectrum, SobolevIndex, SpectralField};
use crate::stats::{mean, normal_cdf, pairwise_sum, std_error};

/// Split of one `Q^N` value into its Gaussian leading term, the `O(N^{-1/6})`
/// term and the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QDecomposition {
    pub z_term: f64,
    pub i_term: f64,
    /// `q_total - (z_term + i_term)`.
    pub err_term: f64,
    pub q_total: f64,
}

impl QDecomposition {
    pub fn reconstruct(&self) -> f64 {
        (self.z_term + self.i_term) + self.err_term
    }
}

/// Decomposes `q_total = Q^N(x, ξ)`:
///
/// * `Z^N = -ℓ³/4 - (ℓ^{3/2}/√2) N^{-1/2} Σ λ_j^{-1} ξ_j x_j`
/// * `i^N = ½ (ℓΔt)² (‖x‖_C² - ‖C^{1/2}ξ‖_C²)`, with `‖C^{1/2}ξ‖_C² = Σ ξ_j²`.
///
/// Only defined at `γ = 1/3`.
pub fn decompose_q(
    x: &SpectralField,
    xi: &SpectralField,
    q_total: f64,
    p: &KernelParams,
    spec: &CovarianceSpectrum,
) -> Result<QDecomposition> {
    if !p.gamma().is_critical() {
        return Err(Error::DecompositionUndefined(p.gamma().to_string()));
    }
    x.check_same_dim(xi)?;
    spec.check_dim(x.dim())?;
    let n = x.dim();
    let ell = p.ell();
    let (xs, zs, l) = (x.coeffs(), xi.coeffs(), spec.lambdas());
    let cross = pairwise_sum(n, |i| zs[i] * xs[i] / l[i]);
    let z_term = -ell.powi(3) / 4.0 - ell.powf(1.5) / std::f64::consts::SQRT_2 * cross / (n as f64).sqrt();
    let diff = pairwise_sum(n, |i| {
        let w = xs[i] / l[i];
        w * w - zs[i] * zs[i]
    });
    let i_term = 0.5 * (ell * p.dt()).powi(2) * diff;
    Ok(QDecomposition {
        z_term,
        i_term,
        err_term: q_total - (z_term + i_term),
        q_total,
    })
}

/// Closed form `α(ℓ) = 2Φ(-sqrt(ℓ³/8))` of `E[1 ∧ e^{Z_ℓ}]`.
pub fn limiting_alpha(ell: f64) -> Result<f64> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::Domain(format!("ell = {ell}"), "(0, ∞)".into()));
    }
    Ok(2.0 * normal_cdf(-(ell.powi(3) / 8.0).sqrt()))
}

/// `h(ℓ) = ℓ α(ℓ)`.
pub fn speed(ell: f64) -> Result<f64> {
    Ok(ell * limiting_alpha(ell)?)
}

/// Monte Carlo estimate of `E[1 ∧ e^{Z_ℓ}]` with its standard error.
pub fn limiting_alpha_monte_carlo<R: Rng + ?Sized>(ell: f64, draws: usize, rng: &mut R) -> (f64, f64) {
    let m = -ell.powi(3) / 4.0;
    let sd = (ell.powi(3) / 2.0).sqrt();
    let samples: Vec<f64> = (0..draws)
        .map(|_| accept_probability(m + sd * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    (mean(&samples), std_error(&samples))
}

/// Limiting acceptance and speed over a grid of `ℓ`, with the refined maximizer.
#[derive(Debug, Clone)]
pub struct SpeedCurve {
    pub ells: Vec<f64>,
    pub alphas: Vec<f64>,
    pub speeds: Vec<f64>,
    pub ell_star: f64,
    pub alpha_star: f64,
    pub speed_star: f64,
}

const GOLDEN_TOL: f64 = 1e-10;

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fills the curve on `ell_grid` (positive, increasing) and refines the
/// maximizer of `h` by golden-section search between the grid neighbours of
/// the grid argmax.
pub fn speed_and_optimum(ell_grid: &[f64]) -> Result<SpeedCurve> {
    if ell_grid.is_empty() {
        return Err(Error::InvalidParameter("empty ell grid".into()));
    }
    if ell_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("ell grid must be strictly increasing".into()));
    }
    let alphas = ell_grid.iter().map(|&l| limiting_alpha(l)).collect::<Result<Vec<_>>>()?;
    let speeds: Vec<f64> = ell_grid.iter().zip(&alphas).map(|(l, a)| l * a).collect();
    let imax = speeds
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = if imax == 0 { ell_grid[0] * 0.5 } else { ell_grid[imax - 1] };
    let hi = if imax + 1 == ell_grid.len() { ell_grid[imax] * 2.0 } else { ell_grid[imax + 1] };
    let h = |l: f64| l * limiting_alpha(l).unwrap_or(0.0);
    let mut ell_star = golden_section_max(h, lo, hi, GOLDEN_TOL);
    if h(ell_star) < speeds[imax] {
        ell_star = ell_grid[imax];
    }
    let alpha_star = limiting_alpha(ell_star)?;
    Ok(SpeedCurve {
        ells: ell_grid.to_vec(),
        alphas,
        speeds,
        ell_star,
        alpha_star,
        speed_star: ell_star * alpha_star,
    })
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Mean squared jump `‖x^{k+1} - x^k‖_r²` along the trace.
pub fn esjd(trace: &ChainTrace, r: SobolevIndex) -> Result<f64> {
    if trace.has_full_states() {
        let jumps: Vec<f64> = trace
            .states
            .windows(2)
            .map(|w| jump_norm_sq(&w[0], &w[1], r))
            .collect();
        return Ok(mean(&jumps));
    }
    if r == trace.jump_index {
        return Ok(mean(&trace.jump_sq));
    }
    Err(Error::Recording(format!(
        "squared jumps were recorded in H^{} and states were not kept in full; cannot form H^{} increments",
        trace.jump_index.0, r.0
    )))
}

/// Monte Carlo estimate of the drift `d^N(x) = (h(ℓ)Δt)^{-1} E[x^1 - x^0 | x^0 = x]`
/// together with per-coordinate standard errors.
#[derive(Debug, Clone)]
pub struct DriftEstimate {
    pub drift: SpectralField,
    pub stderr: Vec<f64>,
}

/// Single-step increment expectation from `x`, averaged over `n_samples`
/// antithetic pairs `(ξ, -ξ)` with the accept indicator replaced by its
/// conditional mean `1 ∧ e^Q`.
pub fn empirical_drift_with_error<R: Rng + ?Sized>(
    x: &SpectralField,
    kernel: &Kernel<'_>,
    n_samples: usize,
    rng: &mut R,
) -> Result<DriftEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let p = kernel.params();
    if x.dim() != p.n() {
        return Err(Error::DimensionMismatch { left: x.dim(), right: p.n() });
    }
    let model = kernel.model();
    let n = p.n();
    let scale = 1.0 / (speed(p.ell())? * p.dt());
    let cx = CachedState::new(model, x.coeffs().to_vec());
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut neg = vec![0.0; n];
    for _ in 0..n_samples {
        for (z, m) in xi.iter_mut().zip(neg.iter_mut()) {
            *z = rng.sample(StandardNormal);
            *m = -*z;
        }
        let mut pair = vec![0.0; n];
        for noise in [&xi, &neg] {
            let y = CachedState::new(model, kernel.propose_from(&cx, noise));
            let a = accept_weight(kernel, &cx, &y);
            for ((acc, yv), xv) in pair.iter_mut().zip(&y.x).zip(&cx.x) {
                *acc += 0.5 * a * (yv - xv);
            }
        }
        for ((s, s2), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&pair) {
            *s += v;
            *s2 += v * v;
        }
    }
    let nf = n_samples as f64;
    let drift: Vec<f64> = sum.iter().map(|s| scale * s / nf).collect();
    let stderr = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, s2)| {
            let m = s / nf;
            let var = if n_samples > 1 { ((s2 / nf - m * m) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
            scale * (var / nf).sqrt()
        })
        .collect();
    Ok(DriftEstimate {
        drift: SpectralField::new(drift)?,
        stderr,
    })
}

fn accept_weight(kernel: &Kernel<'_>, x: &CachedState, y: &CachedState) -> f64 {
    match kernel.rule() {
        crate::kernel::AcceptRule::Metropolis => accept_probability(kernel.q_cached(x, y)),
        crate::kernel::AcceptRule::ForceAccept => 1.0,
        crate::kernel::AcceptRule::ForceReject => 0.0,
    }
}

/// Monte Carlo estimate of `d^N(x)`; see [`empirical_drift_with_error`].
pub fn empirical_drift<R: Rng + ?Sized>(
    x: &SpectralField,
    kernel: &Kernel<'_>,
    n_samples: usize,
    rng: &mut R,
) -> Result<SpectralField> {
    Ok(empirical_drift_with_error(x, kernel, n_samples, rng)?.drift)
}

/// Source of `d^N(x^k)` in the martingale increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftMode {
    /// Substitute the limiting drift `μ(x)`.
    Mu,
    /// Recompute `d^N` at each visited state by nested Monte Carlo.
    NestedMonteCarlo { n_samples: usize },
}

/// Rescaled noise path `W^N` on the knots `t_k = kΔt`, with the drift source
/// used to form the increments.
#[derive(Debug, Clone)]
pub struct MartingalePath {
    pub path: PathSample,
    pub drift_mode: DriftMode,
}

/// `Γ^k = (2hΔt)^{-1/2} (x^{k+1} - x^k - hΔt d^N(x^k))` and
/// `W^N(kΔt) = sqrt(Δt) Σ_{j<k} Γ^j`, so `W^N(0) = 0`.
pub fn martingale_path<R: Rng + ?Sized>(
    trace: &ChainTrace,
    kernel: &Kernel<'_>,
    mode: DriftMode,
    rng: &mut R,
) -> Result<MartingalePath> {
    if !trace.has_full_states() {
        return Err(Error::Recording("martingale path needs every state with every coordinate".into()));
    }
    let p = kernel.params();
    let model = kernel.model();
    let h = speed(p.ell())?;
    let dt = p.dt();
    let norm = 1.0 / (2.0 * h * dt).sqrt();
    let n = p.n();
    let mut w = vec![0.0; n];
    let mut times = Vec::with_capacity(trace.states.len());
    let mut values = Vec::with_capacity(trace.states.len());
    times.push(0.0);
    values.push(SpectralField::zeros(n));
    for (k, pair) in trace.states.windows(2).enumerate() {
        let d = match mode {
            DriftMode::Mu => model.evaluate(&pair[0]).drift,
            DriftMode::NestedMonteCarlo { n_samples } => {
                let x = SpectralField::new(pair[0].clone())?;
                empirical_drift(&x, kernel, n_samples, rng)?.into_vec()
            }
        };
        for j in 0..n {
            let gamma = norm * (pair[1][j] - pair[0][j] - h * dt * d[j]);
            w[j] += dt.sqrt() * gamma;
        }
        times.push((k + 1) as f64 * dt);
        values.push(SpectralField::new(w.clone())?);
    }
    Ok(MartingalePath {
        path: PathSample::new(times, values, PathKind::RescaledNoise)?,
        drift_mode: mode,
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Estimates `tr_{H^s} D^N(x) = E_x ‖Γ^{0,N}‖_s²` from `n_samples` single
/// steps out of `x`.
///
/// With [`DriftMode::Mu`] the increments are centred at `hΔt μ(x)`; with
/// [`DriftMode::NestedMonteCarlo`] they are centred at their own sample mean,
/// which gives the trace of the sample covariance.
pub fn martingale_cov_trace<R: Rng + ?Sized>(
    x: &SpectralField,
    kernel: &Kernel<'_>,
    mode: DriftMode,
    n_samples: usize,
    rng: &mut R,
) -> Result<TraceEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("n_samples must be at least 2".into()));
    }
    let p = kernel.params();
    if x.dim() != p.n() {
        return Err(Error::DimensionMismatch { left: x.dim(), right: p.n() });
    }
    let model = kernel.model();
    let s = model.s();
    let h = speed(p.ell())?;
    let dt = p.dt();
    let mu = model.evaluate(x.coeffs()).drift;
    let mut increments: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let out = kernel.step(x, rng)?;
        let d: Vec<f64> = out.state.coeffs().iter().zip(x.coeffs()).map(|(a, b)| a - b).collect();
        increments.push(d);
    }
    let center: Vec<f64> = match mode {
        DriftMode::Mu => mu.iter().map(|m| h * dt * m).collect(),
        DriftMode::NestedMonteCarlo { .. } => {
            let mut c = vec![0.0; p.n()];
            for d in &increments {
                for (ci, di) in c.iter_mut().zip(d) {
                    *ci += di / n_samples as f64;
                }
            }
            c
        }
    };
    let norm = 1.0 / (2.0 * h * dt);
    let mut values: Vec<f64> = increments
        .iter()
        .map(|d| {
            let g: Vec<f64> = d.iter().zip(&center).map(|(a, c)| a - c).collect();
            norm * weighted_norm_sq(&g, s)
        })
        .collect();
    if matches!(mode, DriftMode::NestedMonteCarlo { .. }) {
        let bessel = n_samples as f64 / (n_samples as f64 - 1.0);
        values.iter_mut().for_each(|v| *v *= bessel);
    }
    Ok(TraceEstimate {
        estimate: mean(&values),
        stderr: std_error(&values),
    })
}

/// `E_π tr_{H^s} D^N(x) = E_π ‖Γ^{0,N}‖_s²` over a Gaussian target: every
/// sample draws a fresh `x ~ π^N` exactly and takes one step, with the
/// increment centred at `hΔt μ(x)`.
pub fn stationary_cov_trace<R: Rng + ?Sized>(
    kernel: &Kernel<'_>,
    n_samples: usize,
    rng: &mut R,
) -> Result<TraceEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("n_samples must be at least 2".into()));
    }
    let p = kernel.params();
    let model = kernel.model();
    let h = speed(p.ell())?;
    let hdt = h * p.dt();
    let norm = 1.0 / (2.0 * hdt);
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = model.sample_target_exact(p.n(), rng)?;
        let mu = model.evaluate(x.coeffs()).drift;
        let out = kernel.step(&x, rng)?;
        let g: Vec<f64> = out
            .state
            .coeffs()
            .iter()
            .zip(x.coeffs())
            .zip(&mu)
            .map(|((y, x), m)| y - x - hdt * m)
            .collect();
        values.push(norm * weighted_norm_sq(&g, model.s()));
    }
    Ok(TraceEstimate {
        estimate: mean(&values),
        stderr: std_error(&values),
    })
}
