//! The limiting Langevin SPDE `dz = -h(ℓ)(z + C∇Ψ(z)) dt + sqrt(2h(ℓ)) dW`
//! at the chain's truncation, continuous interpolants of chains, and the
//! autocorrelation-rate fit used to compare the two.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{ChainTrace, KernelParams};
use crate::spectral::{weighted_norm_sq, SobolevIndex, SpectralField};
use crate::stats::mean;
use crate::target::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    InterpolatedChain,
    EulerSpde,
    /// The rescaled martingale noise `W^N`.
    RescaledNoise,
}

/// Values of a path on an increasing, non-negative time grid.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<SpectralField>,
    pub kind: PathKind,
}

impl PathSample {
    pub fn new(times: Vec<f64>, values: Vec<SpectralField>, kind: PathKind) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                left: times.len(),
                right: values.len(),
            });
        }
        if times.first().is_some_and(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidParameter("path times must be >= 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("path times must be strictly increasing".into()));
        }
        Ok(Self { times, values, kind })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Series of the 1-based coordinate `j`.
    pub fn coordinate(&self, j: usize) -> Result<Vec<f64>> {
        if j == 0 || self.values.first().is_some_and(|v| j > v.dim()) {
            return Err(Error::Domain(format!("coordinate {j}"), "recorded coordinates".into()));
        }
        Ok(self.values.iter().map(|v| v.coord(j)).collect())
    }
}

/// Position of `t` in units of `Δt`: a knot index when `t` is a multiple of
/// `Δt` up to rounding, otherwise a cell index and fraction.
fn locate(t: f64, dt: f64, n_steps: usize) -> (usize, f64) {
    let u = t / dt;
    let r = u.round();
    if (u - r).abs() <= 1e-9 * u.abs().max(1.0) {
        return (r as usize, 0.0);
    }
    let k = (u.floor() as usize).min(n_steps - 1);
    (k, u - k as f64)
}

fn check_grid(trace: &ChainTrace, p: &KernelParams, t_grid: &[f64]) -> Result<f64> {
    if !trace.has_every_step() {
        return Err(Error::Recording("interpolation needs the state at every step".into()));
    }
    let t_max = trace.n_steps() as f64 * p.dt();
    if let Some(&t) = t_grid.iter().find(|&&t| !(0.0..=t_max * (1.0 + 1e-12)).contains(&t)) {
        return Err(Error::Domain(format!("t = {t}"), format!("[0, {t_max}]")));
    }
    Ok(t_max)
}

/// Piecewise-linear interpolant `z^N(t) = (t/Δt - k) x^{k+1} + (k + 1 - t/Δt) x^k`
/// on `k Δt <= t < (k+1) Δt`.
pub fn interpolate_chain(trace: &ChainTrace, p: &KernelParams, t_grid: &[f64]) -> Result<PathSample> {
    check_grid(trace, p, t_grid)?;
    let values = t_grid
        .iter()
        .map(|&t| {
            let (k, frac) = locate(t, p.dt(), trace.n_steps());
            if frac == 0.0 {
                return SpectralField::new(trace.states[k].clone());
            }
            let (a, b) = (&trace.states[k], &trace.states[k + 1]);
            SpectralField::new(a.iter().zip(b).map(|(u, v)| (1.0 - frac) * u + frac * v).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    PathSample::new(t_grid.to_vec(), values, PathKind::InterpolatedChain)
}

/// Piecewise-constant interpolant `z̄^N(t) = x^k` for `k Δt <= t < (k+1) Δt`.
pub fn interpolate_chain_constant(trace: &ChainTrace, p: &KernelParams, t_grid: &[f64]) -> Result<PathSample> {
    check_grid(trace, p, t_grid)?;
    let values = t_grid
        .iter()
        .map(|&t| {
            let (k, _) = locate(t, p.dt(), trace.n_steps());
            SpectralField::new(trace.states[k].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    PathSample::new(t_grid.to_vec(), values, PathKind::InterpolatedChain)
}

/// The interpolated chain sampled at its own knots `t_k = kΔt`.
pub fn chain_knots(trace: &ChainTrace, p: &KernelParams) -> Result<PathSample> {
    if !trace.has_every_step() {
        return Err(Error::Recording("interpolation needs the state at every step".into()));
    }
    let times = (0..trace.states.len()).map(|k| k as f64 * p.dt()).collect();
    let values = trace
        .states
        .iter()
        .map(|s| SpectralField::new(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    PathSample::new(times, values, PathKind::InterpolatedChain)
}

/// Integrator settings for [`euler_spde`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdeOptions {
    pub dt: f64,
    /// Keep every `record_every`-th state (the initial one always).
    pub record_every: usize,
    /// Keep only the first `coords` coordinates; `None` keeps all.
    pub coords: Option<usize>,
    /// `false` drops the Brownian forcing, leaving the drift ODE.
    pub noise: bool,
}

impl SpdeOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            record_every: 1,
            coords: None,
            noise: true,
        }
    }

    /// The default integrator step for a chain with interpolation step `Δt`.
    pub fn for_chain(p: &KernelParams) -> Self {
        Self::new(p.dt() / 4.0)
    }
}

/// Euler–Maruyama for the limiting SPDE truncated at `z0.dim()`:
/// `z_{m+1} = z_m + h μ(z_m) dt + sqrt(2 h dt) C^{1/2} ξ_m`, run to time `t_end`.
pub fn euler_spde<R: Rng + ?Sized>(
    z0: &SpectralField,
    model: &TargetModel,
    h_speed: f64,
    t_end: f64,
    opts: SpdeOptions,
    rng: &mut R,
) -> Result<PathSample> {
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt_integrator = {} must be > 0", opts.dt)));
    }
    if !(h_speed > 0.0) {
        return Err(Error::InvalidParameter(format!("h_speed = {h_speed} must be > 0")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("T = {t_end} must be >= 0")));
    }
    model.spec().check_dim(z0.dim())?;
    let n = z0.dim();
    let steps = (t_end / opts.dt).round() as usize;
    let every = opts.record_every.max(1);
    let coords = opts.coords.unwrap_or(n).min(n);
    let mut noise = vec![0.0; n];
    let mut z = z0.coeffs().to_vec();
    let mut times = vec![0.0];
    let mut values = vec![SpectralField::new(z[..coords].to_vec())?];
    for m in 1..=steps {
        if opts.noise {
            for v in noise.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        euler_step(&mut z, model, h_speed, opts.dt, &noise);
        if m % every == 0 {
            times.push(m as f64 * opts.dt);
            values.push(SpectralField::new(z[..coords].to_vec())?);
        }
    }
    PathSample::new(times, values, PathKind::EulerSpde)
}

/// One Euler–Maruyama step driven by standard normal coordinates `xi`.
pub(crate) fn euler_step(z: &mut [f64], model: &TargetModel, h: f64, dt: f64, xi: &[f64]) {
    let drift = model.evaluate(z).drift;
    let scale = (2.0 * h * dt).sqrt();
    for (((zj, mu), x), l) in z.iter_mut().zip(&drift).zip(xi).zip(model.spec().lambdas()) {
        *zj += h * mu * dt + scale * l * x;
    }
}

/// Sample autocorrelation of `xs` at integer lags `1..=max_lag`.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    (1..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            let s: f64 = c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum();
            s / n as f64 / c0
        })
        .collect()
}

/// Exponential decay rate `ρ` of a coordinate's autocorrelation,
/// `acf(τ) ≈ e^{-ρτ}`, fitted by least squares of `log acf` on `τ` through the
/// origin over the leading lags (up to `max_lag` in time units) where the
/// autocorrelation stays above 0.2.
pub fn acf_rate_fit(path: &PathSample, coord: usize, max_lag: f64) -> Result<f64> {
    if path.len() < 3 {
        return Err(Error::FitFailure("path too short".into()));
    }
    let dt = path.times[1] - path.times[0];
    let uniform = path
        .times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1e-300) + 1e-12 * w[1].abs());
    if !uniform {
        return Err(Error::FitFailure("time grid is not uniform".into()));
    }
    let series = path.coordinate(coord)?;
    let max_lag_steps = (max_lag / dt).floor() as usize;
    let acf = autocorrelation(&series, max_lag_steps);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &rho) in acf.iter().enumerate() {
        if !(rho > 0.2) {
            break;
        }
        let tau = (i + 1) as f64 * dt;
        sxy += tau * rho.ln();
        sxx += tau * tau;
    }
    if sxx == 0.0 {
        return Err(Error::FitFailure("autocorrelation is not above 0.2 at any lag".into()));
    }
    Ok(-sxy / sxx)
}

/// Largest `‖x^{k+1} - x^k‖_r` among the cells touched by `t_grid`; bounds the
/// gap between the linear and constant interpolants.
pub fn cell_jump_bound(trace: &ChainTrace, p: &KernelParams, t: f64, r: SobolevIndex) -> f64 {
    let (k, _) = locate(t, p.dt(), trace.n_steps());
    let k = k.min(trace.n_steps() - 1);
    let d: Vec<f64> = trace.states[k]
        .iter()
        .zip(&trace.states[k + 1])
        .map(|(a, b)| b - a)
        .collect();
    weighted_norm_sq(&d, r).sqrt()
}
