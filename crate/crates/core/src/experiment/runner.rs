use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, RecordingMode};
use super::seed::seed_for;
use crate::diagnostics::{decompose_q, esjd, limiting_alpha, speed};
use crate::error::{Error, Result};
use crate::kernel::{
    run_chain, stationary_start, ChainTrace, Kernel, KernelParams, ProposalKind, RecordingPolicy, ScalingExponent,
};
use crate::limit::{acf_rate_fit, euler_spde, PathKind, PathSample, SpdeOptions};
use crate::spectral::{trace_sobolev, CovarianceSpectrum, SobolevIndex, SpectralField};
use crate::stats::{batch_means_std_error, linear_fit, mean, variance};
use crate::target::TargetModel;

pub const CSV_HEADER: &str = "experiment,N,gamma,ell,target_kind,kappa,s,a,replica,seed,metric,value,stderr,wall_ms";

/// One line of the results CSV. `replica` is `None` for rows aggregated over
/// replicas, written as `all`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub gamma: ScalingExponent,
    pub ell: f64,
    pub target_kind: &'static str,
    pub kappa: f64,
    pub s: f64,
    pub a: f64,
    pub replica: Option<usize>,
    pub seed: Option<u64>,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub wall_ms: Option<u128>,
}

impl ResultRow {
    fn fields(&self) -> [String; 14] {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.experiment.to_string(),
            self.n.to_string(),
            self.gamma.to_string(),
            self.ell.to_string(),
            self.target_kind.to_string(),
            self.kappa.to_string(),
            self.s.to_string(),
            self.a.to_string(),
            self.replica.map_or_else(|| "all".to_string(), |r| r.to_string()),
            opt(self.seed.map(|s| s.to_string())),
            self.metric.clone(),
            self.value.to_string(),
            opt(self.stderr.map(|s| s.to_string())),
            opt(self.wall_ms.map(|w| w.to_string())),
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
    /// Write per-cell wall-clock times into the CSV. Off by default so that
    /// reruns produce byte-identical files.
    pub timings: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub n: usize,
    pub gamma: String,
    pub ell: f64,
    pub replica: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

/// Optimum of an RWM `ℓ` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmTuning {
    pub ell_opt: f64,
    pub acceptance_opt: f64,
    pub esjd_opt: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    gamma: ScalingExponent,
    ell: f64,
    replica: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct CellRecord {
    n: usize,
    gamma: String,
    ell: f64,
    replica: usize,
    seed: u64,
    ok: bool,
    wall_ms: u128,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    software: &'static str,
    version: &'static str,
    experiment: String,
    config_hash: String,
    config: String,
    master_seed: u64,
    workers: usize,
    started_at: String,
    finished_at: String,
    csv: String,
    complete: bool,
    csv_error: Option<String>,
    cells: Vec<CellRecord>,
    failures: &'a [CellFailure],
}

type Metric = (&'static str, f64, Option<f64>);

/// Runs every `(N, γ, ℓ, replica)` cell of `cfg` and writes
/// `<output_dir>/<experiment>.csv` plus `manifest.json`.
///
/// Cells run on a worker pool but rows are emitted in grid order, and every
/// cell seeds its own generator, so the CSV does not depend on the number of
/// workers. A cell that fails or panics is listed in the manifest and the
/// remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let master_seed = opts.master_seed.unwrap_or(cfg.master_seed);
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut cells = Vec::new();
    for &n in &cfg.n_grid {
        for &gamma in &cfg.gamma_grid {
            for &ell in &cfg.ell_grid {
                for replica in 0..cfg.replicas {
                    let seed = seed_for(master_seed, n, gamma, ell, replica as u64);
                    cells.push(Cell { n, gamma, ell, replica, seed });
                }
            }
        }
    }

    let workers = opts.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<(Result<Vec<Metric>, String>, u128)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let start = Instant::now();
                let out = match catch_unwind(AssertUnwindSafe(|| run_cell(cfg, cell))) {
                    Ok(Ok(m)) => Ok(m),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(panic) => Err(panic_message(panic.as_ref())),
                };
                (out, start.elapsed().as_millis())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (cell, (out, wall_ms)) in cells.iter().zip(outcomes) {
        records.push(CellRecord {
            n: cell.n,
            gamma: cell.gamma.to_string(),
            ell: cell.ell,
            replica: cell.replica,
            seed: cell.seed,
            ok: out.is_ok(),
            wall_ms,
        });
        match out {
            Ok(metrics) => {
                for (metric, value, stderr) in metrics {
                    let mut row = base_row(cfg, cell.n, cell.gamma, cell.ell, metric, value, stderr);
                    row.replica = Some(cell.replica);
                    row.seed = Some(cell.seed);
                    row.wall_ms = opts.timings.then_some(wall_ms);
                    rows.push(row);
                }
            }
            Err(message) => failures.push(CellFailure {
                n: cell.n,
                gamma: cell.gamma.to_string(),
                ell: cell.ell,
                replica: cell.replica,
                seed: cell.seed,
                message,
            }),
        }
    }
    if cfg.experiment == ExperimentKind::RwmBaseline {
        rows.extend(rwm_optimum_rows(cfg, &rows));
    }

    let csv_path = out_dir.join(format!("{}.csv", cfg.experiment));
    // The manifest is written even when the CSV is not, so completed cells
    // and their seeds stay on record.
    let csv_result = write_csv(&csv_path, &rows);

    let manifest_path = out_dir.join("manifest.json");
    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.to_string(),
        config_hash: cfg.hash(),
        config: cfg.canonical_toml(),
        master_seed,
        workers,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        csv: csv_path.display().to_string(),
        complete: failures.is_empty() && csv_result.is_ok(),
        csv_error: csv_result.as_ref().err().map(|e| e.to_string()),
        cells: records,
        failures: &failures,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    csv_result?;

    Ok(RunSummary {
        csv_path,
        manifest_path,
        rows,
        failures,
    })
}

fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    let text = panic
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| panic.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic payload".into());
    format!("panicked: {text}")
}

fn base_row(
    cfg: &ExperimentConfig,
    n: usize,
    gamma: ScalingExponent,
    ell: f64,
    metric: &str,
    value: f64,
    stderr: Option<f64>,
) -> ResultRow {
    ResultRow {
        experiment: cfg.experiment,
        n,
        gamma,
        ell,
        target_kind: cfg.psi.name(),
        kappa: cfg.kappa,
        s: cfg.s,
        a: cfg.a(),
        replica: None,
        seed: None,
        metric: metric.to_string(),
        value,
        stderr,
        wall_ms: None,
    }
}

fn model_for(cfg: &ExperimentConfig, n: usize) -> Result<TargetModel> {
    TargetModel::new(CovarianceSpectrum::new(cfg.kappa, n)?, SobolevIndex(cfg.s), cfg.psi)
}

fn policy_for(cfg: &ExperimentConfig) -> RecordingPolicy {
    let coord_one = RecordingPolicy::Thinned {
        every: cfg.thinning,
        coords: 1,
    };
    match (cfg.recording, cfg.experiment) {
        (RecordingMode::Auto, ExperimentKind::DiffusionLimit) => coord_one,
        (RecordingMode::Auto, _) | (RecordingMode::Summary, _) => RecordingPolicy::Summary,
        (RecordingMode::Thinned, _) => coord_one,
        (RecordingMode::Full, _) => RecordingPolicy::Full,
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<Metric>> {
    let model = model_for(cfg, cell.n)?;
    let params = KernelParams::new(cell.ell, cell.gamma, cell.n)?;
    let proposal = match cfg.experiment {
        ExperimentKind::RwmBaseline => ProposalKind::Rwm,
        _ => ProposalKind::Mala,
    };
    let kernel = Kernel::new(&model, params, proposal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
    let (x0, exact) = stationary_start(&kernel, cfg.burn_in, &mut rng)?;

    let mut metrics: Vec<Metric> = Vec::new();
    if cfg.experiment == ExperimentKind::QDecomposition {
        metrics.extend(q_decomposition(&kernel, x0, cfg.n_steps, &mut rng)?);
    } else {
        let trace = run_chain(&x0, &kernel, cfg.n_steps, &mut rng, policy_for(cfg))?;
        metrics.extend(chain_metrics(cfg, &kernel, &trace, &mut rng)?);
    }
    metrics.push(("exact_start", if exact { 1.0 } else { 0.0 }, None));
    Ok(metrics)
}

fn acceptance_metrics(trace: &ChainTrace) -> [Metric; 2] {
    let indicators: Vec<f64> = trace.accepted.iter().map(|&a| f64::from(u8::from(a))).collect();
    [
        ("acceptance_rate", trace.acceptance_rate(), Some(batch_means_std_error(&indicators))),
        ("mean_accept_prob", trace.mean_accept_prob(), None),
    ]
}

fn esjd_metric(trace: &ChainTrace, s: SobolevIndex) -> Result<Metric> {
    Ok(("esjd", esjd(trace, s)?, Some(batch_means_std_error(&trace.jump_sq))))
}

fn chain_metrics(
    cfg: &ExperimentConfig,
    kernel: &Kernel<'_>,
    trace: &ChainTrace,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Metric>> {
    let model = kernel.model();
    let p = kernel.params();
    let s = model.s();
    let critical = p.gamma().is_critical();
    let mut out: Vec<Metric> = Vec::new();
    match cfg.experiment {
        ExperimentKind::AcceptanceSweep => {
            out.extend(acceptance_metrics(trace));
            out.push(esjd_metric(trace, s)?);
            out.push(("mean_q", mean(&trace.q_values), Some(batch_means_std_error(&trace.q_values))));
            if critical {
                out.push(("theory_alpha", limiting_alpha(p.ell())?, None));
            }
        }
        ExperimentKind::EllCurve => {
            out.extend(acceptance_metrics(trace));
            let (e, e_se) = (esjd(trace, s)?, batch_means_std_error(&trace.jump_sq));
            let norm = 2.0 * p.dt() * trace_sobolev(model.spec(), s, p.n());
            out.push(("esjd", e, Some(e_se)));
            out.push(("esjd_speed", e / norm, Some(e_se / norm)));
            out.push(("theory_alpha", limiting_alpha(p.ell())?, None));
            out.push(("theory_speed", speed(p.ell())?, None));
        }
        ExperimentKind::GammaScaling => {
            out.extend(acceptance_metrics(trace));
            out.push(esjd_metric(trace, s)?);
        }
        ExperimentKind::EsjdSweep | ExperimentKind::RwmBaseline => {
            out.push(esjd_metric(trace, s)?);
            out.extend(acceptance_metrics(trace));
        }
        ExperimentKind::DiffusionLimit => {
            let h = speed(p.ell())?;
            let every = trace.record_every.max(1);
            if trace.states.len() < 3 {
                return Err(Error::Recording("diffusion-limit needs recorded states".into()));
            }
            let times = (0..trace.states.len()).map(|k| (k * every) as f64 * p.dt()).collect();
            let values = trace
                .states
                .iter()
                .map(|v| SpectralField::new(vec![v[0]]))
                .collect::<Result<Vec<_>>>()?;
            let chain_path = PathSample::new(times, values, PathKind::InterpolatedChain)?;
            // Fit window: one relaxation time of the limit; longer windows
            // mostly add noise from the tail of the sample autocorrelation.
            let max_lag = 1.0 / h;
            let chain_rate = acf_rate_fit(&chain_path, 1, max_lag)?;

            let mut opts = SpdeOptions::for_chain(p);
            opts.record_every = 4 * every;
            opts.coords = Some(1);
            let t_end = trace.n_steps() as f64 * p.dt();
            let spde = euler_spde(&trace.initial_state, model, h, t_end, opts, rng)?;
            let spde_rate = acf_rate_fit(&spde, 1, max_lag)?;
            out.push(("chain_acf_rate", chain_rate, None));
            out.push(("spde_acf_rate", spde_rate, None));
            out.push(("theory_speed", h, None));
            out.extend(acceptance_metrics(trace));
        }
        ExperimentKind::QDecomposition => unreachable!("handled without a chain trace"),
    }
    Ok(out)
}

/// Moments of `Q` and of its parts along a stationary run, one fresh
/// proposal per state.
fn q_decomposition(
    kernel: &Kernel<'_>,
    mut x: SpectralField,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Metric>> {
    let p = *kernel.params();
    let spec = kernel.model().spec();
    let (mut q, mut z, mut i_abs, mut err_abs) = (
        Vec::with_capacity(n_steps),
        Vec::with_capacity(n_steps),
        Vec::with_capacity(n_steps),
        Vec::with_capacity(n_steps),
    );
    for _ in 0..n_steps {
        let step = kernel.step(&x, rng)?;
        let d = decompose_q(&x, &step.noise, step.q_value, &p, spec)?;
        q.push(d.q_total);
        z.push(d.z_term);
        i_abs.push(d.i_term.abs());
        err_abs.push(d.err_term.abs());
        x = step.state;
    }
    let ell3 = p.ell().powi(3);
    Ok(vec![
        ("q_mean", mean(&q), Some(batch_means_std_error(&q))),
        ("q_var", variance(&q), None),
        ("z_mean", mean(&z), Some(batch_means_std_error(&z))),
        ("z_var", variance(&z), None),
        ("i_abs_mean", mean(&i_abs), Some(batch_means_std_error(&i_abs))),
        ("err_abs_mean", mean(&err_abs), Some(batch_means_std_error(&err_abs))),
        ("theory_q_mean", -ell3 / 4.0, None),
        ("theory_q_var", ell3 / 2.0, None),
    ])
}

/// Locates the ESJD-optimal `ℓ` on a sweep with a least-squares quadratic in
/// `log ℓ` over the points around the grid argmax, and reads the acceptance
/// rate there off a linear fit in `log ℓ` over the same window.
///
/// `ells` must be strictly increasing; `esjd` and `acceptance` are the
/// (replica-averaged) values at each `ℓ`.
pub fn tune_rwm(ells: &[f64], esjd: &[f64], acceptance: &[f64]) -> Result<RwmTuning> {
    let m = ells.len();
    if m < 3 || esjd.len() != m || acceptance.len() != m {
        return Err(Error::InvalidParameter("tuning needs at least three ell values of each series".into()));
    }
    if ells.windows(2).any(|w| !(w[0] < w[1])) || !(ells[0] > 0.0) {
        return Err(Error::InvalidParameter("ell grid must be positive and strictly increasing".into()));
    }
    let imax = esjd
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    const HALF_WIDTH: usize = 3;
    let lo = imax.saturating_sub(HALF_WIDTH);
    let hi = (imax + HALF_WIDTH).min(m - 1);
    let (lo, hi) = if hi - lo < 2 {
        if lo == 0 { (0, 2.min(m - 1)) } else { (m - 3, m - 1) }
    } else {
        (lo, hi)
    };
    let u: Vec<f64> = ells[lo..=hi].iter().map(|l| l.ln()).collect();
    let [c0, c1, c2] = quadratic_fit(&u, &esjd[lo..=hi]);
    let u_star = if c2 < 0.0 {
        (-c1 / (2.0 * c2)).clamp(u[0], u[u.len() - 1])
    } else {
        ells[imax].ln()
    };
    let (slope, intercept) = linear_fit(&u, &acceptance[lo..=hi]);
    Ok(RwmTuning {
        ell_opt: u_star.exp(),
        acceptance_opt: intercept + slope * u_star,
        esjd_opt: c0 + c1 * u_star + c2 * u_star * u_star,
    })
}

// Least squares for y ≈ c0 + c1 u + c2 u², solved on centred abscissae.
fn quadratic_fit(u: &[f64], y: &[f64]) -> [f64; 3] {
    let u0 = mean(u);
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for (&ui, &yi) in u.iter().zip(y) {
        let t = ui - u0;
        let basis = [1.0, t, t * t];
        for r in 0..3 {
            b[r] += basis[r] * yi;
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
        }
    }
    let [d0, d1, d2] = solve3(a, b);
    // Back to powers of u.
    [d0 - d1 * u0 + d2 * u0 * u0, d1 - 2.0 * d2 * u0, d2]
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

fn rwm_optimum_rows(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut out = Vec::new();
    let mut ells = cfg.ell_grid.clone();
    ells.sort_by(f64::total_cmp);
    ells.dedup();
    for &n in &cfg.n_grid {
        for &gamma in &cfg.gamma_grid {
            let avg = |metric: &str, ell: f64| {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == n && r.gamma == gamma && r.ell == ell && r.metric == metric)
                    .map(|r| r.value)
                    .collect();
                (!vals.is_empty()).then(|| mean(&vals))
            };
            let esjds: Option<Vec<f64>> = ells.iter().map(|&l| avg("esjd", l)).collect();
            let accs: Option<Vec<f64>> = ells.iter().map(|&l| avg("acceptance_rate", l)).collect();
            let (Some(esjds), Some(accs)) = (esjds, accs) else { continue };
            let Ok(t) = tune_rwm(&ells, &esjds, &accs) else { continue };
            out.push(base_row(cfg, n, gamma, t.ell_opt, "optimal_ell", t.ell_opt, None));
            out.push(base_row(cfg, n, gamma, t.ell_opt, "optimal_acceptance", t.acceptance_opt, None));
        }
    }
    out
}
