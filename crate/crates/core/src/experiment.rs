//! Monte Carlo harness: draw random markets, solve each one along a grid of
//! concentrations, and set the sample averages next to the replica and
//! annealed predictions.
//!
//! Sample `i` always uses the substream keyed by `(master_seed, i)`, so the
//! same markets underlie every `τ` of a sweep, and results do not depend on
//! the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::figure::render_figure;
use crate::market::{covariance, generate_returns, MarketConfig};
use crate::replica::{equality_constrained, or_baseline};
use crate::solver::{descend, SolveResult, SolverConfig, SpectralOracle};
use crate::fmt17;

/// Fraction of failed instances tolerated at any single `τ`.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    /// Lagrangian descent–ascent for every instance.
    Descent,
    /// Exact spectral oracle, falling back to descent when it has no root.
    Secular,
}

impl std::str::FromStr for SweepMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "descent" => Ok(SweepMethod::Descent),
            "secular" => Ok(SweepMethod::Secular),
            other => Err(Error::InvalidParameter(format!(
                "unknown method {other:?} (expected descent or secular)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMethod::Descent => "descent",
            SweepMethod::Secular => "secular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub assets: usize,
    pub alpha: f64,
    /// Strictly ascending, every value ≥ 1.
    pub tau_grid: Vec<f64>,
    pub samples: usize,
    pub master_seed: u64,
    /// `None` selects [`SolverConfig::for_assets`].
    pub solver: Option<SolverConfig>,
    pub method: SweepMethod,
    pub output_prefix: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl ExperimentSpec {
    /// `N = 200`, `α = 2`, `τ = 1, 1.25, …, 3`, 50 samples, exact solver.
    pub fn desk_default() -> Self {
        Self {
            assets: 200,
            alpha: 2.0,
            tau_grid: (0..9).map(|i| 1.0 + 0.25 * i as f64).collect(),
            samples: 50,
            master_seed: 1,
            solver: None,
            method: SweepMethod::Secular,
            output_prefix: PathBuf::from("fig1"),
            threads: 0,
        }
    }

    pub fn market(&self) -> Result<MarketConfig> {
        MarketConfig::from_ratio(self.assets, self.alpha, self.master_seed)
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_else(|| SolverConfig::for_assets(self.assets))
    }

    pub fn validate(&self) -> Result<()> {
        self.market()?;
        validate_tau_grid(&self.tau_grid)?;
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be at least 1".into()));
        }
        self.solver_config().validate()
    }
}

pub fn validate_tau_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("tau grid is empty".into()));
    }
    if let Some(&bad) = grid.iter().find(|t| t.is_nan() || **t < 1.0) {
        return Err(Error::Infeasible { tau: bad });
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("tau grid must be finite".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("tau grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Averages at one `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub tau: f64,
    pub eps_mean: f64,
    /// Standard error of the mean, unbiased variance; 0 with one sample.
    pub eps_stderr: f64,
    pub qw_mean: f64,
    pub eps_replica: f64,
    pub eps_or: f64,
    pub samples_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<AggregateRow>,
    /// Digest of the return matrix behind each sample index.
    pub instance_digests: Vec<u64>,
}

/// Per-instance outcome: `(risk per asset, concentration)` or a failure.
type Outcome = Option<(f64, f64)>;

struct SampleResult {
    digest: u64,
    outcomes: Vec<Outcome>,
}

fn accept(r: SolveResult) -> Outcome {
    r.converged.then_some((r.risk_per_asset, r.concentration))
}

fn solve_sample(
    market: &MarketConfig,
    index: u64,
    taus: &[f64],
    method: SweepMethod,
    cfg: &SolverConfig,
) -> SampleResult {
    let x = generate_returns(market, index);
    let digest = x.digest();
    let j = covariance(&x);
    let outcomes = match method {
        SweepMethod::Descent => taus
            .iter()
            .map(|&tau| match descend(&j, tau, cfg) {
                Ok(r) => accept(r),
                Err(e) => {
                    debug!("sample {index}, tau {tau}: {e}");
                    None
                }
            })
            .collect(),
        SweepMethod::Secular => {
            let oracle = SpectralOracle::new(&j);
            taus.iter()
                .map(|&tau| match oracle.solve(tau) {
                    Ok(r) => accept(r),
                    Err(Error::NoInteriorRoot { .. }) => {
                        info!("sample {index}, tau {tau}: no secular root, falling back to descent");
                        descend(&j, tau, cfg).ok().and_then(accept)
                    }
                    Err(e) => {
                        debug!("sample {index}, tau {tau}: {e}");
                        None
                    }
                })
                .collect()
        }
    };
    SampleResult { digest, outcomes }
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn solve_all(
    market: &MarketConfig,
    samples: usize,
    taus: &[f64],
    method: SweepMethod,
    cfg: &SolverConfig,
    threads: usize,
) -> Result<Vec<SampleResult>> {
    with_pool(threads, || {
        (0..samples as u64)
            .into_par_iter()
            .map(|i| solve_sample(market, i, taus, method, cfg))
            .collect()
    })
}

/// Mean and unbiased sample variance in index order.
fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn check_failures(tau: f64, failures: usize, samples: usize) -> Result<()> {
    if failures as f64 > MAX_FAILURE_FRACTION * samples as f64 {
        return Err(Error::TooManyFailures { tau, failures, samples });
    }
    Ok(())
}

/// Folds per-sample outcomes (sorted by sample index) into one row per `τ`.
pub fn aggregate(
    alpha: f64,
    taus: &[f64],
    samples: &[Vec<Outcome>],
) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::with_capacity(taus.len());
    for (t, &tau) in taus.iter().enumerate() {
        let ok: Vec<(f64, f64)> = samples.iter().filter_map(|s| s[t]).collect();
        let failures = samples.len() - ok.len();
        check_failures(tau, failures, samples.len())?;
        let eps: Vec<f64> = ok.iter().map(|o| o.0).collect();
        let qs: Vec<f64> = ok.iter().map(|o| o.1).collect();
        let (eps_mean, eps_var) = mean_var(&eps);
        let (qw_mean, _) = mean_var(&qs);
        rows.push(AggregateRow {
            tau,
            eps_mean,
            eps_stderr: (eps_var / eps.len() as f64).sqrt(),
            qw_mean,
            eps_replica: equality_constrained(alpha, tau)?.eps,
            eps_or: or_baseline(alpha, tau)?.eps,
            samples_used: ok.len(),
            failures,
        });
    }
    Ok(rows)
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    spec.validate()?;
    let market = spec.market()?;
    let cfg = spec.solver_config();
    let results = solve_all(&market, spec.samples, &spec.tau_grid, spec.method, &cfg, spec.threads)?;
    let instance_digests: Vec<u64> = results.iter().map(|r| r.digest).collect();
    for (i, d) in instance_digests.iter().enumerate() {
        debug!("sample {i}: instance digest {d:016x}");
    }
    let outcomes: Vec<Vec<Outcome>> = results.into_iter().map(|r| r.outcomes).collect();
    let rows = aggregate(market.alpha(), &spec.tau_grid, &outcomes)?;
    Ok(SweepReport { rows, instance_digests })
}

pub const CSV_HEADER: &str = "tau,eps_mean,eps_stderr,qw_mean,eps_replica,eps_or,samples_used,failures";

pub fn csv_string(rows: &[AggregateRow]) -> String {
    let mut out = String::with_capacity(160 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt17(r.tau),
            fmt17(r.eps_mean),
            fmt17(r.eps_stderr),
            fmt17(r.qw_mean),
            fmt17(r.eps_replica),
            fmt17(r.eps_or),
            r.samples_used,
            r.failures
        );
    }
    out
}

pub fn write_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    fs::write(path, csv_string(rows)).map_err(|e| Error::io(path, e))
}

/// `key=value` lines describing a finished sweep.
pub fn meta_string(spec: &ExperimentSpec, report: &SweepReport, threads: usize, wall_seconds: f64) -> String {
    let cfg = spec.solver_config();
    let grid: Vec<String> = spec.tau_grid.iter().map(|t| t.to_string()).collect();
    let digests: Vec<String> = report.instance_digests.iter().map(|d| format!("{d:016x}")).collect();
    let lines = [
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("assets", spec.assets.to_string()),
        ("alpha", spec.alpha.to_string()),
        ("tau_grid", grid.join(",")),
        ("samples", spec.samples.to_string()),
        ("seed", spec.master_seed.to_string()),
        ("method", spec.method.to_string()),
        ("eta_w", cfg.eta_w.to_string()),
        ("eta_k", cfg.eta_k.to_string()),
        ("eta_theta", cfg.eta_theta.to_string()),
        ("delta_tol", cfg.delta_tol.to_string()),
        ("max_iter", cfg.max_iter.to_string()),
        ("update_order", format!("{:?}", cfg.order)),
        ("rng", "chacha20+ziggurat".to_string()),
        ("threads", threads.to_string()),
        ("wall_seconds", format!("{wall_seconds:.3}")),
        ("instance_digests", digests.join(",")),
    ];
    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

/// Paths written by [`run_sweep_to_files`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutputs {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub meta: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the sweep and writes `<prefix>.csv`, `<prefix>.svg` and `<prefix>.meta`.
/// Nothing is written unless the sweep succeeds.
pub fn run_sweep_to_files(spec: &ExperimentSpec) -> Result<(SweepReport, SweepOutputs)> {
    let started = Instant::now();
    let report = run_sweep(spec)?;
    let wall = started.elapsed().as_secs_f64();
    let threads = if spec.threads == 0 { rayon::current_num_threads() } else { spec.threads };
    let outputs = SweepOutputs {
        csv: with_suffix(&spec.output_prefix, ".csv"),
        svg: with_suffix(&spec.output_prefix, ".svg"),
        meta: with_suffix(&spec.output_prefix, ".meta"),
    };
    write_csv(&report.rows, &outputs.csv)?;
    render_figure(&report.rows, spec.alpha, &outputs.svg)?;
    let meta = meta_string(spec, &report, threads, wall);
    fs::write(&outputs.meta, meta).map_err(|e| Error::io(&outputs.meta, e))?;
    Ok((report, outputs))
}

/// Spread of the per-instance minimal risk at one market size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub assets: usize,
    pub eps_mean: f64,
    /// Unbiased sample standard deviation across instances.
    pub eps_stddev: f64,
    pub samples_used: usize,
    pub failures: usize,
}

/// Measures how the instance-to-instance spread of the optimal risk changes
/// with `N` at fixed `α` and `τ`.
pub fn self_averaging_probe(
    alpha: f64,
    tau: f64,
    assets_list: &[usize],
    samples: usize,
    seed: u64,
    method: SweepMethod,
    threads: usize,
) -> Result<Vec<ProbeRow>> {
    if assets_list.is_empty() {
        return Err(Error::InvalidParameter("asset-count list is empty".into()));
    }
    if assets_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("asset counts must be strictly ascending".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    validate_tau_grid(&[tau])?;
    let markets: Vec<MarketConfig> = assets_list
        .iter()
        .map(|&n| MarketConfig::from_ratio(n, alpha, seed))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(markets.len());
    for market in markets {
        let cfg = SolverConfig::for_assets(market.assets());
        let results = solve_all(&market, samples, &[tau], method, &cfg, threads)?;
        let eps: Vec<f64> = results.iter().filter_map(|r| r.outcomes[0].map(|o| o.0)).collect();
        let failures = samples - eps.len();
        check_failures(tau, failures, samples)?;
        let (eps_mean, var) = mean_var(&eps);
        rows.push(ProbeRow {
            assets: market.assets(),
            eps_mean,
            eps_stddev: var.sqrt(),
            samples_used: eps.len(),
            failures,
        });
    }
    Ok(rows)
}
