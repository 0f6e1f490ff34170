//! Per-instance solvers for
//!
//! ```text
//! minimize ½ wᵀJw   subject to   sum w_i = N,   (1/N) sum w_i² = τ
//! ```
//!
//! [`descend`] runs gradient dynamics on the Lagrangian
//! `L = ½wᵀJw + k(N - wᵀe) - (θ/2)(wᵀw - Nτ)`, descending in `w` and
//! ascending in the multipliers. [`SpectralOracle`] solves the same problem
//! exactly from an eigendecomposition of `J` by bisecting the multiplier `θ`.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::market::{CovarianceMatrix, Portfolio};
use crate::fmt17;

/// Feasibility tolerance of the exact oracle, relative to `N` and `τ`.
pub const SECULAR_FEAS_TOL: f64 = 1e-6;
/// Feasibility tolerance of the descent iteration, relative to `N` and `τ`.
pub const DESCENT_FEAS_TOL: f64 = 1e-4;

/// The iteration is declared divergent once `Δ` exceeds this multiple of its first value.
const DIVERGENCE_FACTOR: f64 = 1e6;
const DELTA_TAIL: usize = 10;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialWeights {
    AllOnes,
    Given(DVector<f64>),
}

/// How the multipliers see the weight update within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOrder {
    /// All three gradients evaluated at `(w^s, k^s, θ^s)`.
    Simultaneous,
    /// `w` first; the multiplier gradients are evaluated at `w^{s+1}`.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eta_w: f64,
    pub eta_k: f64,
    pub eta_theta: f64,
    pub delta_tol: f64,
    pub max_iter: usize,
    pub init_w: InitialWeights,
    pub init_k: f64,
    pub init_theta: f64,
    pub order: UpdateOrder,
}

impl SolverConfig {
    /// The uniform setting: every step size 0.1, simultaneous
    /// updates, `w⁰ = e`, `k⁰ = θ⁰ = 1`, stop at `Δ < 1e-4`.
    ///
    /// The multiplier gradients scale like `N`, so this iteration is unstable
    /// once `0.01·N` exceeds the curvature of `J` along `e` (already at `N ≈ 10`
    /// for typical markets); [`SolverConfig::for_assets`] is the usable default.
    pub fn uniform_step() -> Self {
        Self {
            eta_w: 0.1,
            eta_k: 0.1,
            eta_theta: 0.1,
            delta_tol: 1e-4,
            max_iter: 500_000,
            init_w: InitialWeights::AllOnes,
            init_k: 1.0,
            init_theta: 1.0,
            order: UpdateOrder::Simultaneous,
        }
    }

    /// `η_w = 0.1` with the uniform initialization and stopping rule, but
    /// multiplier steps `η_k = η_θ = min(0.1, 2/N)` and sequential updates so
    /// the iteration contracts for any market size.
    pub fn for_assets(n: usize) -> Self {
        let eta = (2.0 / n.max(1) as f64).min(0.1);
        Self { eta_k: eta, eta_theta: eta, order: UpdateOrder::Sequential, ..Self::uniform_step() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_w", self.eta_w), ("eta_k", self.eta_k), ("eta_theta", self.eta_theta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta_tol.is_finite() && self.delta_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_tol must be positive, got {}",
                self.delta_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Warns when `η_w` times the Marchenko–Pastur edge `(1 + sqrt(tr J / N))²`
    /// reaches 1.5 (plain gradient steps on `J` need `η λ_max < 2`).
    fn warn_on_step_size(&self, j: &CovarianceMatrix) {
        let alpha_est = j.entries().trace() / j.dim() as f64;
        let lambda_max_est = (1.0 + alpha_est.max(0.0).sqrt()).powi(2);
        if self.eta_w * lambda_max_est >= 1.5 {
            warn!(
                "eta_w = {} with estimated lambda_max = {:.3}: the weight update may oscillate",
                self.eta_w, lambda_max_est
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Descent,
    Secular,
    /// `τ = 1` admits only `w = e`.
    ForcedEIS,
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMethod::Descent => "Descent",
            SolveMethod::Secular => "Secular",
            SolveMethod::ForcedEIS => "ForcedEIS",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub weights: Portfolio,
    pub k: f64,
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `H(w|X) / N`.
    pub risk_per_asset: f64,
    pub concentration: f64,
    pub method: SolveMethod,
    /// Last few `Δ` values of a descent run, oldest first.
    pub delta_tail: Vec<f64>,
}

impl SolveResult {
    fn from_weights(
        j: &CovarianceMatrix,
        w: DVector<f64>,
        k: f64,
        theta: f64,
        iterations: usize,
        converged: bool,
        method: SolveMethod,
    ) -> Result<Self> {
        let n = w.len() as f64;
        let risk = j.quadratic_risk(&w)?.max(0.0) / n;
        let weights = Portfolio::new(w)?;
        Ok(Self {
            concentration: weights.concentration(),
            weights,
            k,
            theta,
            iterations,
            converged,
            risk_per_asset: risk,
            method,
            delta_tail: Vec::new(),
        })
    }

    fn forced_eis(j: &CovarianceMatrix) -> Result<Self> {
        let n = j.dim();
        Self::from_weights(j, DVector::from_element(n, 1.0), 0.0, 0.0, 0, true, SolveMethod::ForcedEIS)
    }
}

fn check_dims(w: &DVector<f64>, j: &CovarianceMatrix) -> Result<()> {
    if w.len() != j.dim() {
        return Err(Error::DimensionMismatch { expected: j.dim(), got: w.len() });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 1.0 {
        return Err(Error::Infeasible { tau });
    }
    if !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("tau must be finite, got {tau}")));
    }
    Ok(())
}

pub fn lagrangian(w: &DVector<f64>, k: f64, theta: f64, j: &CovarianceMatrix, tau: f64) -> Result<f64> {
    check_dims(w, j)?;
    let n = w.len() as f64;
    let risk = j.quadratic_risk(w)?;
    Ok(risk + k * (n - w.sum()) - 0.5 * theta * (w.norm_squared() - n * tau))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `Jw - ke - θw`
    pub w: DVector<f64>,
    /// `N - wᵀe`
    pub k: f64,
    /// `-(wᵀw - Nτ)/2`
    pub theta: f64,
}

pub fn gradients(w: &DVector<f64>, k: f64, theta: f64, j: &CovarianceMatrix, tau: f64) -> Result<Gradients> {
    check_dims(w, j)?;
    let n = w.len() as f64;
    let mut grad_w = j.entries() * w;
    grad_w.axpy(-theta, w, 1.0);
    grad_w.add_scalar_mut(-k);
    Ok(Gradients {
        w: grad_w,
        k: n - w.sum(),
        theta: -0.5 * (w.norm_squared() - n * tau),
    })
}

/// `max_i |((J - θI)w - ke)_i|`.
pub fn kkt_residual(w: &DVector<f64>, k: f64, theta: f64, j: &CovarianceMatrix) -> Result<f64> {
    Ok(gradients(w, k, theta, j, 1.0)?.w.amax())
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub delta: f64,
    pub lagrangian: f64,
    pub budget_resid: f64,
    pub conc_resid: f64,
}

pub const TRACE_HEADER: &str = "iter,delta,lagrangian,budget_resid,conc_resid";

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            fmt17(r.delta),
            fmt17(r.lagrangian),
            fmt17(r.budget_resid),
            fmt17(r.conc_resid)
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn descend(j: &CovarianceMatrix, tau: f64, cfg: &SolverConfig) -> Result<SolveResult> {
    run_descent(j, tau, cfg, None)
}

/// [`descend`], appending one [`TraceRow`] per iteration to `trace`.
pub fn descend_traced(
    j: &CovarianceMatrix,
    tau: f64,
    cfg: &SolverConfig,
    trace: &mut Vec<TraceRow>,
) -> Result<SolveResult> {
    run_descent(j, tau, cfg, Some(trace))
}

fn run_descent(
    j: &CovarianceMatrix,
    tau: f64,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<SolveResult> {
    check_tau(tau)?;
    cfg.validate()?;
    if tau == 1.0 {
        return SolveResult::forced_eis(j);
    }
    cfg.warn_on_step_size(j);

    let n = j.dim();
    let nf = n as f64;
    let mut w = match &cfg.init_w {
        InitialWeights::AllOnes => DVector::from_element(n, 1.0),
        InitialWeights::Given(w0) => {
            check_dims(w0, j)?;
            w0.clone()
        }
    };
    let (mut k, mut theta) = (cfg.init_k, cfg.init_theta);
    let mut history: Vec<f64> = Vec::with_capacity(DELTA_TAIL + 1);
    let mut first_delta = None;
    let mut jw = DVector::zeros(n);
    let mut next = DVector::zeros(n);

    for s in 1..=cfg.max_iter {
        jw.gemv(1.0, j.entries(), &w, 0.0);
        // w^{s+1} = w - η_w (Jw - ke - θw)
        next.copy_from(&w);
        next.axpy(-cfg.eta_w, &jw, 1.0 + cfg.eta_w * theta);
        next.add_scalar_mut(cfg.eta_w * k);

        let seen = match cfg.order {
            UpdateOrder::Simultaneous => &w,
            UpdateOrder::Sequential => &next,
        };
        let k_next = k + cfg.eta_k * (nf - seen.sum());
        let theta_next = theta - cfg.eta_theta * 0.5 * (seen.norm_squared() - nf * tau);

        let step: f64 = next.iter().zip(w.iter()).map(|(a, b)| (a - b).abs()).sum();
        let delta = step + (k_next - k).abs() + (theta_next - theta).abs();

        std::mem::swap(&mut w, &mut next);
        k = k_next;
        theta = theta_next;

        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                iter: s,
                delta,
                lagrangian: lagrangian(&w, k, theta, j, tau)?,
                budget_resid: (w.sum() - nf).abs(),
                conc_resid: (w.norm_squared() / nf - tau).abs(),
            });
        }

        let limit = DIVERGENCE_FACTOR * *first_delta.get_or_insert(delta.max(cfg.delta_tol));
        if !delta.is_finite() || delta > limit {
            return Err(Error::Diverged { iteration: s, delta });
        }
        if history.len() == DELTA_TAIL {
            history.remove(0);
        }
        history.push(delta);

        if delta < cfg.delta_tol {
            let mut out = SolveResult::from_weights(j, w, k, theta, s, true, SolveMethod::Descent)?;
            out.delta_tail = tail(&history);
            return Ok(out);
        }
    }

    let mut out = SolveResult::from_weights(j, w, k, theta, cfg.max_iter, false, SolveMethod::Descent)?;
    out.delta_tail = tail(&history);
    Ok(out)
}

fn tail(history: &[f64]) -> Vec<f64> {
    history[history.len().saturating_sub(DELTA_TAIL)..].to_vec()
}

/// Exact solver built on one eigendecomposition, reusable across `τ`.
///
/// Writing `w = e + z` with `z ⊥ e` turns the problem into a trust-region
/// subproblem on the complement of `e`: minimize `gᵀz + ½zᵀAz` subject to
/// `‖z‖² = N(τ - 1)`, where `A` is `J` restricted to that complement and
/// `g` the restriction of `Je`. In the eigenbasis of `A` the stationary points
/// are `z_i = -g_i/(μ_i - θ)`, and the global minimizer is the one with
/// `θ ≤ μ_min`. On `(-∞, μ_min)` the squared norm `Σ g_i²/(μ_i - θ)²` rises
/// monotonically, so `θ` is found by bisection.
///
/// When `g` has no component along the bottom eigenspace of `A` (for instance
/// the null space of a singular `J` when `p < N`), the norm stays bounded as
/// `θ → μ_min`. If the target is beyond that bound the minimizer sits at
/// `θ = μ_min` and the missing norm is supplied by a bottom eigenvector.
#[derive(Debug, Clone)]
pub struct SpectralOracle {
    j: CovarianceMatrix,
    /// Eigenvalues of the restriction, ascending.
    mu: Vec<f64>,
    /// Matching eigenvectors, expressed in asset coordinates (`N × (N-1)`).
    basis: DMatrix<f64>,
    /// Components of `Je` along `basis`; zeroed on the bottom eigenspace in the hard case.
    g: Vec<f64>,
    bottom: usize,
    hard: bool,
}

impl SpectralOracle {
    pub fn new(j: &CovarianceMatrix) -> Self {
        let n = j.dim();
        let nf = n as f64;

        // Householder reflector taking e/√N to -e₁; its last N-1 columns span e⊥.
        let mut v = DVector::from_element(n, 1.0 / nf.sqrt());
        v[0] += 1.0;
        let vv = v.norm_squared();
        let mut h = DMatrix::identity(n, n);
        h.ger(-2.0 / vv, &v, &v, 1.0);
        let b = h.columns(1, n - 1).into_owned();

        let a = b.transpose() * j.entries() * &b;
        let a = 0.5 * (&a + a.transpose());
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..n - 1).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut local = DMatrix::zeros(n - 1, n - 1);
        for (dst, &src) in order.iter().enumerate() {
            local.set_column(dst, &eig.eigenvectors.column(src));
        }
        let basis = b * local;

        let je = j.entries() * DVector::from_element(n, 1.0);
        let mut g: Vec<f64> = basis.tr_mul(&je).iter().copied().collect();

        let scale = j.norm_inf().max(1.0);
        let cluster = 1e-9 * mu.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let bottom = mu.iter().take_while(|&&m| m - mu[0] <= cluster).count();
        let bottom_norm = g[..bottom].iter().map(|x| x * x).sum::<f64>().sqrt();
        let hard = bottom_norm <= 1e-10 * scale * nf.sqrt();
        if hard {
            g[..bottom].iter_mut().for_each(|x| *x = 0.0);
        }
        Self { j: j.clone(), mu, basis, g, bottom, hard }
    }

    /// Smallest eigenvalue of `J` on the complement of `e`; the optimal
    /// multiplier `θ` never exceeds it.
    pub fn lambda_min(&self) -> f64 {
        self.mu[0]
    }

    /// Eigenvalues of `J` restricted to the complement of `e`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.mu
    }

    /// Dimension of the (numerically) lowest eigenspace of the restriction.
    pub fn bottom_multiplicity(&self) -> usize {
        self.bottom
    }

    fn n(&self) -> usize {
        self.basis.nrows()
    }

    fn coords(&self, theta: f64) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.g)
            .map(|(&m, &g)| if g == 0.0 { 0.0 } else { -g / (m - theta) })
            .collect()
    }

    fn offset_norm_sq(&self, theta: f64) -> f64 {
        self.coords(theta).iter().map(|z| z * z).sum()
    }

    /// Concentration `1 + ‖z(θ)‖²/N` of the stationary point at `θ < λ_min`.
    pub fn concentration_at(&self, theta: f64) -> f64 {
        1.0 + self.offset_norm_sq(theta) / self.n() as f64
    }

    /// Exact solve at concentration `tau`.
    pub fn solve(&self, tau: f64) -> Result<SolveResult> {
        check_tau(tau)?;
        if tau == 1.0 {
            return SolveResult::forced_eis(&self.j);
        }
        let target = self.n() as f64 * (tau - 1.0);
        let top = self.lambda_min();
        if self.hard && self.offset_norm_sq(top) <= target {
            return self.at_bottom(tau, target);
        }

        let mut width = self.j.norm_inf().max(1.0);
        let mut lo = top - width;
        let mut expansions = 0;
        while self.offset_norm_sq(lo) > target {
            width *= 2.0;
            lo = top - width;
            expansions += 1;
            if expansions > 2000 || !lo.is_finite() {
                return Err(Error::NoInteriorRoot { tau, supremum: f64::NAN });
            }
        }
        let mut hi = top;
        let mut steps = 0;
        while steps < MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.offset_norm_sq(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            steps += 1;
        }
        // `hi` may still be the pole itself; `lo` is always a finite stationary point.
        let theta = if hi < top
            && (self.offset_norm_sq(hi) - target).abs() < (self.offset_norm_sq(lo) - target).abs()
        {
            hi
        } else {
            lo
        };
        let mut z = DVector::from_vec(self.coords(theta));
        // Remove the residual bisection error by rescaling the offset.
        let norm = z.norm();
        if norm > 0.0 {
            z *= target.sqrt() / norm;
        }
        self.finish(z, theta, steps)
    }

    /// Hard case: `θ = μ_min`, remaining norm along the first bottom eigenvector.
    fn at_bottom(&self, tau: f64, target: f64) -> Result<SolveResult> {
        let theta = self.lambda_min();
        let mut z = DVector::from_vec(self.coords(theta));
        let slack = target - z.norm_squared();
        if slack < 0.0 {
            return Err(Error::NoInteriorRoot { tau, supremum: self.concentration_at(theta) });
        }
        z[0] += slack.sqrt();
        self.finish(z, theta, 0)
    }

    fn finish(&self, z: DVector<f64>, theta: f64, steps: usize) -> Result<SolveResult> {
        let n = self.n() as f64;
        let mut w = &self.basis * z;
        w.add_scalar_mut(1.0);
        let jw = self.j.entries() * &w;
        let k = (jw.sum() - theta * w.sum()) / n;
        SolveResult::from_weights(&self.j, w, k, theta, steps, true, SolveMethod::Secular)
    }
}

/// Exact solve via [`SpectralOracle`]; prefer building the oracle once when
/// solving the same matrix at several `τ`.
pub fn secular_solve(j: &CovarianceMatrix, tau: f64) -> Result<SolveResult> {
    SpectralOracle::new(j).solve(tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub budget_residual: f64,
    pub concentration_residual: f64,
    pub tol: f64,
    /// Both residuals within `tol·N` and `tol·τ` respectively.
    pub pass: bool,
}

pub fn feasibility_report(w: &Portfolio, tau: f64, tol: f64) -> FeasibilityReport {
    let n = w.len() as f64;
    let budget_residual = w.budget_residual();
    let concentration_residual = (w.concentration() - tau).abs();
    FeasibilityReport {
        budget_residual,
        concentration_residual,
        tol,
        pass: budget_residual <= tol * n && concentration_residual <= tol * tau,
    }
}
