//! Analytic predictions in the large-`N` limit.
//!
//! Closed forms for the minimal risk per asset `ε` and the concentration
//! `q_w` under the budget constraint alone, with an equality, lower-bound or
//! upper-bound concentration constraint, and for the annealed (pre-averaged)
//! baseline. The finite-`β` replica-symmetric saddle-point system lives at the
//! bottom of the module.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concentration {
    Exact(f64),
    /// Any value at or above the bound attains the minimal risk.
    AtLeast(f64),
    Unbounded,
}

impl Concentration {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Concentration::Exact(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Concentration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Concentration::Exact(v) => f.write_str(&crate::fmt17(v)),
            Concentration::AtLeast(v) => write!(f, ">={}", crate::fmt17(v)),
            Concentration::Unbounded => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    RiskPositive,
    /// The minimizer is not unique and the minimal risk vanishes.
    RiskZeroDegenerate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::RiskPositive => "RiskPositive",
            Regime::RiskZeroDegenerate => "RiskZeroDegenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMethod {
    ReplicaBudgetOnly,
    ReplicaEquality,
    ReplicaLowerBound,
    ReplicaUpperBound,
    AnnealedOR,
}

impl fmt::Display for PredictionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMethod::ReplicaBudgetOnly => "ReplicaBudgetOnly",
            PredictionMethod::ReplicaEquality => "ReplicaEquality",
            PredictionMethod::ReplicaLowerBound => "ReplicaLowerBound",
            PredictionMethod::ReplicaUpperBound => "ReplicaUpperBound",
            PredictionMethod::AnnealedOR => "AnnealedOR",
        })
    }
}

/// Minimal risk per asset and concentration predicted by one closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub eps: f64,
    pub q_w: Concentration,
    /// Zero in the `β → ∞` limit of the positive-risk regime; `τ - 1/(1-α)` when degenerate.
    pub chi_w: f64,
    /// In the degenerate regime, the concentration `1/(1-α)` of the replica
    /// minimizer, reported next to the constraint value carried in `q_w`.
    pub degenerate_q_w: Option<f64>,
    pub regime: Regime,
    pub method: PredictionMethod,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
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

/// `α ≥ 1 - 1/τ`: the risk-positive side, boundary included.
fn positive_regime(alpha: f64, tau: f64) -> bool {
    alpha >= 1.0 - 1.0 / tau
}

/// `(√(ατ) - √(τ-1))² / 2`, the positive-regime minimal risk at concentration `τ`.
fn factored_risk(alpha: f64, tau: f64) -> f64 {
    let d = (alpha * tau).sqrt() - (tau - 1.0).sqrt();
    0.5 * d * d
}

/// The concentration `α/(α-1)` reached when only the budget is constrained (`α > 1`).
pub fn unconstrained_concentration(alpha: f64) -> Option<f64> {
    (alpha > 1.0).then(|| alpha / (alpha - 1.0))
}

pub fn budget_only(alpha: f64) -> Result<Prediction> {
    check_alpha(alpha)?;
    let (eps, q_w, regime) = match unconstrained_concentration(alpha) {
        Some(q) => (0.5 * (alpha - 1.0), Concentration::Exact(q), Regime::RiskPositive),
        None => (0.0, Concentration::Unbounded, Regime::RiskZeroDegenerate),
    };
    Ok(Prediction {
        eps,
        q_w,
        chi_w: 0.0,
        degenerate_q_w: None,
        regime,
        method: PredictionMethod::ReplicaBudgetOnly,
    })
}

pub fn equality_constrained(alpha: f64, tau: f64) -> Result<Prediction> {
    check_alpha(alpha)?;
    check_tau(tau)?;
    let method = PredictionMethod::ReplicaEquality;
    if positive_regime(alpha, tau) {
        return Ok(Prediction {
            eps: factored_risk(alpha, tau),
            q_w: Concentration::Exact(tau),
            chi_w: 0.0,
            degenerate_q_w: None,
            regime: Regime::RiskPositive,
            method,
        });
    }
    // Here α < 1 - 1/τ < 1.
    let degenerate = 1.0 / (1.0 - alpha);
    Ok(Prediction {
        eps: 0.0,
        q_w: Concentration::Exact(tau),
        chi_w: tau - degenerate,
        degenerate_q_w: Some(degenerate),
        regime: Regime::RiskZeroDegenerate,
        method,
    })
}

/// `(α-1)/2 + (√(α(τ-1)) - √τ)²/2`: the same minimal risk written as the
/// budget-only value plus a non-negative penalty.
pub fn shifted_form(alpha: f64, tau: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_tau(tau)?;
    if !positive_regime(alpha, tau) {
        return Err(Error::InvalidParameter(format!(
            "shifted form needs alpha >= 1 - 1/tau (alpha = {alpha}, tau = {tau})"
        )));
    }
    let d = (alpha * (tau - 1.0)).sqrt() - tau.sqrt();
    Ok(0.5 * (alpha - 1.0) + 0.5 * d * d)
}

/// Annealed baseline `ε = ατ/2`, `q_w = τ`; `τ = 1` is the budget-only baseline.
pub fn or_baseline(alpha: f64, tau: f64) -> Result<Prediction> {
    check_alpha(alpha)?;
    check_tau(tau)?;
    Ok(Prediction {
        eps: 0.5 * alpha * tau,
        q_w: Concentration::Exact(tau),
        chi_w: 0.0,
        degenerate_q_w: None,
        regime: Regime::RiskPositive,
        method: PredictionMethod::AnnealedOR,
    })
}

/// Minimal risk when the concentration is only bounded below: `q_w ≥ τ0`.
pub fn lower_bound_constrained(alpha: f64, tau0: f64) -> Result<Prediction> {
    check_alpha(alpha)?;
    check_tau(tau0)?;
    let method = PredictionMethod::ReplicaLowerBound;
    match unconstrained_concentration(alpha) {
        Some(q_star) if tau0 < q_star => Ok(Prediction {
            eps: 0.5 * (alpha - 1.0),
            q_w: Concentration::Exact(q_star),
            chi_w: 0.0,
            degenerate_q_w: None,
            regime: Regime::RiskPositive,
            method,
        }),
        Some(_) => Ok(Prediction {
            eps: factored_risk(alpha, tau0),
            q_w: Concentration::Exact(tau0),
            chi_w: 0.0,
            degenerate_q_w: None,
            regime: Regime::RiskPositive,
            method,
        }),
        None => {
            // Zero risk at any q_w ≥ 1/(1-α); at α = 1 the infimum is not attained.
            let q_w = if alpha < 1.0 {
                Concentration::AtLeast(tau0.max(1.0 / (1.0 - alpha)))
            } else {
                Concentration::Unbounded
            };
            Ok(Prediction {
                eps: 0.0,
                q_w,
                chi_w: 0.0,
                degenerate_q_w: None,
                regime: Regime::RiskZeroDegenerate,
                method,
            })
        }
    }
}

/// Minimal risk when the concentration is only bounded above: `q_w ≤ τ0`.
/// In the zero-risk branch the free slack is fixed at zero, giving `q_w = 1/(1-α)`.
pub fn upper_bound_constrained(alpha: f64, tau0: f64) -> Result<Prediction> {
    check_alpha(alpha)?;
    check_tau(tau0)?;
    let method = PredictionMethod::ReplicaUpperBound;
    let at_bound = Prediction {
        eps: factored_risk(alpha, tau0),
        q_w: Concentration::Exact(tau0),
        chi_w: 0.0,
        degenerate_q_w: None,
        regime: Regime::RiskPositive,
        method,
    };
    if alpha > 1.0 {
        let q_star = alpha / (alpha - 1.0);
        if tau0 < q_star {
            return Ok(at_bound);
        }
        return Ok(Prediction {
            eps: 0.5 * (alpha - 1.0),
            q_w: Concentration::Exact(q_star),
            ..at_bound
        });
    }
    // τ0 < 1/(1-α), written without dividing by zero at α = 1.
    if tau0 * (1.0 - alpha) < 1.0 {
        return Ok(at_bound);
    }
    Ok(Prediction {
        eps: 0.0,
        q_w: Concentration::Exact(1.0 / (1.0 - alpha)),
        regime: Regime::RiskZeroDegenerate,
        ..at_bound
    })
}

// ---------------------------------------------------------------------------
// Finite-β saddle point
// ---------------------------------------------------------------------------

/// Replica-symmetric order parameters at inverse temperature `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleState {
    pub chi_w: f64,
    pub q_w: f64,
    pub chi_tilde: f64,
    pub q_tilde: f64,
    /// Conjugate of the budget constraint.
    pub k: f64,
    /// Conjugate of the concentration constraint.
    pub theta: f64,
    pub beta: f64,
    /// Bracketing steps taken by the solver.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000 }
    }
}

fn rel_residual(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.abs().max(lhs.abs()).max(rhs.abs()).max(1.0)
}

/// Scaled residuals of the six stationarity conditions, in the order
/// `k = χ̃ - θ`, `θ = χ̃ - 1/χ`, `χ = τ - q`, `q = χ²q̃ + 1`,
/// `χ̃ = αβ/(1+βχ)`, `q̃ = χ̃² q / α`.
///
/// Each residual is divided by the largest magnitude among the terms of its
/// equation (at least 1), since `χ̃` and `1/χ` grow like `β`.
pub fn saddle_residuals(s: &SaddleState, alpha: f64, tau: f64) -> [f64; 6] {
    let inv_chi = 1.0 / s.chi_w;
    let chi_q = s.chi_w * s.chi_w * s.q_tilde;
    let one_beta_chi = 1.0 + s.beta * s.chi_w;
    let chi_tilde_sq_q = s.chi_tilde * s.chi_tilde * s.q_w / alpha;
    [
        rel_residual(s.k, s.chi_tilde - s.theta, s.chi_tilde.max(s.theta.abs())),
        rel_residual(s.theta, s.chi_tilde - inv_chi, s.chi_tilde.max(inv_chi.abs())),
        rel_residual(s.chi_w, tau - s.q_w, tau.max(s.q_w)),
        rel_residual(s.q_w, chi_q + 1.0, chi_q),
        rel_residual(s.chi_tilde, alpha * s.beta / one_beta_chi, 0.0),
        rel_residual(s.q_tilde, chi_tilde_sq_q, 0.0),
    ]
}

pub fn max_saddle_residual(s: &SaddleState, alpha: f64, tau: f64) -> f64 {
    saddle_residuals(s, alpha, tau).into_iter().fold(0.0, f64::max)
}

/// State with `g = βχ_w`; the other five parameters follow from the equations.
fn state_from_g(g: f64, alpha: f64, tau: f64, beta: f64, iterations: usize) -> SaddleState {
    let chi_w = g / beta;
    let q_w = tau - chi_w;
    let chi_tilde = alpha * beta / (1.0 + g);
    let q_tilde = chi_tilde * chi_tilde * q_w / alpha;
    let theta = chi_tilde - 1.0 / chi_w;
    let k = chi_tilde - theta;
    SaddleState { chi_w, q_w, chi_tilde, q_tilde, k, theta, beta, iterations }
}

/// Remaining condition `q = χ²q̃ + 1` after substituting the other five, as a
/// function of `g = βχ_w`: `τ - g/β - 1/(1 - α r²)` with `r = g/(1+g)`.
/// Strictly decreasing in `g`.
fn reduced_condition(g: f64, alpha: f64, tau: f64, beta: f64) -> f64 {
    let r = g / (1.0 + g);
    tau - g / beta - 1.0 / (1.0 - alpha * r * r)
}

/// Solves the saddle-point equations at inverse temperature `beta`.
///
/// Five equations are eliminated in closed form, leaving a monotone scalar
/// condition in `g = βχ_w` that is bracketed on `(0, g_max)` and bisected; the
/// state built from the root is then checked against all six residuals.
pub fn saddle_fixed_point(
    alpha: f64,
    tau: f64,
    beta: f64,
    opts: &SaddleOptions,
) -> Result<SaddleState> {
    saddle_from_guess(alpha, tau, beta, opts, None)
}

/// Like [`saddle_fixed_point`], but narrows the initial bracket around a
/// previous state (typically the neighbouring `β` of a sweep).
pub fn saddle_warm_start(
    alpha: f64,
    tau: f64,
    beta: f64,
    opts: &SaddleOptions,
    previous: &SaddleState,
) -> Result<SaddleState> {
    saddle_from_guess(alpha, tau, beta, opts, Some(previous))
}

fn saddle_from_guess(
    alpha: f64,
    tau: f64,
    beta: f64,
    opts: &SaddleOptions,
    previous: Option<&SaddleState>,
) -> Result<SaddleState> {
    check_alpha(alpha)?;
    if !(tau.is_finite() && tau > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "saddle point needs tau > 1 (chi_w degenerates at tau = 1), got {tau}"
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }

    // q_w = 1/(1 - α r²) ≥ 1 keeps χ_w ≤ τ - 1; for α > 1 also r < 1/√α.
    let mut hi = beta * (tau - 1.0);
    if alpha > 1.0 {
        hi = hi.min(1.0 / (alpha.sqrt() - 1.0));
    }
    let mut lo = 0.0;
    let f = |g: f64| reduced_condition(g, alpha, tau, beta);

    // The previous root moves with β; try a bracket around its r = g/(1+g).
    if let Some(prev) = previous {
        let g0 = prev.beta * prev.chi_w;
        for widen in [1.0 + 1e-3, 1.1, 2.0] {
            let (a, b) = (g0 / widen, (g0 * widen).min(hi));
            if a > lo && a < b && f(a) > 0.0 && f(b) < 0.0 {
                lo = a;
                hi = b;
                break;
            }
        }
    }

    let mut iterations = 0;
    while iterations < opts.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
            break;
        }
        iterations += 1;
    }

    let candidates = [lo, hi, 0.5 * (lo + hi)];
    let best = candidates
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| state_from_g(g, alpha, tau, beta, iterations))
        .filter(|s| s.chi_w > 0.0 && s.chi_tilde - s.theta > 0.0 && s.q_w.is_finite())
        .min_by(|a, b| {
            max_saddle_residual(a, alpha, tau).total_cmp(&max_saddle_residual(b, alpha, tau))
        });

    match best {
        Some(s) if max_saddle_residual(&s, alpha, tau) <= opts.tol => Ok(s),
        Some(s) => Err(Error::SaddleNonConvergence {
            iterations,
            residual: max_saddle_residual(&s, alpha, tau),
        }),
        None => Err(Error::SaddleNonConvergence { iterations, residual: f64::INFINITY }),
    }
}

/// Solves along a list of inverse temperatures, warm-starting each from the last.
pub fn saddle_beta_sweep(
    alpha: f64,
    tau: f64,
    betas: &[f64],
    opts: &SaddleOptions,
) -> Result<Vec<SaddleState>> {
    let mut out: Vec<SaddleState> = Vec::with_capacity(betas.len());
    for &beta in betas {
        let state = match out.last() {
            Some(prev) => saddle_warm_start(alpha, tau, beta, opts, prev)?,
            None => saddle_fixed_point(alpha, tau, beta, opts)?,
        };
        out.push(state);
    }
    Ok(out)
}

/// Finite-`β` risk per asset, `-∂φ/∂β` at the saddle point:
/// `αχ/(2(1+βχ)) + αq/(2(1+βχ)²)`.
pub fn risk_at_beta(state: &SaddleState, alpha: f64) -> f64 {
    let d = 1.0 + state.beta * state.chi_w;
    0.5 * alpha * state.chi_w / d + 0.5 * alpha * state.q_w / (d * d)
}

/// Large-`β` asymptote of `χ_w`: `1/(β(√(ατ/(τ-1)) - 1))` when risk is
/// positive, `τ - 1/(1-α)` otherwise.
pub fn asymptotic_chi_w(alpha: f64, tau: f64, beta: f64) -> f64 {
    if positive_regime(alpha, tau) {
        1.0 / (beta * ((alpha * tau / (tau - 1.0)).sqrt() - 1.0))
    } else {
        tau - 1.0 / (1.0 - alpha)
    }
}
