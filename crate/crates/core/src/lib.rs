//! Minimal investment risk of mean-variance portfolios under a budget
//! constraint `sum w_i = N` and an investment-concentration constraint
//! `(1/N) sum w_i² = τ`, in a market of `N` assets observed over `p = αN`
//! i.i.d. Gaussian return scenarios.
//!
//! Three views of the same quantity are provided and cross-checked:
//!
//! * [`replica`]: large-`N` closed forms and the finite-`β` saddle-point system,
//!   together with the annealed ("operations research") baseline `ατ/2`;
//! * [`solver`]: per-instance solvers, a Lagrangian descent–ascent iteration and
//!   an exact eigendecomposition oracle;
//! * [`experiment`]: the Monte Carlo harness that averages per-instance optima
//!   over random markets and compares them with both predictions.

pub mod error;
pub mod experiment;
pub mod figure;
pub mod market;
pub mod replica;
pub mod solver;

pub use error::{Error, Result};
pub use experiment::{
    run_sweep, self_averaging_probe, write_csv, AggregateRow, ExperimentSpec, ProbeRow, SweepMethod,
    SweepReport,
};
pub use figure::render_figure;
pub use market::{
    concentration, covariance, generate_returns, investment_risk, CovarianceMatrix, MarketConfig,
    Portfolio, ReturnMatrix,
};
pub use replica::{
    budget_only, equality_constrained, lower_bound_constrained, or_baseline, risk_at_beta,
    saddle_fixed_point, shifted_form, upper_bound_constrained, Concentration, Prediction,
    PredictionMethod, Regime, SaddleOptions, SaddleState,
};
pub use solver::{
    descend, feasibility_report, gradients, lagrangian, secular_solve, FeasibilityReport,
    SolveMethod, SolveResult, SolverConfig, SpectralOracle,
};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
