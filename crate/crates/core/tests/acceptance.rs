//! End-to-end acceptance checks. Each test prints a single `PASS`/`FAIL` line
//! with the worst observed margin, then asserts.
//!
//! Regenerate the golden sweep fixture with `MINRISK_BLESS=1 cargo test --test acceptance`.

use std::path::PathBuf;

use minrisk::experiment::csv_string;
use minrisk::replica::{max_saddle_residual, saddle_residuals};
use minrisk::solver::{feasibility_report, DESCENT_FEAS_TOL, SECULAR_FEAS_TOL};
use minrisk::{
    covariance, descend, equality_constrained, generate_returns, lower_bound_constrained,
    or_baseline, risk_at_beta, run_sweep, saddle_fixed_point, secular_solve, self_averaging_probe,
    shifted_form, upper_bound_constrained, ExperimentSpec, MarketConfig, Regime, SaddleOptions,
    SolverConfig, SweepMethod,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{verdict}] {name}: {detail}");
}

fn desk_sweep() -> minrisk::SweepReport {
    let spec = ExperimentSpec::desk_default();
    assert_eq!(spec.assets, 200);
    assert_eq!(spec.alpha, 2.0);
    assert_eq!(spec.samples, 50);
    assert_eq!(spec.method, SweepMethod::Secular);
    run_sweep(&spec).expect("desk sweep runs")
}

fn desk_tolerance(eps_stderr: f64, eps_replica: f64) -> f64 {
    (3.0 * eps_stderr).max(0.02 * eps_replica + 0.005)
}

#[test]
fn criterion_1_desk_scale_curve() {
    let rep = desk_sweep();
    let expected_grid: Vec<f64> = (0..9).map(|i| 1.0 + 0.25 * i as f64).collect();
    let grid: Vec<f64> = rep.rows.iter().map(|r| r.tau).collect();
    let mut pass = grid == expected_grid;
    let mut worst = f64::NEG_INFINITY;
    for r in &rep.rows {
        let replica = equality_constrained(2.0, r.tau).unwrap().eps;
        let gap = (r.eps_mean - replica).abs();
        let tol = desk_tolerance(r.eps_stderr, replica);
        worst = worst.max(gap / tol);
        pass &= r.samples_used > 0 && gap <= tol && (r.eps_replica - replica).abs() <= 1e-15;
    }
    report(1, "desk-scale sweep tracks the replica curve", pass, &format!("worst gap/tolerance = {worst:.3}"));
    assert!(pass);
}

#[test]
fn criterion_2_annealed_baseline_dominates() {
    let rep = desk_sweep();
    let mut pass = true;
    let mut worst_margin = f64::INFINITY;
    for r in &rep.rows {
        let or = or_baseline(2.0, r.tau).unwrap().eps;
        pass &= (or - r.tau).abs() <= 1e-15 && (r.eps_or - or).abs() <= 1e-15;
        if r.tau >= 1.25 {
            let margin = or - (r.eps_mean + 3.0 * r.eps_stderr);
            worst_margin = worst_margin.min(margin);
            pass &= margin > 0.0;
        } else {
            let tol = desk_tolerance(r.eps_stderr, r.eps_replica);
            pass &= (r.eps_mean - 1.0).abs() <= tol
                && (r.eps_replica - 1.0).abs() <= tol
                && (r.eps_or - 1.0).abs() <= tol;
        }
    }
    report(2, "annealed baseline overestimates the quenched risk", pass, &format!("smallest margin = {worst_margin:.4}"));
    assert!(pass);
}

/// The twenty instances cycle through every (p, τ) pair, each on its own substream.
fn cross_validation_cases() -> Vec<(usize, f64, u64)> {
    let ps = [25usize, 100];
    let taus = [1.5, 2.0, 3.0];
    (0..20u64).map(|i| (ps[i as usize % 2], taus[i as usize % 3], i)).collect()
}

#[test]
fn criterion_3_descent_matches_secular() {
    let n = 50;
    let cfg = SolverConfig::for_assets(n);
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for (p, tau, index) in cross_validation_cases() {
        let market = MarketConfig::new(n, p, 2024).unwrap();
        let j = covariance(&generate_returns(&market, index));
        let exact = secular_solve(&j, tau).unwrap();
        let Ok(d) = descend(&j, tau, &cfg) else {
            pass = false;
            lines.push(format!("p={p} tau={tau} sample={index}: descent diverged"));
            continue;
        };
        let rel = (d.risk_per_asset - exact.risk_per_asset).abs() / (1.0 + exact.risk_per_asset);
        worst = worst.max(rel);
        let feasible = feasibility_report(&d.weights, tau, DESCENT_FEAS_TOL).pass
            && feasibility_report(&exact.weights, tau, SECULAR_FEAS_TOL).pass;
        if !(d.converged && feasible && rel <= 1e-6) {
            pass = false;
            lines.push(format!(
                "p={p} tau={tau} sample={index}: converged={} feasible={feasible} rel={rel:.3e}",
                d.converged
            ));
        }
    }
    for l in &lines {
        println!("  {l}");
    }
    report(3, "descent agrees with the eigendecomposition oracle", pass, &format!("worst relative gap = {worst:.3e} (target 1e-6)"));
    assert!(pass);
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-9 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Fine steps near `lo`, then geometric steps out to `hi`, where the risk is flat.
fn oracle_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (0..=10_000).map(|i| lo + 1e-3 * i as f64).take_while(|t| *t <= hi).collect();
    let mut t = lo + 10.0;
    while t < hi {
        t *= 1.001;
        out.push(t.min(hi));
    }
    out
}

fn eps(alpha: f64, tau: f64) -> f64 {
    equality_constrained(alpha, tau).unwrap().eps
}

#[test]
fn criterion_4_closed_form_identities() {
    let alphas: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    let taus: Vec<f64> = (0..50).map(|j| 1.0 + 9.0 * j as f64 / 49.0).collect();

    let mut identity_gap = 0.0f64;
    let mut negative = 0usize;
    let mut lower_gap = 0.0f64;
    let mut upper_gap = 0.0f64;
    for &a in &alphas {
        for &t in &taus {
            let p = equality_constrained(a, t).unwrap();
            if p.eps < 0.0 {
                negative += 1;
            }
            let factored = 0.5 * ((a * t).sqrt() - (t - 1.0).sqrt()).powi(2);
            if factored < 0.0 {
                negative += 1;
            }
            // The shifted form only describes the positive-risk branch.
            match (p.regime, shifted_form(a, t)) {
                (Regime::RiskPositive, Ok(shifted)) => {
                    identity_gap = identity_gap.max((shifted - p.eps).abs()).max((shifted - factored).abs());
                }
                (Regime::RiskZeroDegenerate, Err(_)) => identity_gap = identity_gap.max(p.eps.abs()),
                _ => identity_gap = f64::INFINITY,
            }

            let lower_oracle = oracle_grid(t, 1000.0).into_iter().map(|s| eps(a, s)).fold(f64::INFINITY, f64::min);
            lower_gap = lower_gap.max((lower_bound_constrained(a, t).unwrap().eps - lower_oracle).abs());
            let upper_oracle = (0..)
                .map(|i| 1.0 + 1e-3 * i as f64)
                .take_while(|s| *s <= t)
                .chain([t])
                .map(|s| eps(a, s))
                .fold(f64::INFINITY, f64::min);
            upper_gap = upper_gap.max((upper_bound_constrained(a, t).unwrap().eps - upper_oracle).abs());
        }
    }

    let mut minimum_gap = 0.0f64;
    for a in [1.5, 2.0, 3.0] {
        let arg = golden_section(|t| eps(a, t), 1.0, 20.0);
        minimum_gap = minimum_gap.max((eps(a, arg) - (a - 1.0) / 2.0).abs());
        minimum_gap = minimum_gap.max((eps(a, a / (a - 1.0)) - (a - 1.0) / 2.0).abs());
        minimum_gap = minimum_gap.max((arg - a / (a - 1.0)).abs() * 1e-3);
    }

    let pass = identity_gap <= 1e-12 && negative == 0 && minimum_gap <= 1e-6 && lower_gap <= 1e-3 && upper_gap <= 1e-3;
    report(
        4,
        "closed-form identities and bound oracles",
        pass,
        &format!(
            "shifted gap {identity_gap:.2e}, negatives {negative}, minimum gap {minimum_gap:.2e}, lower gap {lower_gap:.2e}, upper gap {upper_gap:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_saddle_point_limit() {
    let opts = SaddleOptions::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (a, t) in [(2.0, 2.0), (2.0, 3.0), (0.5, 4.0)] {
        let s = saddle_fixed_point(a, t, 1e6, &opts).unwrap();
        let res = max_saddle_residual(&s, a, t);
        let sum = (s.chi_w + s.q_w - t).abs();
        let risk = (risk_at_beta(&s, a) - eps(a, t)).abs();
        pass &= res <= 1e-10 && sum <= 1e-9 && risk <= 1e-4 && saddle_residuals(&s, a, t).iter().all(|r| r.is_finite());
        detail.push(format!("({a},{t}): res {res:.1e} sum {sum:.1e} risk {risk:.1e}"));
    }
    report(5, "saddle point at large beta", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_zero_risk_regime() {
    let market = MarketConfig::new(100, 50, 7).unwrap();
    let j = covariance(&generate_returns(&market, 0));
    let d = descend(&j, 3.0, &SolverConfig::for_assets(100)).unwrap();
    let p = equality_constrained(0.5, 3.0).unwrap();
    let pass = d.converged
        && d.risk_per_asset <= 1e-3
        && p.eps == 0.0
        && p.regime == Regime::RiskZeroDegenerate
        && feasibility_report(&d.weights, 3.0, DESCENT_FEAS_TOL).pass;
    report(
        6,
        "zero-risk regime below the critical scenario ratio",
        pass,
        &format!("descent risk {:.3e} after {} iterations, replica {}", d.risk_per_asset, d.iterations, p.eps),
    );
    assert!(pass);
}

#[test]
fn criterion_7_self_averaging() {
    let rows = self_averaging_probe(2.0, 2.0, &[50, 100, 200], 50, 11, SweepMethod::Secular, 0).unwrap();
    let sd: Vec<f64> = rows.iter().map(|r| r.eps_stddev).collect();
    let pass = rows.len() == 3 && sd.windows(2).all(|w| w[1] < w[0]) && rows.iter().all(|r| r.failures == 0);
    report(7, "instance spread shrinks with market size", pass, &format!("stddev by N = {sd:?}"));
    assert!(pass);
}

fn golden_spec() -> ExperimentSpec {
    ExperimentSpec {
        assets: 50,
        alpha: 2.0,
        tau_grid: vec![1.0, 2.0, 3.0],
        samples: 5,
        master_seed: 42,
        method: SweepMethod::Secular,
        threads: 0,
        ..ExperimentSpec::desk_default()
    }
}

#[test]
fn criterion_8_determinism() {
    let spec = golden_spec();
    let first = csv_string(&run_sweep(&spec).unwrap().rows);
    let single = csv_string(&run_sweep(&ExperimentSpec { threads: 1, ..spec.clone() }).unwrap().rows);
    let again = csv_string(&run_sweep(&spec).unwrap().rows);

    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_n50_seed42.csv");
    if std::env::var_os("MINRISK_BLESS").is_some() {
        std::fs::create_dir_all(fixture.parent().unwrap()).unwrap();
        std::fs::write(&fixture, &first).unwrap();
    }
    let golden = std::fs::read_to_string(&fixture).expect("golden fixture present");
    let pass = first == again && first == single && first == golden;
    report(
        8,
        "byte-identical sweeps and golden fixture",
        pass,
        &format!("repeat {}, thread count {}, golden {}", first == again, first == single, first == golden),
    );
    assert!(pass);
}
