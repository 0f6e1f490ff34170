use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minrisk::experiment::{run_sweep_to_files, validate_tau_grid};
use minrisk::replica::saddle_beta_sweep;
use minrisk::solver::{descend_traced, write_trace_csv};
use minrisk::{
    budget_only, covariance, descend, equality_constrained, fmt17, generate_returns,
    lower_bound_constrained, or_baseline, risk_at_beta, secular_solve, self_averaging_probe,
    upper_bound_constrained, Error, ExperimentSpec, MarketConfig, SaddleOptions, SolverConfig,
    SweepMethod,
};

mod config;

/// Minimal investment risk: replica predictions, per-instance solvers and Monte Carlo sweeps.
#[derive(Debug, Parser)]
#[command(name = "minrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form minimal risk per asset and concentration.
    Predict(PredictArgs),
    /// Solve one random market instance.
    Solve(SolveArgs),
    /// Average the per-instance optimum over random markets along a tau grid.
    Sweep(SweepArgs),
    /// Solve the finite-beta saddle-point system.
    Saddle(SaddleArgs),
    /// Instance-to-instance spread of the optimal risk for growing market sizes.
    Selfavg(SelfavgArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Descent,
    Secular,
}

impl From<MethodArg> for SweepMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Descent => SweepMethod::Descent,
            MethodArg::Secular => SweepMethod::Secular,
        }
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Scenario ratio p/N.
    #[arg(long)]
    alpha: f64,
    /// Concentration fixed by an equality constraint.
    #[arg(long)]
    tau: Option<f64>,
    /// Concentration bound, used with --bound.
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long, value_enum)]
    bound: Option<Bound>,
    /// Budget constraint only.
    #[arg(long)]
    budget_only: bool,
    /// Annealed baseline instead of the replica result (with --tau).
    #[arg(long)]
    or: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Number of assets N.
    #[arg(long)]
    n: usize,
    /// Number of scenarios p.
    #[arg(long)]
    p: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Substream index of the instance.
    #[arg(long, default_value_t = 0)]
    sample: u64,
    #[arg(long, value_enum, default_value = "secular")]
    method: MethodArg,
    /// Write the return matrix to this file.
    #[arg(long, value_name = "PATH")]
    dump_instance: Option<PathBuf>,
    /// Write the per-iteration descent trace as CSV.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

const SWEEP_KEYS: &[&str] = &["n", "alpha", "tau-grid", "samples", "seed", "method", "out", "threads"];

#[derive(Debug, Args)]
struct SweepArgs {
    /// Run file of `key = value` lines; flags override its values.
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated values or `lo:hi:step`.
    #[arg(long, value_name = "GRID")]
    tau_grid: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Output prefix; `.csv`, `.svg` and `.meta` are appended.
    #[arg(long, value_name = "PREFIX")]
    out: Option<PathBuf>,
    /// Worker threads (0 picks the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SaddleArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, conflicts_with = "beta_sweep", required_unless_present = "beta_sweep")]
    beta: Option<f64>,
    /// `lo:hi:steps`, log-spaced and warm-started.
    #[arg(long, value_name = "LO:HI:STEPS")]
    beta_sweep: Option<String>,
}

#[derive(Debug, Args)]
struct SelfavgArgs {
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    /// Comma-separated ascending asset counts.
    #[arg(long, value_name = "LIST")]
    n_list: String,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "secular")]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input; nothing was computed or written.
    Usage(String),
    /// A computation or I/O step failed.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Text for stdout plus whether the run should still exit with the runtime code.
struct Outcome {
    stdout: String,
    failed: Option<String>,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { stdout, failed: None }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(out) => {
            print!("{}", out.stdout);
            match out.failed {
                None => ExitCode::SUCCESS,
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Runtime(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> CliResult<Outcome> {
    match cmd {
        Command::Predict(a) => predict(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Saddle(a) => saddle(a),
        Command::Selfavg(a) => selfavg(a),
    }
}

fn check_tau(tau: f64) -> CliResult<()> {
    if tau.is_nan() || tau < 1.0 {
        return Err(CliError::usage(format!(
            "tau = {tau} is infeasible: with sum w = N, (1/N) sum w^2 >= ((1/N) sum w)^2 = 1"
        )));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult<Outcome> {
    let equality = a.tau.is_some();
    let bounded = a.tau0.is_some() || a.bound.is_some();
    let modes = [equality, bounded, a.budget_only].iter().filter(|m| **m).count();
    if modes != 1 {
        return Err(CliError::usage("choose exactly one of --tau, --tau0 with --bound, or --budget-only"));
    }
    if a.or && !equality {
        return Err(CliError::usage("--or applies to --tau only"));
    }
    let p = if let Some(tau) = a.tau {
        check_tau(tau)?;
        if a.or {
            or_baseline(a.alpha, tau)?
        } else {
            equality_constrained(a.alpha, tau)?
        }
    } else if bounded {
        let (Some(tau0), Some(bound)) = (a.tau0, a.bound) else {
            return Err(CliError::usage("--tau0 and --bound must be given together"));
        };
        check_tau(tau0)?;
        match bound {
            Bound::Lower => lower_bound_constrained(a.alpha, tau0)?,
            Bound::Upper => upper_bound_constrained(a.alpha, tau0)?,
        }
    } else {
        budget_only(a.alpha)?
    };
    let mut s = String::new();
    let _ = writeln!(s, "eps={}", fmt17(p.eps));
    let _ = writeln!(s, "q_w={}", p.q_w);
    let _ = writeln!(s, "regime={}", p.regime);
    let _ = writeln!(s, "method={}", p.method);
    Ok(Outcome::ok(s))
}

fn solve(a: SolveArgs) -> CliResult<Outcome> {
    let market = MarketConfig::new(a.n, a.p, a.seed)?;
    check_tau(a.tau)?;
    let method = SweepMethod::from(a.method);
    if a.trace.is_some() && method != SweepMethod::Descent {
        return Err(CliError::usage("--trace requires --method descent"));
    }
    let cfg = SolverConfig::for_assets(a.n);

    let x = generate_returns(&market, a.sample);
    if let Some(path) = &a.dump_instance {
        x.write_dump(path)?;
    }
    let j = covariance(&x);
    let result = match method {
        SweepMethod::Secular => match secular_solve(&j, a.tau) {
            Err(Error::NoInteriorRoot { .. }) => descend(&j, a.tau, &cfg)?,
            other => other?,
        },
        SweepMethod::Descent => match &a.trace {
            Some(path) => {
                let mut rows = Vec::new();
                let r = descend_traced(&j, a.tau, &cfg, &mut rows);
                write_trace_csv(&rows, path)?;
                r?
            }
            None => descend(&j, a.tau, &cfg)?,
        },
    };

    let mut s = String::new();
    let _ = writeln!(s, "eps={}", fmt17(result.risk_per_asset));
    let _ = writeln!(s, "q_w={}", fmt17(result.concentration));
    let _ = writeln!(s, "k={}", fmt17(result.k));
    let _ = writeln!(s, "theta={}", fmt17(result.theta));
    let _ = writeln!(s, "iterations={}", result.iterations);
    let _ = writeln!(s, "converged={}", result.converged);
    let _ = writeln!(s, "method={}", result.method);
    let failed = (!result.converged).then(|| format!("no convergence after {} iterations", result.iterations));
    Ok(Outcome { stdout: s, failed })
}

fn parse_tau_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::usage(format!("tau grid {text:?}: {why}"));
    if let Some((lo, rest)) = text.split_once(':') {
        let (hi, step) = rest.split_once(':').ok_or_else(|| bad("expected lo:hi:step"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(step > 0.0 && hi >= lo && (hi - lo) / step < 1e6) {
            return Err(bad("need step > 0 and hi >= lo"));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| lo + step * i as f64).collect())
    } else {
        text.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
            .collect()
    }
}

fn sweep_spec(a: &SweepArgs) -> CliResult<ExperimentSpec> {
    let file = match &a.spec {
        Some(path) => config::load(path)?,
        None => config::ConfigMap::new(),
    };
    config::check_keys(&file, SWEEP_KEYS)?;

    let mut spec = ExperimentSpec::desk_default();
    if let Some(v) = a.n.or(config::get(&file, "n")?) {
        spec.assets = v;
    }
    if let Some(v) = a.alpha.or(config::get(&file, "alpha")?) {
        spec.alpha = v;
    }
    if let Some(v) = a.tau_grid.clone().or(config::get(&file, "tau-grid")?) {
        spec.tau_grid = parse_tau_grid(&v)?;
    }
    if let Some(v) = a.samples.or(config::get(&file, "samples")?) {
        spec.samples = v;
    }
    if let Some(v) = a.seed.or(config::get(&file, "seed")?) {
        spec.master_seed = v;
    }
    match a.method {
        Some(m) => spec.method = m.into(),
        None => {
            if let Some(m) = config::get::<SweepMethod>(&file, "method")? {
                spec.method = m;
            }
        }
    }
    if let Some(v) = a.out.clone().or(config::get(&file, "out")?) {
        spec.output_prefix = v;
    }
    if let Some(v) = a.threads.or(config::get(&file, "threads")?) {
        spec.threads = v;
    }
    validate_tau_grid(&spec.tau_grid)?;
    spec.validate()?;
    Ok(spec)
}

fn sweep(a: SweepArgs) -> CliResult<Outcome> {
    let spec = sweep_spec(&a)?;
    let (report, files) = run_sweep_to_files(&spec)?;
    let mut s = String::new();
    for r in &report.rows {
        let _ = writeln!(
            s,
            "tau={} eps_mean={} eps_stderr={} eps_replica={} eps_or={} samples_used={} failures={}",
            fmt17(r.tau),
            fmt17(r.eps_mean),
            fmt17(r.eps_stderr),
            fmt17(r.eps_replica),
            fmt17(r.eps_or),
            r.samples_used,
            r.failures
        );
    }
    for (kind, path) in [("csv", &files.csv), ("svg", &files.svg), ("meta", &files.meta)] {
        let _ = writeln!(s, "{kind}={}", path.display());
    }
    Ok(Outcome::ok(s))
}

fn parse_beta_sweep(text: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::usage(format!("beta sweep {text:?}: {why}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, steps] = parts.as_slice() else {
        return Err(bad("expected lo:hi:steps"));
    };
    let lo: f64 = lo.trim().parse().map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
    let hi: f64 = hi.trim().parse().map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
    let steps: usize = steps.trim().parse().map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || steps == 0 {
        return Err(bad("need 0 < lo <= hi and at least one step"));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let decades = (hi / lo).log10();
    Ok((0..steps)
        .map(|i| if i + 1 == steps { hi } else { lo * 10f64.powf(decades * i as f64 / (steps - 1) as f64) })
        .collect())
}

fn saddle(a: SaddleArgs) -> CliResult<Outcome> {
    if !(a.tau.is_finite() && a.tau > 1.0) {
        check_tau(a.tau)?;
        return Err(CliError::usage(format!(
            "tau = {} leaves no room for chi_w = tau - q_w > 0; use tau > 1",
            a.tau
        )));
    }
    let betas = match (&a.beta_sweep, a.beta) {
        (Some(text), _) => parse_beta_sweep(text)?,
        (None, Some(b)) => vec![b],
        (None, None) => return Err(CliError::usage("give --beta or --beta-sweep")),
    };
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(CliError::usage(format!("beta must be positive and finite, got {b}")));
    }
    if !(a.alpha.is_finite() && a.alpha > 0.0) {
        return Err(CliError::usage(format!("alpha must be positive, got {}", a.alpha)));
    }
    let states = saddle_beta_sweep(a.alpha, a.tau, &betas, &SaddleOptions::default())?;
    let mut s = String::from("beta,chi_w,q_w,chi_tilde,q_tilde,k,theta,risk\n");
    for st in &states {
        let cols = [st.beta, st.chi_w, st.q_w, st.chi_tilde, st.q_tilde, st.k, st.theta, risk_at_beta(st, a.alpha)];
        let cols: Vec<String> = cols.iter().map(|v| fmt17(*v)).collect();
        let _ = writeln!(s, "{}", cols.join(","));
    }
    Ok(Outcome::ok(s))
}

fn parse_n_list(text: &str) -> CliResult<Vec<usize>> {
    let list: Vec<usize> = text
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--n-list {text:?}: {e}")))?;
    if list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::usage(format!("--n-list {text:?} must be strictly ascending")));
    }
    Ok(list)
}

fn selfavg(a: SelfavgArgs) -> CliResult<Outcome> {
    let list = parse_n_list(&a.n_list)?;
    check_tau(a.tau)?;
    for &n in &list {
        MarketConfig::from_ratio(n, a.alpha, a.seed)?;
    }
    if a.samples < 2 {
        return Err(CliError::usage("a spread needs at least 2 samples"));
    }
    let rows = self_averaging_probe(a.alpha, a.tau, &list, a.samples, a.seed, a.method.into(), a.threads)?;
    let mut s = String::from("n,eps_mean,eps_stddev,samples_used,failures\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.assets,
            fmt17(r.eps_mean),
            fmt17(r.eps_stddev),
            r.samples_used,
            r.failures
        );
    }
    Ok(Outcome::ok(s))
}
