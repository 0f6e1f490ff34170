use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use minrisk::ReturnMatrix;

fn minrisk(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minrisk"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Value of `key=` in a `key=value` per line record.
fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

fn num(out: &str, key: &str) -> f64 {
    field(out, key).parse().unwrap()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn predict_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = minrisk(&["predict", "--alpha", "2", "--tau", "2"], dir.path());
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 4);
    assert_eq!(field(&s, "eps"), "5.0000000000000000e-1");
    assert_eq!(field(&s, "regime"), "RiskPositive");

    let s = stdout(&minrisk(&["predict", "--alpha", "2", "--budget-only"], dir.path()));
    assert_eq!((num(&s, "eps"), num(&s, "q_w")), (0.5, 2.0));

    let s = stdout(&minrisk(&["predict", "--alpha", "2", "--tau", "2", "--or"], dir.path()));
    assert_eq!(num(&s, "eps"), 2.0);
    assert_eq!(field(&s, "method"), "AnnealedOR");

    let s = stdout(&minrisk(&["predict", "--alpha", "0.5", "--tau0", "4", "--bound", "lower"], dir.path()));
    assert_eq!(num(&s, "eps"), 0.0);
    assert_eq!(field(&s, "q_w"), ">=4.0000000000000000e0");

    let s = stdout(&minrisk(&["predict", "--alpha", "2", "--tau0", "5", "--bound", "upper"], dir.path()));
    assert_eq!((num(&s, "eps"), num(&s, "q_w")), (0.5, 2.0));
}

#[test]
fn predict_rejects_conflicting_or_missing_modes() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["predict", "--alpha", "2", "--tau", "2", "--budget-only"][..],
        &["predict", "--alpha", "2"],
        &["predict", "--alpha", "2", "--tau0", "3"],
        &["predict", "--alpha", "2", "--budget-only", "--or"],
        &["predict", "--alpha", "2", "--tau", "0.9"],
        &["predict", "--alpha", "-1", "--tau", "2"],
        &["predict", "--alpha", "2", "--tau", "2", "--bogus"],
        &["frobnicate"],
    ] {
        let o = minrisk(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(o.stdout.is_empty());
    }
    assert_eq!(minrisk(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(minrisk(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn solve_forced_equal_weights_at_unit_concentration() {
    let dir = tempfile::tempdir().unwrap();
    let o = minrisk(&["solve", "--n", "2", "--p", "2", "--tau", "1", "--seed", "7"], dir.path());
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(num(&s, "q_w"), 1.0);
    assert_eq!(field(&s, "method"), "ForcedEIS");
    assert_eq!(field(&s, "converged"), "true");
}

#[test]
fn solve_methods_agree_and_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["solve", "--n", "50", "--p", "100", "--tau", "2", "--seed", "3"];
    let secular = stdout(&minrisk(&[&base[..], &["--method", "secular", "--dump-instance", "x.txt"]].concat(), dir.path()));
    let o = minrisk(&[&base[..], &["--method", "descent", "--trace", "trace.csv"]].concat(), dir.path());
    assert!(o.status.success());
    let descent = stdout(&o);
    let (a, b) = (num(&secular, "eps"), num(&descent, "eps"));
    assert!((a - b).abs() <= 1e-5 * (1.0 + a), "{a} vs {b}");
    assert_eq!(field(&secular, "method"), "Secular");
    assert_eq!(field(&descent, "method"), "Descent");

    let x = ReturnMatrix::read_dump(&dir.path().join("x.txt")).unwrap();
    assert_eq!((x.assets(), x.scenarios()), (50, 100));

    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,delta,lagrangian,budget_resid,conc_resid"));
    assert_eq!(lines.count(), num(&descent, "iterations") as usize);
}

#[test]
fn solve_validation_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--n", "20", "--p", "40", "--tau", "0.5", "--dump-instance", "x.txt"][..],
        &["solve", "--n", "1", "--p", "40", "--tau", "2", "--dump-instance", "x.txt"],
        &["solve", "--n", "20", "--p", "0", "--tau", "2", "--dump-instance", "x.txt"],
        &["solve", "--n", "20", "--p", "40", "--tau", "2", "--method", "secular", "--trace", "t.csv"],
        &["solve", "--n", "20", "--p", "40", "--tau", "2", "--method", "newton"],
    ] {
        let o = minrisk(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let o = minrisk(&["solve", "--n", "20", "--p", "40", "--tau", "0.5"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
    assert!(entries(dir.path()).is_empty());
}

const SMALL_SWEEP: &[&str] = &["sweep", "--n", "20", "--alpha", "2", "--tau-grid", "1,1.5,2,3", "--samples", "4", "--seed", "9"];

#[test]
fn sweep_writes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let o = minrisk(&[SMALL_SWEEP, &["--out", "a", "--threads", "1"]].concat(), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = minrisk(&[SMALL_SWEEP, &["--out", "b", "--threads", "3"]].concat(), dir.path());
    assert!(o.status.success());
    assert_eq!(entries(dir.path()), ["a.csv", "a.meta", "a.svg", "b.csv", "b.meta", "b.svg"]);

    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let csv = String::from_utf8(a).unwrap();
    assert!(csv.starts_with("tau,eps_mean,eps_stderr,qw_mean,eps_replica,eps_or,samples_used,failures\n"));
    assert_eq!(csv.lines().count(), 5);

    let meta = fs::read_to_string(dir.path().join("b.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "threads=3"), "{meta}");
    assert!(meta.lines().any(|l| l == "seed=9"));
    let svg = fs::read_to_string(dir.path().join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("investment concentration tau"));
}

#[test]
fn sweep_default_grid_has_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = minrisk(&["sweep", "--n", "20", "--samples", "2", "--out", "d"], dir.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn sweep_run_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "# small run\nn = 20\nalpha = 2\ntau-grid = 1:2:0.5\nsamples = 4\nseed = 100\nout = fromfile\n",
    )
    .unwrap();
    let o = minrisk(&["sweep", "--spec", "run.cfg", "--seed", "9", "--tau-grid", "1,1.5,2,3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let via_file = fs::read(dir.path().join("fromfile.csv")).unwrap();

    let o = minrisk(&[SMALL_SWEEP, &["--out", "inline"]].concat(), dir.path());
    assert!(o.status.success());
    assert_eq!(via_file, fs::read(dir.path().join("inline.csv")).unwrap());
}

#[test]
fn sweep_validation_precedes_file_creation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.cfg"), "sampels = 4\n").unwrap();
    for args in [
        &["sweep", "--n", "20", "--tau-grid", "0.5,1,2", "--samples", "2", "--out", "x"][..],
        &["sweep", "--n", "20", "--tau-grid", "2,1", "--samples", "2", "--out", "x"],
        &["sweep", "--n", "21", "--alpha", "0.5", "--samples", "2", "--out", "x"],
        &["sweep", "--n", "20", "--samples", "0", "--out", "x"],
        &["sweep", "--spec", "typo.cfg", "--out", "x"],
        &["sweep", "--spec", "missing.cfg", "--out", "x"],
    ] {
        let o = minrisk(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(entries(dir.path()), ["typo.cfg"]);
}

#[test]
fn saddle_large_beta_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout(&minrisk(&["saddle", "--alpha", "2", "--tau", "2", "--beta", "1e6"], dir.path()));
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("beta,chi_w,q_w,chi_tilde,q_tilde,k,theta,risk"));
    let risk: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((risk - 0.5).abs() < 1e-4);

    let s = stdout(&minrisk(&["saddle", "--alpha", "2", "--tau", "2", "--beta-sweep", "10:1e6:6"], dir.path()));
    let risks: Vec<f64> = s.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(risks.len(), 6);
    assert!(risks.windows(2).all(|w| w[1] < w[0] && w[1] > 0.5), "{risks:?}");
    assert!((risks[5] - 0.5).abs() < 1e-4);
}

#[test]
fn saddle_validation() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["saddle", "--alpha", "2", "--tau", "1", "--beta", "10"][..],
        &["saddle", "--alpha", "2", "--tau", "2"],
        &["saddle", "--alpha", "2", "--tau", "2", "--beta", "10", "--beta-sweep", "1:10:2"],
        &["saddle", "--alpha", "2", "--tau", "2", "--beta", "-3"],
        &["saddle", "--alpha", "2", "--tau", "2", "--beta-sweep", "10:1"],
    ] {
        assert_eq!(minrisk(args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn selfavg_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = minrisk(&["selfavg", "--alpha", "2", "--tau", "2", "--n-list", "50,100,200", "--samples", "50", "--seed", "11"], dir.path());
    assert!(o.status.success());
    let s = stdout(&o);
    let sd: Vec<f64> = s.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(sd.len(), 3);
    assert!(sd[2] < sd[0], "{sd:?}");

    let s = stdout(&minrisk(&["selfavg", "--n-list", "40", "--samples", "5"], dir.path()));
    assert_eq!(s.lines().count(), 2);

    for list in ["50,x", "100,50", ""] {
        assert_eq!(minrisk(&["selfavg", "--n-list", list], dir.path()).status.code(), Some(1), "{list}");
    }
}
