use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ddpc_harness::commands::{self, RunOptions, TuneOptions, RUN_FILE, SLIP_SUMMARY_FILE, SUMMARY_FILE};
use ddpc_harness::config::{ExperimentConfig, Mode, RegularizerName, Study};
use ddpc_harness::io::load_trajectory;
use ddpc_harness::report::{read_csv, AggregateRow, ArgminRow, RunRow, ScatterRow, AGGREGATE_FILE, ARGMIN_FILE, RUNS_FILE, SCATTER_FILE};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&config("smoke.json")).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = smoke();
    let fa = commands::generate(&cfg, a.path()).unwrap();
    let fb = commands::generate(&cfg, b.path()).unwrap();
    assert_eq!(fa.len(), 1);
    assert_eq!(fa[0].file_name().unwrap(), "train_N250_c.csv");
    assert_eq!(fs::read(&fa[0]).unwrap(), fs::read(&fb[0]).unwrap());
    let traj = load_trajectory(&fa[0]).unwrap();
    assert_eq!(traj.len(), 250);

    let mut other = smoke();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    let fc = commands::generate(&other, c.path()).unwrap();
    assert_ne!(fs::read(&fa[0]).unwrap(), fs::read(&fc[0]).unwrap());
}

#[test]
fn single_run_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        beta2: Some(0.1),
        beta3: Some(1.0),
        oracle: true,
        ..Default::default()
    };
    let s = commands::run(&smoke(), &opts, dir.path()).unwrap();
    assert!(s.j.is_finite() && s.j > 0.0);
    assert!(s.j_oracle.is_some_and(|j| j.is_finite() && j > 0.0));
    assert_eq!(header(&dir.path().join(RUN_FILE)), "t,u0,y0,y_meas0,u_ref0,y_ref0");
    assert_eq!(header(&dir.path().join(SUMMARY_FILE)), "rho,beta2,beta3,J,J_oracle");
    let rows = fs::read_to_string(dir.path().join(RUN_FILE)).unwrap().lines().count();
    assert_eq!(rows, 1 + 20);
}

#[test]
fn no_regularizer_equals_zero_and_infinite_weights() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let none = RunOptions {
        regularizer: Some(RegularizerName::None),
        beta2: Some(5.0),
        ..Default::default()
    };
    let explicit = RunOptions {
        regularizer: Some(RegularizerName::Gamma2),
        beta2: Some(0.0),
        beta3: Some(f64::INFINITY),
        ..Default::default()
    };
    let sa = commands::run(&smoke(), &none, a.path()).unwrap();
    let sb = commands::run(&smoke(), &explicit, b.path()).unwrap();
    assert_eq!(sa.j, sb.j);
    assert_eq!(fs::read(a.path().join(RUN_FILE)).unwrap(), fs::read(b.path().join(RUN_FILE)).unwrap());
}

#[test]
fn tune_covers_the_grid_and_derives_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let opts = TuneOptions {
        mode: Mode::Desk,
        fix_beta2: None,
        fix_beta3: None,
    };
    let out = commands::tune(&cfg, &opts, dir.path()).unwrap();
    let Study::Ltibench(s) = &cfg.study else { unreachable!() };
    let points = s.grid.grid().unwrap().len();
    let (outer, inner) = (cfg.monte_carlo.desk.outer, cfg.monte_carlo.desk.inner);
    assert_eq!(out.reports.len(), 2);

    let runs: Vec<RunRow> = read_csv(&dir.path().join(RUNS_FILE)).unwrap();
    assert_eq!(runs.len(), 2 * points * outer * inner);
    assert!(runs.iter().all(|r| r.run_id == r.outer * inner + r.run_id % inner));
    let agg: Vec<AggregateRow> = read_csv(&dir.path().join(AGGREGATE_FILE)).unwrap();
    assert_eq!(agg.len(), 2 * points * outer);
    let argmin: Vec<ArgminRow> = read_csv(&dir.path().join(ARGMIN_FILE)).unwrap();
    assert_eq!(argmin.len(), 2 * outer);
    for a in &argmin {
        let best = agg
            .iter()
            .filter(|g| g.regularizer == a.regularizer && g.outer == a.outer)
            .map(|g| g.j_bar)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.j_hat, best);
        assert!(a.j_hat_beta2_zero.unwrap() >= a.j_hat);
    }
    let scatter: Vec<ScatterRow> = read_csv(&dir.path().join(SCATTER_FILE)).unwrap();
    assert_eq!(scatter.len(), 2 * outer);
    assert_eq!(header(&dir.path().join("band_smoke_N250_c_2.csv")), "t,mean_u,sd_u,mean_y,sd_y");
    assert_eq!(header(&dir.path().join("quantiles.csv")), "scenario,q05,q25,q50,q75,q95");

    // the report step alone reproduces the derived tables
    let before = fs::read(dir.path().join(ARGMIN_FILE)).unwrap();
    fs::remove_file(dir.path().join(ARGMIN_FILE)).unwrap();
    commands::report(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join(ARGMIN_FILE)).unwrap(), before);
}

#[test]
fn fixed_weight_restricts_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let opts = TuneOptions {
        mode: Mode::Desk,
        fix_beta2: Some(0.0),
        fix_beta3: None,
    };
    commands::tune(&cfg, &opts, dir.path()).unwrap();
    let runs: Vec<RunRow> = read_csv(&dir.path().join(RUNS_FILE)).unwrap();
    assert!(runs.iter().all(|r| r.beta2 == 0.0));
    let Study::Ltibench(s) = &cfg.study else { unreachable!() };
    let beta3_values = s.grid.grid().unwrap().restrict(Some(0.0), None).unwrap().len();
    let (outer, inner) = (cfg.monte_carlo.desk.outer, cfg.monte_carlo.desk.inner);
    assert_eq!(runs.len(), 2 * beta3_values * outer * inner);
}

#[test]
fn wheelslip_at_fixed_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&config("wheelslip.json")).unwrap();
    cfg.monte_carlo.desk.inner = 3;
    if let Study::Wheelslip(s) = &mut cfg.study {
        s.n_data = 3000;
        s.eval_runs = 3;
    }
    let opts = TuneOptions {
        mode: Mode::Desk,
        fix_beta2: Some(10.0),
        fix_beta3: Some(100.0),
    };
    let out = commands::tune(&cfg, &opts, dir.path()).unwrap();
    let summary = out.slip.unwrap();
    assert_eq!((summary.beta2, summary.beta3), (10.0, 100.0));
    assert!(dir.path().join(SLIP_SUMMARY_FILE).exists());
    assert!(dir.path().join("band_wheelslip.csv").exists());
    let runs: Vec<RunRow> = read_csv(&dir.path().join(RUNS_FILE)).unwrap();
    assert_eq!(runs.len(), 3);
}

#[test]
fn binary_runs_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ddpc"))
        .args(["run", "--config"])
        .arg(config("smoke.json"))
        .arg("--out")
        .arg(dir.path())
        .args(["--beta2", "0.1", "--beta3", "inf"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("beta3=inf") && stdout.contains(" J="), "{stdout}");

    let bad = Command::new(env!("CARGO_BIN_EXE_ddpc"))
        .args(["run", "--config"])
        .arg(config("smoke.json"))
        .args(["--beta2", "-1"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
