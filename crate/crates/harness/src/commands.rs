//! The four subcommands, callable without the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gamma_ddpc::benchmark::LtiScenario;
use gamma_ddpc::closed_loop::ClosedLoopRun;
use gamma_ddpc::slip_study::{evaluate_slip, tune_slip, SlipScenario, StepMetrics};
use gamma_ddpc::tuning::{run_campaign, BetaGrid, CampaignReport, Scenario};
use serde::Serialize;

use crate::config::{ColorName, ExperimentConfig, LtiStudyConfig, Mode, RegularizerName, SlipStudyConfig, Study};
use crate::io::{save_run, save_trajectory};
use crate::report::{label_key, run_rows, trace_rows, write_csv, write_derived, RUNS_FILE, TRACES_FILE};

pub const RUN_FILE: &str = "run.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SLIP_SUMMARY_FILE: &str = "wheelslip_summary.json";

/// `--out`, else the config's `output`, else `out/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn lti_scenario(
    cfg: &ExperimentConfig,
    study: &LtiStudyConfig,
    n_data: usize,
    color: ColorName,
    reg: RegularizerName,
) -> Result<LtiScenario> {
    Ok(LtiScenario::new(study.spec(&cfg.name, cfg.seed, n_data, color, reg)?)?)
}

fn slip_scenario(cfg: &ExperimentConfig, study: &SlipStudyConfig) -> Result<SlipScenario> {
    Ok(SlipScenario::new(study.spec(cfg.seed)?)?)
}

fn color_tag(c: ColorName) -> &'static str {
    c.color().tag()
}

/// Writes the training set of the first outer run of every data set.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    match &cfg.study {
        Study::Ltibench(s) => {
            let reg = s.regularizers.first().copied().unwrap_or(RegularizerName::Gamma2);
            for &n in &s.n_data {
                for &c in &s.input_colors {
                    let sc = lti_scenario(cfg, s, n, c, reg)?;
                    let path = dir.join(format!("train_N{n}_{}.csv", color_tag(c)));
                    save_trajectory(&path, &sc.training(0))?;
                    written.push(path);
                }
            }
        }
        Study::Wheelslip(s) => {
            let sc = slip_scenario(cfg, s)?;
            let path = dir.join(format!("train_N{}.csv", s.n_data));
            save_trajectory(&path, &sc.data.trajectory)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub regularizer: Option<RegularizerName>,
    pub beta2: Option<f64>,
    pub beta3: Option<f64>,
    pub n_data: Option<usize>,
    pub color: Option<ColorName>,
    pub oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub rho: usize,
    pub beta2: f64,
    pub beta3: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_oracle")]
    pub j_oracle: Option<f64>,
}

/// One fit on the first training set and one closed loop.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path) -> Result<RunSummary> {
    ensure_dir(dir)?;
    let (summary, run, refs) = match &cfg.study {
        Study::Ltibench(s) => {
            let n = opts.n_data.or_else(|| s.n_data.first().copied()).context("no data length configured")?;
            let c = opts.color.or_else(|| s.input_colors.first().copied()).context("no input color configured")?;
            let reg = opts
                .regularizer
                .or_else(|| s.regularizers.first().copied())
                .unwrap_or(RegularizerName::Gamma2);
            let (b2, b3) = match reg {
                RegularizerName::None => (0.0, f64::INFINITY),
                _ => (opts.beta2.unwrap_or(s.beta2.0), opts.beta3.unwrap_or(s.beta3.0)),
            };
            let sc = lti_scenario(cfg, s, n, c, reg)?;
            let fitted = sc.fit(0)?;
            let prepared = sc.prepare(&fitted, b2, b3)?;
            let run = sc.run(&fitted, &prepared, 0, 0)?;
            let j_oracle = if opts.oracle { Some(sc.run_oracle(fitted.rho, 0, 0)?.j) } else { None };
            let summary = RunSummary {
                rho: fitted.rho,
                beta2: b2,
                beta3: b3,
                j: run.j,
                j_oracle,
            };
            (summary, run, prepared.config.references)
        }
        Study::Wheelslip(s) => {
            if matches!(opts.regularizer, Some(RegularizerName::Input)) {
                bail!("the wheel-slip study only supports the gamma2 regularizer");
            }
            let (b2, b3) = match opts.regularizer {
                Some(RegularizerName::None) => (0.0, f64::INFINITY),
                _ => (opts.beta2.unwrap_or(s.beta2.0), opts.beta3.unwrap_or(s.beta3.0)),
            };
            let sc = slip_scenario(cfg, s)?;
            let fitted = sc.fit(0)?;
            let prepared = sc.prepare(&fitted, b2, b3)?;
            let run = sc.run(&fitted, &prepared, 0)?;
            let j_oracle = if opts.oracle { Some(sc.run_oracle(fitted.rho, 0)?.j) } else { None };
            let summary = RunSummary {
                rho: fitted.rho,
                beta2: b2,
                beta3: b3,
                j: run.j,
                j_oracle,
            };
            (summary, run, prepared.config.references)
        }
    };
    save_run(&dir.join(RUN_FILE), &run, &refs)?;
    write_csv(&dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy)]
pub struct TuneOptions {
    pub mode: Mode,
    pub fix_beta2: Option<f64>,
    pub fix_beta3: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlipSummary {
    pub rho: usize,
    pub beta2_bar: Option<f64>,
    pub beta3_bar: Option<f64>,
    pub beta2: f64,
    pub beta3: f64,
    pub rise_time: Option<usize>,
    pub settling_time: Option<usize>,
    pub overshoot: f64,
    pub max_slip: f64,
    pub crossed_unstable: bool,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub reports: Vec<CampaignReport>,
    pub slip: Option<SlipSummary>,
    pub files: Vec<PathBuf>,
}

fn renamed(mut r: CampaignReport, name: &str) -> CampaignReport {
    r.label.name = name.to_string();
    r
}

/// Runs the Monte-Carlo campaigns, stores every closed-loop index and the
/// trajectories at the selected weights, then writes the derived tables.
pub fn tune(cfg: &ExperimentConfig, opts: &TuneOptions, dir: &Path) -> Result<TuneOutcome> {
    ensure_dir(dir)?;
    let counts = cfg.monte_carlo.counts(opts.mode);
    if counts.outer == 0 || counts.inner == 0 {
        bail!("Monte-Carlo counts must be positive");
    }
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    let mut slip = None;
    match &cfg.study {
        Study::Ltibench(s) => {
            let full = s.grid.grid()?;
            for &n in &s.n_data {
                for &c in &s.input_colors {
                    for &reg in &s.regularizers {
                        let grid = match reg {
                            RegularizerName::None => BetaGrid::new(vec![0.0], vec![f64::INFINITY], 0)?,
                            _ => full.restrict(opts.fix_beta2, opts.fix_beta3)?,
                        };
                        let sc = lti_scenario(cfg, s, n, c, reg)?;
                        let report = run_campaign(&sc, &grid, counts.outer, counts.inner);
                        for f in &report.failures {
                            eprintln!("{}: outer {} point {}: {}", label_key(&report.label), f.outer, f.point, f.message);
                        }
                        if let Some((b2, b3)) = report.minimizers()[0] {
                            let fitted = sc.fit(0)?;
                            let prepared = sc.prepare(&fitted, b2, b3)?;
                            let runs = (0..counts.inner)
                                .map(|i| sc.run(&fitted, &prepared, 0, i))
                                .collect::<gamma_ddpc::Result<Vec<ClosedLoopRun>>>()?;
                            traces.extend(trace_rows(&label_key(&report.label), &runs));
                        }
                        reports.push(report);
                    }
                }
            }
        }
        Study::Wheelslip(s) => {
            let sc = slip_scenario(cfg, s)?;
            let fitted = sc.fit(0)?;
            let axis = sc.spec.axis()?;
            let (b2, b3, b2_bar, b3_bar) = match (opts.fix_beta2, opts.fix_beta3) {
                (Some(b2), Some(b3)) => {
                    let grid = BetaGrid::new(vec![b2], vec![b3], 0)?;
                    reports.push(renamed(run_campaign(&sc, &grid, 1, counts.inner), "wheelslip_fixed"));
                    (b2, b3, None, None)
                }
                (None, None) => {
                    let t = tune_slip(&sc, counts.inner)?;
                    reports.push(renamed(t.beta2_sweep, "wheelslip_beta2"));
                    reports.push(renamed(t.beta3_sweep, "wheelslip_beta3"));
                    reports.push(renamed(t.joint, "wheelslip_joint"));
                    (t.beta2, t.beta3, Some(t.beta2_bar), Some(t.beta3_bar))
                }
                (fix2, fix3) => {
                    let mut b2v = fix2.map_or_else(|| with_end(&axis, 0.0, true), |v| vec![v]);
                    let mut b3v = fix3.map_or_else(|| with_end(&axis, f64::INFINITY, false), |v| vec![v]);
                    b2v.dedup();
                    b3v.dedup();
                    let report = run_campaign(&sc, &BetaGrid::new(b2v, b3v, 0)?, 1, counts.inner);
                    let (b2, b3) = report.minimizers()[0].context("every grid point failed")?;
                    reports.push(renamed(report, "wheelslip_sweep"));
                    (b2, b3, None, None)
                }
            };
            let eval = evaluate_slip(&sc, &fitted, b2, b3, s.eval_runs)?;
            traces.extend(trace_rows("wheelslip", &eval.runs));
            let StepMetrics {
                rise_time,
                settling_time,
                overshoot,
                ..
            } = eval.metrics;
            slip = Some(SlipSummary {
                rho: fitted.rho,
                beta2_bar: b2_bar,
                beta3_bar: b3_bar,
                beta2: b2,
                beta3: b3,
                rise_time,
                settling_time,
                overshoot,
                max_slip: eval.max_slip,
                crossed_unstable: eval.any_crossed,
            });
        }
    }
    let runs: Vec<_> = reports.iter().flat_map(run_rows).collect();
    let mut files = vec![dir.join(RUNS_FILE), dir.join(TRACES_FILE)];
    write_csv(&files[0], &runs)?;
    write_csv(&files[1], &traces)?;
    if let Some(summary) = &slip {
        let path = dir.join(SLIP_SUMMARY_FILE);
        fs::write(&path, serde_json::to_string_pretty(summary)?)?;
        files.push(path);
    }
    files.extend(write_derived(dir)?);
    Ok(TuneOutcome { reports, slip, files })
}

fn with_end(axis: &[f64], end: f64, front: bool) -> Vec<f64> {
    let mut v = axis.to_vec();
    if front {
        v.insert(0, end);
    } else {
        v.push(end);
    }
    v
}

/// Rebuilds the derived tables from `runs.csv` and `traces.csv` in `dir`.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>> {
    write_derived(dir)
}
