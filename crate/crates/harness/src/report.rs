//! Campaign CSV files and the tables derived from them.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gamma_ddpc::closed_loop::ClosedLoopRun;
use gamma_ddpc::tuning::{quantile, CampaignReport, InputColor, ScenarioLabel};
use serde::{Deserialize, Serialize};

pub const RUNS_FILE: &str = "runs.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const ARGMIN_FILE: &str = "argmin.csv";
pub const QUANTILE_FILE: &str = "quantiles.csv";
pub const SCATTER_FILE: &str = "scatter.csv";

/// One closed loop of a campaign. `run_id = outer * n_inner + inner`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub n_data: usize,
    pub input_color: String,
    pub regularizer: String,
    pub beta2: f64,
    pub beta3: f64,
    pub outer: usize,
    pub run_id: usize,
    #[serde(rename = "J")]
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub n_data: usize,
    pub input_color: String,
    pub regularizer: String,
    pub beta2: f64,
    pub beta3: f64,
    pub outer: usize,
    #[serde(rename = "J_bar")]
    pub j_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgminRow {
    pub scenario: String,
    pub n_data: usize,
    pub input_color: String,
    pub regularizer: String,
    pub outer: usize,
    pub beta2: f64,
    pub beta3: f64,
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    /// Best `J̄` among points with `β2 = 0`; empty when the grid has none.
    #[serde(rename = "J_hat_beta2_zero")]
    pub j_hat_beta2_zero: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub scenario: String,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub scenario: String,
    pub outer: usize,
    pub beta2: f64,
    pub beta3: f64,
}

/// First input and output channel of one closed loop at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scenario: String,
    pub run_id: usize,
    pub t: usize,
    pub u: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub t: usize,
    pub mean_u: f64,
    pub sd_u: f64,
    pub mean_y: f64,
    pub sd_y: f64,
}

pub fn label_key(label: &ScenarioLabel) -> String {
    format!("{}_N{}_{}_{}", label.name, label.n_data, label.input_color.tag(), label.regularizer)
}

pub fn run_rows(report: &CampaignReport) -> Vec<RunRow> {
    let l = &report.label;
    let mut rows = Vec::with_capacity(report.n_outer * report.points.len() * report.n_inner);
    for (outer, per_point) in report.j.iter().enumerate() {
        for (pi, runs) in per_point.iter().enumerate() {
            let (beta2, beta3) = report.points[pi];
            for (inner, &j) in runs.iter().enumerate() {
                rows.push(RunRow {
                    scenario: l.name.clone(),
                    n_data: l.n_data,
                    input_color: l.input_color.tag().to_string(),
                    regularizer: l.regularizer.clone(),
                    beta2,
                    beta3,
                    outer,
                    run_id: outer * report.n_inner + inner,
                    j,
                });
            }
        }
    }
    rows
}

pub fn trace_rows(scenario: &str, runs: &[ClosedLoopRun]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for (run_id, r) in runs.iter().enumerate() {
        for t in 0..r.inputs.ncols() {
            rows.push(TraceRow {
                scenario: scenario.to_string(),
                run_id,
                t,
                u: r.inputs[(0, t)],
                y: r.outputs[(0, t)],
            });
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = csv::Reader::from_reader(f);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.with_context(|| format!("{} row {}", path.display(), i + 2))?);
    }
    Ok(rows)
}

fn color_from_tag(tag: &str) -> Result<InputColor> {
    match tag {
        "w" => Ok(InputColor::White),
        "c" => Ok(InputColor::Colored),
        other => bail!("unknown input color tag {other:?}"),
    }
}

/// Regroups flat run rows into campaign reports, keeping grid points in the
/// order they first appear.
pub fn reports_from_rows(rows: &[RunRow]) -> Result<Vec<CampaignReport>> {
    type Key = (String, usize, String, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.scenario.clone(), r.n_data, r.input_color.clone(), r.regularizer.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut reports = Vec::new();
    for key in order {
        let group = &groups[&key];
        let mut points: Vec<(f64, f64)> = Vec::new();
        for r in group {
            let p = (r.beta2, r.beta3);
            if !points.iter().any(|q| q.0.to_bits() == p.0.to_bits() && q.1.to_bits() == p.1.to_bits()) {
                points.push(p);
            }
        }
        let n_outer = group.iter().map(|r| r.outer).max().unwrap_or(0) + 1;
        let per_cell = group.len() / (n_outer * points.len()).max(1);
        if per_cell == 0 || per_cell * n_outer * points.len() != group.len() {
            bail!("runs for {} do not form a full outer x grid x inner table", key.0);
        }
        let mut j = vec![vec![vec![f64::NAN; per_cell]; points.len()]; n_outer];
        for r in group {
            let pi = points
                .iter()
                .position(|q| q.0.to_bits() == r.beta2.to_bits() && q.1.to_bits() == r.beta3.to_bits())
                .expect("point collected above");
            let inner = r.run_id.checked_sub(r.outer * per_cell).filter(|i| *i < per_cell);
            let Some(inner) = inner else {
                bail!("run_id {} inconsistent with outer {}", r.run_id, r.outer);
            };
            j[r.outer][pi][inner] = r.j;
        }
        if j.iter().flatten().flatten().any(|v| v.is_nan()) {
            bail!("duplicate or missing runs for {}", key.0);
        }
        reports.push(CampaignReport {
            label: ScenarioLabel {
                name: key.0.clone(),
                n_data: key.1,
                input_color: color_from_tag(&key.2)?,
                regularizer: key.3.clone(),
            },
            points,
            n_outer,
            n_inner: per_cell,
            j,
            failures: Vec::new(),
        });
    }
    Ok(reports)
}

pub fn aggregate_rows(report: &CampaignReport) -> Vec<AggregateRow> {
    let l = &report.label;
    let mut rows = Vec::new();
    for outer in 0..report.n_outer {
        for (pi, &(beta2, beta3)) in report.points.iter().enumerate() {
            rows.push(AggregateRow {
                scenario: l.name.clone(),
                n_data: l.n_data,
                input_color: l.input_color.tag().to_string(),
                regularizer: l.regularizer.clone(),
                beta2,
                beta3,
                outer,
                j_bar: report.j_bar(outer, pi),
            });
        }
    }
    rows
}

pub fn argmin_rows(report: &CampaignReport) -> Vec<ArgminRow> {
    let l = &report.label;
    let has_zero = report.points.iter().any(|p| p.0 == 0.0);
    let restricted = report.j_hat_where(|p| p.0 == 0.0);
    (0..report.n_outer)
        .map(|outer| {
            let (beta2, beta3, j_hat) = match report.argmin(outer) {
                Some(i) => (report.points[i].0, report.points[i].1, report.j_bar(outer, i)),
                None => (f64::NAN, f64::NAN, f64::INFINITY),
            };
            ArgminRow {
                scenario: l.name.clone(),
                n_data: l.n_data,
                input_color: l.input_color.tag().to_string(),
                regularizer: l.regularizer.clone(),
                outer,
                beta2,
                beta3,
                j_hat,
                j_hat_beta2_zero: has_zero.then(|| restricted[outer]),
            }
        })
        .collect()
}

fn quantile_row(scenario: String, values: &[f64]) -> QuantileRow {
    QuantileRow {
        scenario,
        q05: quantile(values, 0.05),
        q25: quantile(values, 0.25),
        q50: quantile(values, 0.5),
        q75: quantile(values, 0.75),
        q95: quantile(values, 0.95),
    }
}

/// Distribution of `Ĵ` over outer runs (and of its `β2 = 0` restriction when
/// the grid allows it). A single outer run falls back to the per-run indices
/// at its minimizer.
pub fn quantile_rows(report: &CampaignReport) -> Vec<QuantileRow> {
    let key = label_key(&report.label);
    let mut rows = Vec::new();
    if report.n_outer >= 2 {
        rows.push(quantile_row(key.clone(), &report.j_hat()));
        if report.points.iter().any(|p| p.0 == 0.0) && report.points.iter().any(|p| p.0 != 0.0) {
            rows.push(quantile_row(format!("{key}_beta2_0"), &report.j_hat_where(|p| p.0 == 0.0)));
        }
    } else if let Some(i) = report.argmin(0) {
        rows.push(quantile_row(key, &report.j[0][i]));
    }
    rows
}

pub fn scatter_rows(report: &CampaignReport) -> Vec<ScatterRow> {
    let key = label_key(&report.label);
    report
        .minimizers()
        .into_iter()
        .enumerate()
        .map(|(outer, m)| {
            let (beta2, beta3) = m.unwrap_or((f64::NAN, f64::NAN));
            ScatterRow {
                scenario: key.clone(),
                outer,
                beta2,
                beta3,
            }
        })
        .collect()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-step mean and sample standard deviation across runs; the plotting
/// multiplier is left to the consumer.
pub fn band_rows(traces: &[TraceRow]) -> Vec<BandRow> {
    let mut by_t: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in traces {
        let e = by_t.entry(r.t).or_default();
        e.0.push(r.u);
        e.1.push(r.y);
    }
    by_t.into_iter()
        .map(|(t, (u, y))| {
            let (mean_u, sd_u) = mean_sd(&u);
            let (mean_y, sd_y) = mean_sd(&y);
            BandRow {
                t,
                mean_u,
                sd_u,
                mean_y,
                sd_y,
            }
        })
        .collect()
}

/// Writes every derived table for the run and trace files in `dir`.
pub fn write_derived(dir: &Path) -> Result<Vec<PathBuf>> {
    let runs: Vec<RunRow> = read_csv(&dir.join(RUNS_FILE))?;
    let reports = reports_from_rows(&runs)?;
    let mut aggregate = Vec::new();
    let mut argmin = Vec::new();
    let mut quantiles = Vec::new();
    let mut scatter = Vec::new();
    for r in &reports {
        aggregate.extend(aggregate_rows(r));
        argmin.extend(argmin_rows(r));
        quantiles.extend(quantile_rows(r));
        scatter.extend(scatter_rows(r));
    }
    let mut written = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = dir.join(name);
        f(&p)?;
        written.push(p);
        Ok(())
    };
    put(AGGREGATE_FILE, &|p| write_csv(p, &aggregate))?;
    put(ARGMIN_FILE, &|p| write_csv(p, &argmin))?;
    put(QUANTILE_FILE, &|p| write_csv(p, &quantiles))?;
    put(SCATTER_FILE, &|p| write_csv(p, &scatter))?;

    let traces_path = dir.join(TRACES_FILE);
    if traces_path.exists() {
        let traces: Vec<TraceRow> = read_csv(&traces_path)?;
        let mut by_scenario: BTreeMap<String, Vec<TraceRow>> = BTreeMap::new();
        for t in traces {
            by_scenario.entry(t.scenario.clone()).or_default().push(t);
        }
        for (scenario, rows) in by_scenario {
            let band = band_rows(&rows);
            put(&format!("band_{scenario}.csv"), &|p| write_csv(p, &band))?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> CampaignReport {
        CampaignReport {
            label: ScenarioLabel {
                name: "s".into(),
                n_data: 250,
                input_color: InputColor::Colored,
                regularizer: "2".into(),
            },
            points: vec![(0.0, 1.0), (0.5, f64::INFINITY)],
            n_outer: 2,
            n_inner: 3,
            j: vec![
                vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]],
                vec![vec![1.0, 1.0, 1.0], vec![f64::INFINITY, 2.0, 2.0]],
            ],
            failures: Vec::new(),
        }
    }

    #[test]
    fn rows_regroup_into_the_same_report() {
        let r = report();
        let rows = run_rows(&r);
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[5].run_id, 2);
        assert_eq!(rows[6].run_id, 3);
        let back = reports_from_rows(&rows).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn argmin_and_restriction() {
        let a = argmin_rows(&report());
        assert_eq!((a[0].beta2, a[0].beta3, a[0].j_hat), (0.5, f64::INFINITY, 0.5));
        assert_eq!(a[0].j_hat_beta2_zero, Some(2.0));
        assert_eq!((a[1].beta2, a[1].j_hat), (0.0, 1.0));
        let s = scatter_rows(&report());
        assert_eq!(s.len(), 2);
        let q = quantile_rows(&report());
        assert_eq!(q.len(), 2);
        assert_eq!(q[1].scenario, "s_N250_c_2_beta2_0");
    }

    #[test]
    fn bands_use_sample_deviation() {
        let rows: Vec<TraceRow> = [(0, 1.0, 2.0), (0, 3.0, 2.0), (1, 0.0, 1.0), (1, 0.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(t, u, y))| TraceRow {
                scenario: "x".into(),
                run_id: i % 2,
                t,
                u,
                y,
            })
            .collect();
        let b = band_rows(&rows);
        assert_eq!(b[0], BandRow { t: 0, mean_u: 2.0, sd_u: 2f64.sqrt(), mean_y: 2.0, sd_y: 0.0 });
        assert_eq!(b[1].sd_y, 2f64.sqrt());
    }

    #[test]
    fn infinite_values_survive_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = run_rows(&report());
        write_csv(&p, &rows).unwrap();
        let back: Vec<RunRow> = read_csv(&p).unwrap();
        assert_eq!(back, rows);
    }
}
