//! Regularization grids, the closed-loop performance index and Monte-Carlo
//! tuning campaigns.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// `J = (1/T_v) Σ_t ‖u(t) - u_r(t)‖²_R + ‖y(t) - y_r(t)‖²_Q`, one column per
/// time step.
pub fn performance_index(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    u_ref: &DMatrix<f64>,
    y_ref: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    let t_v = u.ncols();
    for (what, m, rows) in [
        ("output sequence", y, q.nrows()),
        ("input reference", u_ref, r.nrows()),
        ("output reference", y_ref, q.nrows()),
    ] {
        if m.ncols() != t_v {
            return Err(Error::DimensionMismatch {
                what,
                expected: t_v,
                found: m.ncols(),
            });
        }
        if m.nrows() != rows {
            return Err(Error::DimensionMismatch {
                what,
                expected: rows,
                found: m.nrows(),
            });
        }
    }
    if u.nrows() != r.nrows() {
        return Err(Error::DimensionMismatch {
            what: "input sequence",
            expected: r.nrows(),
            found: u.nrows(),
        });
    }
    if t_v == 0 {
        return Err(invalid("performance index needs at least one sample"));
    }
    let eu = u - u_ref;
    let ey = y - y_ref;
    let mut total = 0.0;
    for t in 0..t_v {
        let cu = eu.column(t);
        let cy = ey.column(t);
        total += cu.dot(&(r * cu)) + cy.dot(&(q * cy));
    }
    Ok(total / t_v as f64)
}

/// One axis of a regularization grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub low: f64,
    pub high: f64,
    pub points_per_decade: usize,
    pub include_zero: bool,
    pub include_infinity: bool,
}

impl AxisSpec {
    pub fn new(low: f64, high: f64, points_per_decade: usize) -> Self {
        Self {
            low,
            high,
            points_per_decade,
            include_zero: true,
            include_infinity: true,
        }
    }

    pub fn open(mut self) -> Self {
        self.include_zero = false;
        self.include_infinity = false;
        self
    }
}

/// Log-spaced values `10^(log10(low) + k/ppd)` up to `high` inclusive, with
/// the optional `0` and `+inf` endpoints.
pub fn build_axis(spec: &AxisSpec) -> Result<Vec<f64>> {
    if !(spec.low > 0.0 && spec.high >= spec.low && spec.high.is_finite()) || spec.points_per_decade == 0 {
        return Err(invalid("grid range must be positive and non-empty"));
    }
    let lo = libm::log10(spec.low);
    let decades = libm::log10(spec.high) - lo;
    let steps = libm::round(decades * spec.points_per_decade as f64) as usize;
    let mut values = Vec::with_capacity(steps + 3);
    if spec.include_zero {
        values.push(0.0);
    }
    for k in 0..=steps {
        values.push(libm::pow(10.0, lo + k as f64 / spec.points_per_decade as f64));
    }
    if spec.include_infinity {
        values.push(f64::INFINITY);
    }
    Ok(values)
}

/// Rectangular `(β2, β3)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    pub beta2_values: Vec<f64>,
    pub beta3_values: Vec<f64>,
    pub points_per_decade: usize,
}

impl BetaGrid {
    pub fn new(mut beta2_values: Vec<f64>, mut beta3_values: Vec<f64>, points_per_decade: usize) -> Result<Self> {
        for v in beta2_values.iter().chain(beta3_values.iter()) {
            if v.is_nan() || *v < 0.0 {
                return Err(invalid("grid values must be nonnegative or +inf"));
            }
        }
        if beta2_values.is_empty() || beta3_values.is_empty() {
            return Err(invalid("grid axes must not be empty"));
        }
        let cmp = |a: &f64, b: &f64| a.partial_cmp(b).expect("no NaN");
        beta2_values.sort_by(cmp);
        beta3_values.sort_by(cmp);
        beta2_values.dedup();
        beta3_values.dedup();
        Ok(Self {
            beta2_values,
            beta3_values,
            points_per_decade,
        })
    }

    pub fn from_axes(beta2: &AxisSpec, beta3: &AxisSpec) -> Result<Self> {
        Self::new(build_axis(beta2)?, build_axis(beta3)?, beta2.points_per_decade)
    }

    /// `{0} ∪ [1e-4, 1] ∪ {+inf}` × `{0} ∪ [1e-3, 1] ∪ {+inf}` at the given
    /// density.
    pub fn benchmark(points_per_decade: usize) -> Self {
        Self::from_axes(
            &AxisSpec::new(1e-4, 1.0, points_per_decade),
            &AxisSpec::new(1e-3, 1.0, points_per_decade),
        )
        .expect("fixed ranges are valid")
    }

    /// `{β̄2, β̄2/10, β̄2/100, 1e8}` × `{0, β̄3, 10β̄3, 100β̄3}`.
    pub fn slip_joint(beta2_bar: f64, beta3_bar: f64) -> Result<Self> {
        Self::new(
            alloc::vec![beta2_bar, beta2_bar / 10.0, beta2_bar / 100.0, 1e8],
            alloc::vec![0.0, beta3_bar, 10.0 * beta3_bar, 100.0 * beta3_bar],
            0,
        )
    }

    pub fn len(&self) -> usize {
        self.beta2_values.len() * self.beta3_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points with `β2` varying slowest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &b2 in &self.beta2_values {
            for &b3 in &self.beta3_values {
                out.push((b2, b3));
            }
        }
        out
    }

    /// Restricts one or both axes to a single value.
    pub fn restrict(&self, beta2: Option<f64>, beta3: Option<f64>) -> Result<Self> {
        Self::new(
            beta2.map_or_else(|| self.beta2_values.clone(), |v| alloc::vec![v]),
            beta3.map_or_else(|| self.beta3_values.clone(), |v| alloc::vec![v]),
            self.points_per_decade,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputColor {
    White,
    Colored,
}

impl InputColor {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::White => "w",
            Self::Colored => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLabel {
    pub name: String,
    pub n_data: usize,
    pub input_color: InputColor,
    /// `"2"` for the `γ2` penalty, `"u"` for input energy, `"none"`.
    pub regularizer: String,
}

/// One Monte-Carlo scenario: a training set per outer run, a control law per
/// grid point and a closed-loop index per inner run.
pub trait Scenario {
    type Fitted;
    type Prepared;
    fn label(&self) -> ScenarioLabel;
    fn fit(&self, outer: usize) -> Result<Self::Fitted>;
    fn prepare(&self, fitted: &Self::Fitted, beta2: f64, beta3: f64) -> Result<Self::Prepared>;
    fn evaluate(&self, fitted: &Self::Fitted, prepared: &Self::Prepared, outer: usize, inner: usize) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub outer: usize,
    pub point: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub label: ScenarioLabel,
    pub points: Vec<(f64, f64)>,
    pub n_outer: usize,
    pub n_inner: usize,
    /// `j[outer][point][inner]`; failed cells hold `+inf`.
    pub j: Vec<Vec<Vec<f64>>>,
    pub failures: Vec<CellFailure>,
}

impl CampaignReport {
    /// `J̄` for one outer run and grid point.
    pub fn j_bar(&self, outer: usize, point: usize) -> f64 {
        let runs = &self.j[outer][point];
        runs.iter().sum::<f64>() / runs.len() as f64
    }

    /// Grid index minimizing `J̄` for an outer run; ties go to the first.
    pub fn argmin(&self, outer: usize) -> Option<usize> {
        self.argmin_where(outer, |_| true)
    }

    pub fn argmin_where(&self, outer: usize, keep: impl Fn((f64, f64)) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            if !keep(*p) {
                continue;
            }
            let v = self.j_bar(outer, i);
            if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    /// `Ĵ` per outer run (`+inf` when every cell failed).
    pub fn j_hat(&self) -> Vec<f64> {
        self.j_hat_where(|_| true)
    }

    pub fn j_hat_where(&self, keep: impl Fn((f64, f64)) -> bool + Copy) -> Vec<f64> {
        (0..self.n_outer)
            .map(|o| self.argmin_where(o, keep).map_or(f64::INFINITY, |i| self.j_bar(o, i)))
            .collect()
    }

    /// Minimizing `(β2, β3)` per outer run.
    pub fn minimizers(&self) -> Vec<Option<(f64, f64)>> {
        (0..self.n_outer).map(|o| self.argmin(o).map(|i| self.points[i])).collect()
    }
}

/// Runs every (outer, grid point, inner) cell. Cells that error hold `+inf`
/// and are listed in `failures`.
pub fn run_campaign<S: Scenario>(scenario: &S, grid: &BetaGrid, n_outer: usize, n_inner: usize) -> CampaignReport {
    let points = grid.points();
    let mut j = Vec::with_capacity(n_outer);
    let mut failures = Vec::new();
    for outer in 0..n_outer {
        let fitted = scenario.fit(outer);
        let mut per_point = Vec::with_capacity(points.len());
        for (pi, &(b2, b3)) in points.iter().enumerate() {
            let prepared = match &fitted {
                Ok(f) => scenario.prepare(f, b2, b3).map(|p| (f, p)),
                Err(e) => Err(e.clone()),
            };
            let runs = match prepared {
                Ok((f, p)) => {
                    let mut runs = Vec::with_capacity(n_inner);
                    let mut failed = None;
                    for inner in 0..n_inner {
                        match scenario.evaluate(f, &p, outer, inner) {
                            Ok(v) if v.is_finite() => runs.push(v),
                            Ok(_) => {
                                failed.get_or_insert_with(|| "non-finite performance index".to_string());
                                runs.push(f64::INFINITY);
                            }
                            Err(e) => {
                                failed.get_or_insert_with(|| e.to_string());
                                runs.push(f64::INFINITY);
                            }
                        }
                    }
                    if let Some(message) = failed {
                        failures.push(CellFailure { outer, point: pi, message });
                    }
                    runs
                }
                Err(e) => {
                    failures.push(CellFailure {
                        outer,
                        point: pi,
                        message: e.to_string(),
                    });
                    alloc::vec![f64::INFINITY; n_inner]
                }
            };
            per_point.push(runs);
        }
        j.push(per_point);
    }
    CampaignReport {
        label: scenario.label(),
        points,
        n_outer,
        n_inner,
        j,
        failures,
    }
}

/// Median of finite and infinite values alike (`+inf` sorts last).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    if lo == hi || v[lo] == v[hi] {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_tracking_is_zero() {
        let u = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let y = DMatrix::from_row_slice(1, 3, &[0.5, 0.1, 0.0]);
        let one = DMatrix::identity(1, 1);
        assert_eq!(performance_index(&u, &y, &u, &y, &one, &one).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_index() {
        let z = DMatrix::zeros(1, 2);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let one = DMatrix::identity(1, 1);
        assert_eq!(performance_index(&z, &y, &z, &z, &one, &one).unwrap(), 1.0);
    }

    #[test]
    fn index_rejects_length_mismatch() {
        let one = DMatrix::identity(1, 1);
        let a = DMatrix::zeros(1, 2);
        let b = DMatrix::zeros(1, 3);
        assert!(performance_index(&a, &b, &a, &a, &one, &one).is_err());
    }

    #[test]
    fn axis_counts() {
        let open = build_axis(&AxisSpec::new(1e-4, 1.0, 7).open()).unwrap();
        assert_eq!(open.len(), 29);
        let closed = build_axis(&AxisSpec::new(1e-4, 1.0, 7)).unwrap();
        assert_eq!(closed.len(), 31);
        assert_eq!(closed[0], 0.0);
        assert!(closed[30].is_infinite());
        assert_eq!(build_axis(&AxisSpec::new(1e-3, 1.0, 7).open()).unwrap().len(), 22);
        // seven points per decade
        for w in open.windows(2) {
            assert!((libm::log10(w[1] / w[0]) - 1.0 / 7.0).abs() < 1e-12);
        }
        assert!((open[28] - 1.0).abs() < 1e-12);
        assert!(build_axis(&AxisSpec::new(0.0, 1.0, 7)).is_err());
        assert!(build_axis(&AxisSpec::new(1.0, 0.1, 7)).is_err());
    }

    #[test]
    fn slip_joint_grid() {
        let g = BetaGrid::slip_joint(1.0, 0.01).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.beta2_values.contains(&1e8));
        assert!(g.beta3_values.contains(&0.0));
    }

    struct Toy {
        fail_point: Option<(f64, f64)>,
    }

    impl Scenario for Toy {
        type Fitted = f64;
        type Prepared = (f64, f64);
        fn label(&self) -> ScenarioLabel {
            ScenarioLabel {
                name: "toy".to_string(),
                n_data: 0,
                input_color: InputColor::White,
                regularizer: "2".to_string(),
            }
        }
        fn fit(&self, outer: usize) -> Result<f64> {
            Ok(outer as f64 * 0.1)
        }
        fn prepare(&self, _f: &f64, b2: f64, b3: f64) -> Result<(f64, f64)> {
            if Some((b2, b3)) == self.fail_point {
                return Err(Error::Infeasible { rows: vec![0] });
            }
            Ok((b2, b3))
        }
        fn evaluate(&self, f: &f64, p: &(f64, f64), _outer: usize, inner: usize) -> Result<f64> {
            let b3 = if p.1.is_finite() { p.1 } else { 10.0 };
            Ok((libm::log10(p.0 + 1e-3) + 1.0).powi(2) + b3 + f + inner as f64 * 1e-3)
        }
    }

    #[test]
    fn degenerate_campaign() {
        let g = BetaGrid::new(vec![0.1], vec![0.0], 7).unwrap();
        let r = run_campaign(&Toy { fail_point: None }, &g, 1, 1);
        assert_eq!(r.j.len(), 1);
        assert_eq!(r.j[0].len(), 1);
        assert_eq!(r.j[0][0].len(), 1);
    }

    #[test]
    fn averages_and_argmin() {
        let g = BetaGrid::benchmark(2);
        let r = run_campaign(&Toy { fail_point: None }, &g, 3, 4);
        for o in 0..3 {
            for p in 0..g.len() {
                let runs = &r.j[o][p];
                assert_eq!(r.j_bar(o, p), runs.iter().sum::<f64>() / 4.0);
            }
            let (b2, b3) = r.points[r.argmin(o).unwrap()];
            assert!((b2 - 0.1).abs() < 1e-12 && b3 == 0.0);
        }
        let restricted = r.j_hat_where(|(b2, _)| b2 == 0.0);
        for (a, b) in restricted.iter().zip(r.j_hat()) {
            assert!(*a >= b);
        }
    }

    #[test]
    fn order_independence() {
        let g = BetaGrid::benchmark(2);
        let mut rev = g.clone();
        rev.beta2_values.reverse();
        let rev = BetaGrid::new(rev.beta2_values, rev.beta3_values, 2).unwrap();
        let a = run_campaign(&Toy { fail_point: None }, &g, 2, 2);
        let b = run_campaign(&Toy { fail_point: None }, &rev, 2, 2);
        assert_eq!(a.j_hat(), b.j_hat());
        assert_eq!(a.minimizers(), b.minimizers());
    }

    #[test]
    fn failed_cells_are_infinite_and_excluded() {
        let g = BetaGrid::new(vec![0.1, 1.0], vec![0.0], 7).unwrap();
        let r = run_campaign(&Toy { fail_point: Some((0.1, 0.0)) }, &g, 1, 2);
        assert!(r.j_bar(0, 0).is_infinite());
        assert_eq!(r.argmin(0), Some(1));
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
    }

    #[test]
    fn adding_points_never_raises_j_hat() {
        let small = BetaGrid::new(vec![0.0, 1.0], vec![0.0, 1.0], 7).unwrap();
        let big = BetaGrid::new(vec![0.0, 0.1, 1.0], vec![0.0, 1.0], 7).unwrap();
        let a = run_campaign(&Toy { fail_point: None }, &small, 2, 2).j_hat();
        let b = run_campaign(&Toy { fail_point: None }, &big, 2, 2).j_hat();
        for (x, y) in a.iter().zip(&b) {
            assert!(y <= x);
        }
    }
}
