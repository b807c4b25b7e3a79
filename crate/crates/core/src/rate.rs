//! Total-variation decay of `ξP_η^n` towards `π_η`, geometric rate fits,
//! summability of `δⁿ d_TV(ξP_η^n, π_η)`, uniform-in-`x` bounds and the
//! step-size study.

use std::fmt::Write as _;

use crate::drift::{derive_constants, linspace, DriftSpec};
use crate::error::{Error, Result};
use crate::kernel::{
    default_grid, doeblin_rate, tv_distance, whole_space_minorization, Grid, GridMeasure, KernelOperator,
    INVARIANT_TOL, LEAK_TOL, MAX_ITERS,
};
use crate::numerics::linear_fit;
use crate::simulate::Start;

/// Values at or below this are numerically indistinguishable from zero.
pub const NUMERIC_FLOOR: f64 = 10.0 * INVARIANT_TOL;

/// Slack used when asserting the Doeblin envelope.
pub const ENVELOPE_SLACK: f64 = 10.0 * INVARIANT_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub initial: String,
    pub eta: f64,
    /// `values[n − 1] = d_TV(ξP_η^n, π_η)` for `n = 1..=N`.
    pub values: Vec<f64>,
    /// Largest quadrature uncertainty over the curve.
    pub tail_uncertainty: f64,
    pub floor: f64,
    /// First `n` with `d_n ≤ floor`.
    pub first_below_floor: Option<usize>,
}

impl DecayCurve {
    pub fn from_values(initial: impl Into<String>, eta: f64, values: Vec<f64>, floor: f64) -> Self {
        let first_below_floor = values.iter().position(|&d| d <= floor).map(|i| i + 1);
        Self {
            initial: initial.into(),
            eta,
            values,
            tail_uncertainty: 0.0,
            floor,
            first_below_floor,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `d_n`, 1-based.
    pub fn d(&self, n: usize) -> f64 {
        self.values[n - 1]
    }

    /// Number of leading points strictly above the floor.
    pub fn usable_len(&self) -> usize {
        self.first_below_floor.map_or(self.values.len(), |n| n - 1)
    }

    /// `n,d_tv,envelope` rows; the envelope `(1 − m)ⁿ` is left empty without `m`.
    pub fn to_csv_string(&self, experiment: &str, m: Option<f64>) -> String {
        let mut s = format!("# experiment={experiment} eta={} initial={}\nn,d_tv,envelope\n", self.eta, self.initial);
        for (i, d) in self.values.iter().enumerate() {
            let n = i + 1;
            let env = m.map(|m| format!("{}", (1.0 - m).powi(n as i32))).unwrap_or_default();
            let _ = writeln!(s, "{n},{d},{env}");
        }
        s
    }
}

/// Decay curve for a prebuilt operator and invariant measure on its grid.
pub fn tv_decay_curve(op: &KernelOperator, pi: &GridMeasure, initial: &Start, n_max: usize) -> Result<DecayCurve> {
    if n_max == 0 {
        return Err(Error::Argument("curve length must be at least 1".into()));
    }
    if pi.grid() != op.grid() {
        return Err(Error::Argument("invariant measure and kernel live on different grids".into()));
    }
    let mut cur = match initial {
        Start::Point(x) => op.one_step_from_point(*x)?,
        Start::Measure(m) => op.apply(m)?,
    };
    let mut values = Vec::with_capacity(n_max);
    let mut unc = 0.0_f64;
    for n in 1..=n_max {
        if n > 1 {
            cur = op.apply(&cur)?;
        }
        let tv = tv_distance(&cur, pi)?;
        values.push(tv.value);
        unc = unc.max(tv.uncertainty);
    }
    let mut curve = DecayCurve::from_values(initial.label(), op.eta(), values, NUMERIC_FLOOR);
    curve.tail_uncertainty = unc;
    Ok(curve)
}

/// Builds the operator and `π_η` on `grid` (default grid if `None`) and
/// computes the decay curve.
pub fn decay_curve(spec: &DriftSpec, eta: f64, grid: Option<Grid>, initial: &Start, n_max: usize) -> Result<DecayCurve> {
    let grid = match grid {
        Some(g) => g,
        None => default_grid(spec, eta)?,
    };
    let op = KernelOperator::new(spec, eta, grid)?;
    let pi = op.invariant_measure(INVARIANT_TOL, MAX_ITERS)?.measure;
    tv_decay_curve(&op, &pi, initial, n_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub delta_hat: f64,
    pub intercept: f64,
    /// Inclusive `(n_lo, n_hi)`.
    pub fit_window: (usize, usize),
    pub residual_rms: f64,
    pub floor_reached: bool,
}

pub const MIN_FIT_POINTS: usize = 5;
const HEAD_WINDOW: usize = 5;
const HEAD_RMS: f64 = 0.05;

/// Log-linear fit of `d_n` over the tail window.
///
/// Points at or below the floor are discarded. The head is dropped up to the
/// first 5-point window on which `log d_n` is within RMS 0.05 of a line.
pub fn fit_geometric_rate(curve: &DecayCurve) -> Result<RateFit> {
    let usable = curve.usable_len();
    if usable < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{usable} points above the numeric floor {:.1e}, need {MIN_FIT_POINTS}; \
             increase N or refine the grid",
            curve.floor
        )));
    }
    let ns: Vec<f64> = (1..=usable).map(|n| n as f64).collect();
    let logs: Vec<f64> = curve.values[..usable].iter().map(|d| d.ln()).collect();
    let start = (0..=usable - HEAD_WINDOW)
        .find(|&s| linear_fit(&ns[s..s + HEAD_WINDOW], &logs[s..s + HEAD_WINDOW]).2 < HEAD_RMS)
        .unwrap_or(0);
    let (slope, intercept, rms) = linear_fit(&ns[start..], &logs[start..]);
    Ok(RateFit {
        delta_hat: (-slope).exp(),
        intercept,
        fit_window: (start + 1, usable),
        residual_rms: rms,
        floor_reached: curve.first_below_floor.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummabilityReport {
    pub delta: f64,
    /// `S_N = Σ_{n ≤ N} δⁿ d_n` for `N = 1..`.
    pub partial_sums: Vec<f64>,
    /// Median of `δ d_{n+1}/d_n` over the fitted tail window.
    pub tail_ratio: f64,
    pub margin: f64,
    pub consistent: bool,
    /// `δⁿ d_n` at the first and last points above the floor.
    pub first_term: f64,
    pub last_term: f64,
    /// Simulated `E_ξ β^{σ}` reported alongside `S_N`, if supplied.
    pub return_moment: Option<f64>,
}

impl SummabilityReport {
    pub fn final_sum(&self) -> f64 {
        *self.partial_sums.last().unwrap_or(&0.0)
    }
}

pub const RATIO_MARGIN: f64 = 0.02;

/// Ratio test for `Σ δⁿ d_n`; consistent with finiteness when the median tail
/// ratio stays below `1 − margin`.
pub fn summability_check(curve: &DecayCurve, delta: f64, return_moment: Option<f64>) -> Result<SummabilityReport> {
    if !(delta > 1.0) {
        return Err(Error::Argument(format!("delta must exceed 1, got {delta}")));
    }
    let mut partial_sums = Vec::with_capacity(curve.len());
    let mut s = 0.0;
    for (i, d) in curve.values.iter().enumerate() {
        s += delta.powi(i as i32 + 1) * d;
        partial_sums.push(s);
    }
    let fit = fit_geometric_rate(curve)?;
    let (lo, hi) = fit.fit_window;
    let mut ratios: Vec<f64> = (lo..hi).map(|n| delta * curve.d(n + 1) / curve.d(n)).collect();
    ratios.sort_by(f64::total_cmp);
    let tail_ratio = if ratios.is_empty() {
        delta / fit.delta_hat
    } else if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    let term = |n: usize| delta.powi(n as i32) * curve.d(n);
    Ok(SummabilityReport {
        delta,
        partial_sums,
        tail_ratio,
        margin: RATIO_MARGIN,
        consistent: tail_ratio < 1.0 - RATIO_MARGIN,
        first_term: term(1),
        last_term: term(curve.usable_len()),
        return_moment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupRow {
    pub n: usize,
    pub sup: f64,
    pub inf: f64,
    /// Start point attaining the sup.
    pub argsup: f64,
    /// `(1 − m)ⁿ` when `m` is known.
    pub envelope: Option<f64>,
    /// Largest quadrature uncertainty among the rows.
    pub uncertainty: f64,
}

impl SupRow {
    pub fn spread(&self) -> f64 {
        self.sup - self.inf
    }

    pub fn envelope_holds(&self, slack: f64) -> Option<bool> {
        self.envelope.map(|e| self.sup <= e + slack)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformSupTable {
    pub eta: f64,
    pub x_grid: Vec<f64>,
    pub m: Option<f64>,
    pub rows: Vec<SupRow>,
}

impl UniformSupTable {
    /// `None` without `m`, else whether every row respects the envelope.
    pub fn envelope_holds(&self, slack: f64) -> Option<bool> {
        self.m?;
        Some(self.rows.iter().all(|r| r.envelope_holds(slack).unwrap_or(true)))
    }

    /// `n,d_tv,envelope` rows with the sup in the `d_tv` column.
    pub fn to_csv_string(&self, experiment: &str) -> String {
        let mut s = format!("# experiment={experiment} eta={}\nn,d_tv,envelope\n", self.eta);
        for r in &self.rows {
            let env = r.envelope.map(|e| format!("{e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.n, r.sup, env);
        }
        s
    }
}

/// Start points `[−5·radius, 5·radius]` (201 points), or half the measure
/// grid when the drift radius is not positive; clipped to the measure grid.
pub fn default_x_grid(spec: &DriftSpec, eta: f64, grid: &Grid) -> Result<Vec<f64>> {
    let c = derive_constants(spec, eta)?;
    let half = 0.5 * (grid.upper() - grid.lower());
    let w = if c.radius.is_finite() && c.radius > 0.0 {
        (5.0 * c.radius).min(half)
    } else {
        0.5 * half
    };
    let mid = 0.5 * (grid.upper() + grid.lower());
    Ok(linspace(mid - w, mid + w, 201))
}

/// `sup_x` and `inf_x` of `d_TV(P_η^n(x, ·), π_η)` over `x_grid` for every
/// `n` in `n_list`; `n = 0` rows are 1 (point mass against a density).
pub fn uniform_sup_tv(
    op: &KernelOperator,
    pi: &GridMeasure,
    x_grid: &[f64],
    n_list: &[usize],
    m: Option<f64>,
) -> Result<UniformSupTable> {
    if x_grid.is_empty() {
        return Err(Error::Argument("x grid is empty".into()));
    }
    if pi.grid() != op.grid() {
        return Err(Error::Argument("invariant measure and kernel live on different grids".into()));
    }
    let grid = *op.grid();
    let n_nodes = grid.n_nodes();
    let n_cols = x_grid.len();
    let mut cols = Vec::with_capacity(n_nodes * n_cols);
    let mut tails = Vec::with_capacity(n_cols);
    for &x in x_grid {
        let m1 = op.one_step_from_point(x)?;
        cols.extend_from_slice(m1.density());
        tails.push(m1.tail_bound());
    }
    let n_max = n_list.iter().copied().max().unwrap_or(0);
    let envelope = |n: usize| m.map(|m| (1.0 - m).powi(n as i32));
    let mut rows = Vec::with_capacity(n_list.len());
    let tv_row = |cols: &[f64], tails: &[f64], n: usize| -> Result<SupRow> {
        let mut sup = f64::NEG_INFINITY;
        let mut inf = f64::INFINITY;
        let mut argsup = x_grid[0];
        let mut unc = 0.0_f64;
        for (k, &x) in x_grid.iter().enumerate() {
            let col = GridMeasure::from_parts_unchecked(grid, cols[k * n_nodes..(k + 1) * n_nodes].to_vec(), tails[k]);
            let tv = tv_distance(&col, pi)?;
            if tv.value > sup {
                sup = tv.value;
                argsup = x;
            }
            inf = inf.min(tv.value);
            unc = unc.max(tv.uncertainty);
        }
        Ok(SupRow {
            n,
            sup,
            inf,
            argsup,
            envelope: envelope(n),
            uncertainty: unc,
        })
    };
    let mut results = std::collections::BTreeMap::new();
    if n_list.contains(&0) {
        results.insert(
            0,
            SupRow {
                n: 0,
                sup: 1.0,
                inf: 1.0,
                argsup: x_grid[0],
                envelope: envelope(0),
                uncertainty: 0.0,
            },
        );
    }
    for n in 1..=n_max {
        if n > 1 {
            let (next, leaks) = op.apply_batch(&cols, n_cols);
            if let Some(k) = leaks.iter().position(|&l| l > LEAK_TOL) {
                // re-applying the offending column reports the grid it needs
                let col = GridMeasure::from_parts_unchecked(grid, cols[k * n_nodes..(k + 1) * n_nodes].to_vec(), tails[k]);
                op.apply(&col)?;
            }
            cols = next;
            for (t, l) in tails.iter_mut().zip(&leaks) {
                *t += l;
            }
        }
        if n_list.contains(&n) {
            results.insert(n, tv_row(&cols, &tails, n)?);
        }
    }
    for &n in n_list {
        rows.push(results[&n]);
    }
    Ok(UniformSupTable {
        eta: op.eta(),
        x_grid: x_grid.to_vec(),
        m,
        rows,
    })
}

/// Whole-space Doeblin mass when the uniform-ergodicity hypothesis applies;
/// logs a warning and returns `None` otherwise.
pub fn doeblin_mass_or_warn(spec: &DriftSpec, eta: f64) -> Result<Option<f64>> {
    match whole_space_minorization(spec, eta) {
        Ok(w) => Ok(Some(w.mass)),
        Err(Error::Applicability(msg)) => {
            log::warn!("uniform ergodicity hypotheses unmet ({msg}); sup-TV table is exploratory");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub eta: f64,
    pub curve: DecayCurve,
    /// `None` when the curve reaches the floor too early to fit.
    pub fit: Option<RateFit>,
    pub m: Option<f64>,
    /// `1/(1 − m)`.
    pub envelope_rate: Option<f64>,
}

impl StudyRow {
    pub fn delta_hat(&self) -> Option<f64> {
        self.fit.map(|f| f.delta_hat)
    }

    /// `δ̂^{1/η}`.
    pub fn delta_per_unit_time(&self) -> Option<f64> {
        self.delta_hat().map(|d| d.powf(1.0 / self.eta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    /// `eta,delta_hat,delta_per_unit_time,m`; undefined entries are `NA`.
    pub fn to_csv_string(&self, experiment: &str) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        let mut s = format!("# experiment={experiment}\neta,delta_hat,delta_per_unit_time,m\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.eta,
                na(r.delta_hat()),
                na(r.delta_per_unit_time()),
                na(r.m)
            );
        }
        s
    }
}

/// One decay curve and rate fit per step size. `grid = None` uses the
/// default grid of each step size.
pub fn step_size_study(
    spec: &DriftSpec,
    etas: &[f64],
    initial: &Start,
    n_max: usize,
    grid: Option<Grid>,
) -> Result<StudyTable> {
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let g = match grid {
            Some(g) => g,
            None => default_grid(spec, eta)?,
        };
        let op = KernelOperator::new(spec, eta, g)?;
        let pi = op.invariant_measure(INVARIANT_TOL, MAX_ITERS)?.measure;
        let initial = match initial {
            Start::Measure(m) if m.grid() != &g => {
                return Err(Error::Argument(format!("initial measure grid differs from the grid for eta={eta}")))
            }
            other => other,
        };
        let curve = tv_decay_curve(&op, &pi, initial, n_max)?;
        let fit = match fit_geometric_rate(&curve) {
            Ok(f) => Some(f),
            Err(Error::InsufficientData(msg)) => {
                log::info!("eta={eta}: no rate fit ({msg})");
                None
            }
            Err(e) => return Err(e),
        };
        let m = doeblin_mass_or_warn(spec, eta)?;
        let envelope_rate = m.map(doeblin_rate).transpose()?;
        rows.push(StudyRow {
            eta,
            curve,
            fit,
            m,
            envelope_rate,
        });
    }
    Ok(StudyTable { rows })
}
