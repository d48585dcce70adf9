//! Time series of the integral and sup-norm quantities tracked during a run.
//!
//! CSV layout (fixed column order):
//!
//! ```text
//! t,mass,int_u_beta,int_u_k<k1>,...,int_u_k<kn>,linf_u,linf_v,dt,retries
//! ```
//!
//! Floats are written with 17 significant digits so that a series survives
//! a text round trip bit for bit.

use std::fmt::Write as _;

use thiserror::Error;

use crate::error::FieldError;
use crate::grid::{integrate, linf_norm, lp_norm_pow, Grid, State};
use crate::params::ModelParams;

pub const DEFAULT_K_LIST: [f64; 3] = [2.0, 4.0, 8.0];

/// Relative slack allowed on the mass envelope by the summary verdict.
pub const MASS_ENVELOPE_SLACK: f64 = 1e-6;
/// Last-quartile max may exceed the middle-half max by this factor.
pub const PLATEAU_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableRow {
    pub t: f64,
    pub mass: f64,
    pub int_u_beta: f64,
    pub int_u_k: Vec<f64>,
    pub linf_u: f64,
    pub linf_v: f64,
    pub dt: f64,
    pub retries: u64,
}

impl ObservableRow {
    fn is_finite(&self) -> bool {
        [self.t, self.mass, self.int_u_beta, self.linf_u, self.linf_v, self.dt]
            .iter()
            .chain(&self.int_u_k)
            .all(|v| v.is_finite())
    }
}

/// Computes one row from `state`. `retries` is the cumulative retry count.
pub fn record(
    state: &State,
    grid: &Grid,
    params: &ModelParams,
    k_list: &[f64],
    retries: u64,
) -> Result<ObservableRow, FieldError> {
    let row = ObservableRow {
        t: state.t,
        mass: integrate(&state.u, grid)?,
        int_u_beta: lp_norm_pow(&state.u, grid, params.beta())?,
        int_u_k: k_list
            .iter()
            .map(|&k| lp_norm_pow(&state.u, grid, k))
            .collect::<Result<_, _>>()?,
        linf_u: linf_norm(&state.u)?,
        linf_v: linf_norm(&state.v)?,
        dt: state.dt_last,
        retries,
    };
    if !row.is_finite() {
        return Err(FieldError::NonFinite { index: 0, value: f64::NAN });
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSeries {
    pub k_list: Vec<f64>,
    pub rows: Vec<ObservableRow>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("sample time {t} does not increase past {prev}")]
    NonIncreasingTime { prev: f64, t: f64 },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column label for an exponent, e.g. `2` → `int_u_k2`, `2.5` → `int_u_k2.5`.
pub fn k_label(k: f64) -> String {
    format!("int_u_k{k}")
}

impl ObservableSeries {
    pub fn new(k_list: &[f64]) -> Self {
        Self { k_list: k_list.to_vec(), rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: ObservableRow) -> Result<(), SeriesError> {
        if let Some(prev) = self.rows.last() {
            if !(row.t > prev.t) {
                return Err(SeriesError::NonIncreasingTime { prev: prev.t, t: row.t });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, f: impl Fn(&ObservableRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["t".to_string(), "mass".into(), "int_u_beta".into()];
        cols.extend(self.k_list.iter().map(|&k| k_label(k)));
        cols.extend(["linf_u", "linf_v", "dt", "retries"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![fmt_f64(r.t), fmt_f64(r.mass), fmt_f64(r.int_u_beta)];
            fields.extend(r.int_u_k.iter().map(|v| fmt_f64(*v)));
            fields.extend([fmt_f64(r.linf_u), fmt_f64(r.linf_v), fmt_f64(r.dt)]);
            fields.push(r.retries.to_string());
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SeriesError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(SeriesError::Csv { line: 1, reason: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let n = cols.len();
        if n < 7 || cols[..3] != ["t", "mass", "int_u_beta"] || cols[n - 4..] != ["linf_u", "linf_v", "dt", "retries"] {
            return Err(SeriesError::Csv { line: 1, reason: format!("unexpected header `{header}`") });
        }
        let k_list = cols[3..n - 4]
            .iter()
            .map(|c| {
                c.strip_prefix("int_u_k")
                    .and_then(|k| k.parse::<f64>().ok())
                    .ok_or(SeriesError::Csv { line: 1, reason: format!("bad column `{c}`") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut series = ObservableSeries::new(&k_list);
        for (idx, line) in lines {
            let bad = |reason: String| SeriesError::Csv { line: idx + 1, reason };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n {
                return Err(bad(format!("expected {n} fields, got {}", fields.len())));
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", cols[i])));
            let row = ObservableRow {
                t: num(0)?,
                mass: num(1)?,
                int_u_beta: num(2)?,
                int_u_k: (3..n - 4).map(num).collect::<Result<_, _>>()?,
                linf_u: num(n - 4)?,
                linf_v: num(n - 3)?,
                dt: num(n - 2)?,
                retries: fields[n - 1].parse().map_err(|e| bad(format!("retries: {e}")))?,
            };
            series.push(row).map_err(|e| bad(e.to_string()))?;
        }
        Ok(series)
    }

    /// Linear interpolation of a column at time `t` (clamped to the series range).
    pub fn interpolate(&self, t: f64, f: impl Fn(&ObservableRow) -> f64) -> Option<f64> {
        let rows = &self.rows;
        let first = rows.first()?;
        let last = rows.last()?;
        if t <= first.t {
            return Some(f(first));
        }
        if t >= last.t {
            return Some(f(last));
        }
        let hi = rows.partition_point(|r| r.t < t);
        let (r0, r1) = (&rows[hi - 1], &rows[hi]);
        let w = (t - r0.t) / (r1.t - r0.t);
        Some((1.0 - w) * f(r0) + w * f(r1))
    }
}

/// Samples a run at fixed time intervals.
///
/// The first row is taken at the initial time, then one row every
/// `sample_interval`; the runner shortens steps so that sample times are hit
/// exactly.
#[derive(Debug, Clone)]
pub struct Recorder {
    sample_interval: f64,
    t0: f64,
    samples_taken: u64,
    series: ObservableSeries,
}

impl Recorder {
    pub fn new(k_list: &[f64], sample_interval: f64) -> Self {
        assert!(sample_interval > 0.0, "sample interval must be positive");
        assert!(k_list.iter().all(|&k| k > 1.0), "k_list entries must exceed 1");
        Self { sample_interval, t0: 0.0, samples_taken: 0, series: ObservableSeries::new(k_list) }
    }

    pub fn k_list(&self) -> &[f64] {
        &self.series.k_list
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn series(&self) -> &ObservableSeries {
        &self.series
    }

    pub fn into_series(self) -> ObservableSeries {
        self.series
    }

    /// Resets the series and takes the first sample.
    pub fn start(&mut self, state: &State, grid: &Grid, params: &ModelParams) -> Result<(), FieldError> {
        self.series.rows.clear();
        self.t0 = state.t;
        self.samples_taken = 0;
        self.sample(state, grid, params, 0)
    }

    /// Next scheduled sample time.
    pub fn next_sample_time(&self) -> f64 {
        self.t0 + self.samples_taken as f64 * self.sample_interval
    }

    pub fn last_time(&self) -> Option<f64> {
        self.series.rows.last().map(|r| r.t)
    }

    /// Records `state` unconditionally (if its time is new) and advances the schedule past it.
    pub fn sample(&mut self, state: &State, grid: &Grid, params: &ModelParams, retries: u64) -> Result<(), FieldError> {
        if self.last_time().is_some_and(|t| state.t <= t) {
            return Ok(());
        }
        let row = record(state, grid, params, &self.series.k_list, retries)?;
        self.series.rows.push(row);
        while self.next_sample_time() <= state.t + 1e-12 * state.t.abs().max(1.0) {
            self.samples_taken += 1;
        }
        Ok(())
    }
}

/// Power-mean monotonicity and the sup-norm bound for one row.
///
/// For `u ≥ 0`, `k ↦ (∫u^k / |Ω|)^{1/k}` is nondecreasing and bounded by `‖u‖_∞`.
pub fn row_is_consistent(row: &ObservableRow, beta: f64, k_list: &[f64], measure: f64, rel_tol: f64) -> bool {
    let mut means: Vec<(f64, f64)> = vec![(1.0, row.mass), (beta, row.int_u_beta)];
    means.extend(k_list.iter().copied().zip(row.int_u_k.iter().copied()));
    means.sort_by(|a, b| a.0.total_cmp(&b.0));
    let means: Vec<f64> = means.iter().map(|&(k, i)| (i.max(0.0) / measure).powf(1.0 / k)).collect();
    let slack = |x: f64| rel_tol * x.abs() + 1e-300;
    means.windows(2).all(|w| w[1] >= w[0] - slack(w[0]))
        && means.iter().all(|m| row.linf_u >= m - slack(*m))
}

/// True when the last quarter of `values` never exceeds the middle half by
/// more than [`PLATEAU_FACTOR`]. Series shorter than 4 samples pass trivially.
pub fn plateau(values: &[f64]) -> bool {
    let n = values.len();
    if n < 4 {
        return true;
    }
    let mid_max = values[n / 4..3 * n / 4].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last_max = values[3 * n / 4..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    last_max <= PLATEAU_FACTOR * mid_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryOptions {
    /// Mass cap `y1`; `None` when no finite cap exists (e.g. `b = 0`).
    pub y1: Option<f64>,
    pub linf_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub name: String,
    pub max: f64,
    pub plateau: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub columns: Vec<ColumnSummary>,
    pub envelope_m0: f64,
    pub mass_envelope_ok: bool,
    pub linf_bounded_below_threshold: bool,
    pub lk_plateau_detected: bool,
}

impl SeriesSummary {
    pub fn column(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn all_ok(&self) -> bool {
        self.mass_envelope_ok && self.linf_bounded_below_threshold && self.lk_plateau_detected
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mass_envelope_ok={}", self.mass_envelope_ok);
        let _ = writeln!(out, "linf_bounded_below_threshold={}", self.linf_bounded_below_threshold);
        let _ = writeln!(out, "lk_plateau_detected={}", self.lk_plateau_detected);
        let _ = writeln!(out, "envelope_m0={}", fmt_f64(self.envelope_m0));
        for c in &self.columns {
            let _ = writeln!(out, "max_{}={}", c.name, fmt_f64(c.max));
            let _ = writeln!(out, "plateau_{}={}", c.name, c.plateau);
        }
        out
    }
}

/// Column maxima and boundedness verdicts.
///
/// # Panics
/// On an empty series.
pub fn summarize(series: &ObservableSeries, opts: &SummaryOptions) -> SeriesSummary {
    assert!(!series.is_empty(), "cannot summarize an empty series");
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut columns = Vec::new();
    let mut add = |name: String, values: Vec<f64>| {
        columns.push(ColumnSummary { max: max(&values), plateau: plateau(&values), name });
    };
    add("mass".into(), series.column(|r| r.mass));
    add("int_u_beta".into(), series.column(|r| r.int_u_beta));
    for (i, &k) in series.k_list.iter().enumerate() {
        add(k_label(k), series.column(|r| r.int_u_k[i]));
    }
    add("linf_u".into(), series.column(|r| r.linf_u));
    add("linf_v".into(), series.column(|r| r.linf_v));

    let initial_mass = series.rows[0].mass;
    let m0 = opts.y1.map_or(initial_mass, |y1| initial_mass.max(y1));
    let mass_max = columns[0].max;
    let linf = columns.iter().find(|c| c.name == "linf_u").expect("linf column");
    let linf_ok = linf.max < opts.linf_threshold && linf.plateau;
    let lk_ok = columns
        .iter()
        .filter(|c| c.name.starts_with("int_u_k"))
        .all(|c| c.plateau);

    SeriesSummary {
        envelope_m0: m0,
        mass_envelope_ok: mass_max <= m0 * (1.0 + MASS_ENVELOPE_SLACK),
        linf_bounded_below_threshold: linf_ok,
        lk_plateau_detected: lk_ok,
        columns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;
    use crate::params::Tau;

    fn row(t: f64, v: f64) -> ObservableRow {
        ObservableRow {
            t,
            mass: v,
            int_u_beta: v,
            int_u_k: vec![v, v, v],
            linf_u: v,
            linf_v: v,
            dt: 0.1,
            retries: 0,
        }
    }

    fn series(values: &[f64]) -> ObservableSeries {
        let mut s = ObservableSeries::new(&DEFAULT_K_LIST);
        for (i, v) in values.iter().enumerate() {
            s.push(row(i as f64, *v)).unwrap();
        }
        s
    }

    const OPTS: SummaryOptions = SummaryOptions { y1: Some(1.0), linf_threshold: 1e8 };

    #[test]
    fn record_constant_state() {
        let g = Grid::line(1.0, 8).unwrap();
        let params = ModelParams::new(1.0, 1.0, 1.0, 1.5, 3.0, Tau::Parabolic).unwrap();
        let state = State::new(g.field(2.0), g.field(0.5));
        let r = record(&state, &g, &params, &[2.0, 4.0], 0).unwrap();
        assert!((r.mass - 2.0).abs() < 1e-14);
        assert!((r.int_u_beta - 8.0).abs() < 1e-13);
        assert!((r.int_u_k[0] - 4.0).abs() < 1e-13);
        assert!((r.int_u_k[1] - 16.0).abs() < 1e-13);
        assert_eq!((r.linf_u, r.linf_v), (2.0, 0.5));
    }

    #[test]
    fn record_flags_non_finite_state() {
        let g = Grid::line(1.0, 4).unwrap();
        let params = ModelParams::new(1.0, 1.0, 1.0, 1.5, 3.0, Tau::Parabolic).unwrap();
        let u = Field::from_vec(&g, vec![1.0, f64::NAN, 1.0, 1.0]).unwrap();
        assert!(record(&State::new(u, g.field(0.0)), &g, &params, &[2.0], 0).is_err());
    }

    #[test]
    fn flat_series_passes_every_verdict() {
        let s = summarize(&series(&[1.0; 20]), &OPTS);
        assert!(s.mass_envelope_ok && s.linf_bounded_below_threshold && s.lk_plateau_detected);
    }

    #[test]
    fn doubling_series_fails_linf_verdict() {
        let values: Vec<f64> = (0..20).map(|i| 2f64.powi(i)).collect();
        let s = summarize(&series(&values), &OPTS);
        assert!(!s.linf_bounded_below_threshold);
        assert!(!s.lk_plateau_detected);
        assert!(!s.mass_envelope_ok);
    }

    #[test]
    fn decaying_series_plateaus() {
        let values: Vec<f64> = (0..40).map(|i| 1.0 + 10.0 * (-(i as f64) / 3.0).exp()).collect();
        assert!(plateau(&values));
        assert!(!plateau(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.1]));
    }

    #[test]
    fn threshold_breach_fails_linf_verdict() {
        let s = summarize(&series(&[1.0; 8]), &SummaryOptions { y1: Some(1.0), linf_threshold: 0.5 });
        assert!(!s.linf_bounded_below_threshold);
    }

    #[test]
    fn mass_above_envelope_is_flagged() {
        let mut s = series(&[1.0; 8]);
        s.rows[5].mass = 1.01;
        assert!(!summarize(&s, &OPTS).mass_envelope_ok);
        s.rows[5].mass = 1.0 + 1e-7;
        assert!(summarize(&s, &OPTS).mass_envelope_ok);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut s = ObservableSeries::new(&[2.0, 2.5]);
        s.push(ObservableRow {
            t: 0.1,
            mass: 1.0 / 3.0,
            int_u_beta: std::f64::consts::PI,
            int_u_k: vec![1e-300, 7.123456789012345e12],
            linf_u: 2.0,
            linf_v: 0.0,
            dt: 1e-5,
            retries: 3,
        })
        .unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("t,mass,int_u_beta,int_u_k2,int_u_k2.5,linf_u,linf_v,dt,retries\n"));
        assert_eq!(ObservableSeries::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn push_rejects_non_increasing_time() {
        let mut s = series(&[1.0, 1.0]);
        assert!(s.push(row(1.0, 1.0)).is_err());
    }

    #[test]
    fn interpolation() {
        let s = series(&[0.0, 2.0, 4.0]);
        assert_eq!(s.interpolate(0.5, |r| r.mass), Some(1.0));
        assert_eq!(s.interpolate(-1.0, |r| r.mass), Some(0.0));
        assert_eq!(s.interpolate(9.0, |r| r.mass), Some(4.0));
    }

    #[test]
    fn power_means_are_consistent_on_random_states() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = Grid::rect(2.0, 0.5, 8, 8).unwrap();
        let params = ModelParams::new(1.0, 1.0, 1.0, 1.5, 2.5, Tau::Parabolic).unwrap();
        for _ in 0..50 {
            let u = Field::from_vec(&g, (0..g.len()).map(|_| rng.gen_range(0.0..5.0)).collect()).unwrap();
            let r = record(&State::new(u, g.field(0.0)), &g, &params, &DEFAULT_K_LIST, 0).unwrap();
            assert!(row_is_consistent(&r, params.beta(), &DEFAULT_K_LIST, g.measure(), 1e-12));
        }
    }
}
