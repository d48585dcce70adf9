//! Independent oracles: manufactured solutions, the ODE comparison witness
//! for the mass envelope, and refinement-based reference runs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{RunConfig, RunOutput};
use crate::error::ParamError;
use crate::grid::{Field, Grid, State};
use crate::observables::{ObservableRow, ObservableSeries, Recorder};
use crate::operators::FaceScheme;
use crate::params::{ModelParams, Tau};
use crate::stepper::{Forcing, RunError, Stepper, StepperConfig, Termination};

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre rule on `[0, length]`: `panels` panels with
/// `order` nodes each.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(length: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let hp = length / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * hp;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + 0.5 * hp * xi);
                weights.push(0.5 * hp * wi);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// 16 panels × 4 nodes = 64 nodes per axis.
const QUAD_PANELS: usize = 16;
const QUAD_ORDER: usize = 4;

// ---------------------------------------------------------------------------
// Manufactured solutions

/// `u* = A_u + B_u c(x) e^{−t}`, `v* = A_v + B_v c(x) e^{−t}` with
/// `c = cos(πx/L_x)` (times `cos(πy/L_y)` in 2D), made exact by forcings
/// appended to both equations.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub params: ModelParams,
    pub grid: Grid,
    pub u_mean: f64,
    pub u_amp: f64,
    pub v_mean: f64,
    pub v_amp: f64,
    rules: Vec<CompositeRule>,
}

impl ManufacturedCase {
    pub fn new(params: ModelParams, grid: &Grid, u_mean: f64, u_amp: f64, v_mean: f64, v_amp: f64) -> Self {
        assert!(u_mean > u_amp.abs(), "manufactured density must stay positive");
        let rules = grid
            .extent()
            .iter()
            .map(|&l| CompositeRule::new(l, QUAD_PANELS, QUAD_ORDER))
            .collect();
        Self { params, grid: grid.clone(), u_mean, u_amp, v_mean, v_amp, rules }
    }

    /// Same closed forms on a different grid.
    pub fn on_grid(&self, grid: &Grid) -> Self {
        Self::new(self.params, grid, self.u_mean, self.u_amp, self.v_mean, self.v_amp)
    }

    fn wavenumbers(&self) -> [f64; 2] {
        let e = self.grid.extent();
        [PI / e[0], if e.len() == 2 { PI / e[1] } else { 0.0 }]
    }

    /// `c`, `|∇c|²` and `K² = k_x² + k_y²` at a point.
    fn shape(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let [kx, ky] = self.wavenumbers();
        if self.grid.dim() == 1 {
            let c = (kx * x).cos();
            let s = (kx * x).sin();
            (c, kx * kx * s * s, kx * kx)
        } else {
            let (cx, sx) = ((kx * x).cos(), (kx * x).sin());
            let (cy, sy) = ((ky * y).cos(), (ky * y).sin());
            let grad2 = kx * kx * sx * sx * cy * cy + ky * ky * cx * cx * sy * sy;
            (cx * cy, grad2, kx * kx + ky * ky)
        }
    }

    pub fn u_exact(&self, x: f64, y: f64, t: f64) -> f64 {
        self.u_mean + self.u_amp * self.shape(x, y).0 * (-t).exp()
    }

    pub fn v_exact(&self, x: f64, y: f64, t: f64) -> f64 {
        self.v_mean + self.v_amp * self.shape(x, y).0 * (-t).exp()
    }

    pub fn u_field(&self, grid: &Grid, t: f64) -> Field {
        grid.field_from_fn(|x, y| self.u_exact(x, y, t))
    }

    pub fn v_field(&self, grid: &Grid, t: f64) -> Field {
        grid.field_from_fn(|x, y| self.v_exact(x, y, t))
    }

    /// `∫_Ω u*^β` by tensor composite Gauss-Legendre.
    pub fn nonlocal_integral(&self, t: f64) -> f64 {
        let beta = self.params.beta();
        match self.rules.as_slice() {
            [rx] => rx.integrate(|x| self.u_exact(x, 0.0, t).powf(beta)),
            [rx, ry] => rx.integrate(|x| ry.integrate(|y| self.u_exact(x, y, t).powf(beta))),
            _ => unreachable!("grids are 1D or 2D"),
        }
    }

    /// Pointwise forcings `(f_u, f_v)` at time `t`, given `J = ∫u*^β`.
    pub fn forcing_at(&self, x: f64, y: f64, t: f64, nonlocal: f64) -> (f64, f64) {
        let p = &self.params;
        let (c, grad2, k2) = self.shape(x, y);
        let e = (-t).exp();
        let u = self.u_mean + self.u_amp * c * e;
        let v = self.v_mean + self.v_amp * c * e;
        let u_t = -self.u_amp * c * e;
        let v_t = -self.v_amp * c * e;
        let lap_u = -k2 * self.u_amp * c * e;
        let lap_v = -k2 * self.v_amp * c * e;
        let grad_u_dot_grad_v = self.u_amp * self.v_amp * e * e * grad2;
        let u_alpha = u.powf(p.alpha());
        let f_u = u_t - lap_u + p.chi() * (grad_u_dot_grad_v + u * lap_v) - p.a() * u_alpha + p.b() * u_alpha * nonlocal;
        let f_v = p.tau().value() * v_t - lap_v + v - u;
        (f_u, f_v)
    }
}

/// Cell-center forcing for one grid.
pub struct ManufacturedForcing {
    case: ManufacturedCase,
    centers: Vec<[f64; 2]>,
}

impl ManufacturedForcing {
    pub fn new(case: ManufacturedCase) -> Self {
        let g = &case.grid;
        let centers = (0..g.len()).map(|k| g.center(k)).collect();
        Self { case, centers }
    }
}

impl Forcing for ManufacturedForcing {
    fn eval(&self, t: f64, f_u: &mut Field, f_v: &mut Field) {
        let j = self.case.nonlocal_integral(t);
        for (k, [x, y]) in self.centers.iter().enumerate() {
            let (fu, fv) = self.case.forcing_at(*x, *y, t, j);
            f_u.values_mut()[k] = fu;
            f_v.values_mut()[k] = fv;
        }
    }
}

/// Default manufactured case: `u* = 2 + cos(πx/L) e^{−t}`, `v* = 2 + 0.5 cos(πx/L) e^{−t}`.
pub fn build_mms_case(params: ModelParams, grid: &Grid) -> ManufacturedCase {
    ManufacturedCase::new(params, grid, 2.0, 1.0, 2.0, 0.5)
}

/// Coefficients used by the default convergence studies (integer exponents,
/// mild reaction so explicit treatment is stable at the coarse time steps).
pub fn default_mms_params() -> ModelParams {
    ModelParams::new(1.0, 0.5, 0.1, 2.0, 2.0, Tau::Parabolic).expect("valid constants")
}

/// Zero-amplitude case sitting on the homogeneous equilibrium; its forcing vanishes.
pub fn equilibrium_mms_case(params: ModelParams, grid: &Grid) -> ManufacturedCase {
    let ustar = params.homogeneous_equilibrium(grid.measure()).expect("b > 0");
    ManufacturedCase::new(params, grid, ustar, 0.0, ustar, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub cells: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub error_u: f64,
    pub error_v: f64,
    /// `log2(e_{prev} / e)`; `None` on the first level.
    pub order_u: Option<f64>,
    pub order_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn min_order_u(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.order_u).fold(f64::INFINITY, f64::min)
    }

    pub fn min_order_v(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.order_v).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,dt,error_u,error_v,order_u,order_v\n");
        let opt = |o: Option<f64>| o.map_or(String::new(), |v| format!("{v:.16e}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.level,
                r.h,
                r.dt,
                r.error_u,
                r.error_v,
                opt(r.order_u),
                opt(r.order_v)
            );
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("at least 3 refinement levels required, got {0}")]
    TooFewLevels(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("level {level} terminated with {termination:?}: {message}")]
    Terminated { level: usize, termination: Termination, message: String },
}

/// L² errors of `(u, v)` at `t_end` against the closed forms.
pub fn mms_errors(case: &ManufacturedCase, level: Level, t_end: f64, face: FaceScheme) -> Result<(f64, f64), StudyError> {
    let mut cells: Vec<usize> = vec![level.cells; case.grid.dim()];
    // keep the aspect ratio of the template grid
    if case.grid.dim() == 2 {
        let ratio = case.grid.ny() as f64 / case.grid.nx() as f64;
        cells[1] = ((level.cells as f64) * ratio).round() as usize;
    }
    let grid = Grid::new(case.grid.extent(), &cells).expect("refined grid");
    let case = case.on_grid(&grid);
    let cfg = StepperConfig { face, ..StepperConfig::fixed_dt(level.dt) };
    let mut stepper = Stepper::new(&grid, case.params, cfg)?.with_forcing(Box::new(ManufacturedForcing::new(case.clone())));
    let initial = State::new(case.u_field(&grid, 0.0), case.v_field(&grid, 0.0));
    let mut recorder = Recorder::new(&[2.0], t_end);
    let result = stepper.run(initial, t_end, &mut recorder)?;
    if result.termination != Termination::ReachedTEnd {
        return Err(StudyError::Terminated {
            level: level.cells,
            termination: result.termination,
            message: result.message.unwrap_or_default(),
        });
    }
    let l2 = |num: &Field, exact: &Field| {
        let s: f64 = num.values().iter().zip(exact.values()).map(|(a, b)| (a - b).powi(2)).sum();
        (s * grid.cell_volume()).sqrt()
    };
    let t = result.state.t;
    Ok((l2(&result.state.u, &case.u_field(&grid, t)), l2(&result.state.v, &case.v_field(&grid, t))))
}

/// Runs every level (in parallel) and reports errors with observed orders.
/// Consecutive levels are assumed to refine by a factor of 2.
pub fn convergence_study(
    case: &ManufacturedCase,
    levels: &[Level],
    t_end: f64,
    face: FaceScheme,
) -> Result<ConvergenceTable, StudyError> {
    if levels.len() < 3 {
        return Err(StudyError::TooFewLevels(levels.len()));
    }
    let errors: Vec<(f64, f64)> = levels
        .par_iter()
        .map(|lvl| mms_errors(case, *lvl, t_end, face))
        .collect::<Result<_, _>>()?;
    let mut table = ConvergenceTable::default();
    for (i, (lvl, &(eu, ev))) in levels.iter().zip(&errors).enumerate() {
        let order = |prev: f64, cur: f64| (prev / cur).log2();
        table.rows.push(ConvergenceRow {
            level: i,
            h: case.grid.extent()[0] / lvl.cells as f64,
            dt: lvl.dt,
            error_u: eu,
            error_v: ev,
            order_u: (i > 0).then(|| order(errors[i - 1].0, eu)),
            order_v: (i > 0).then(|| order(errors[i - 1].1, ev)),
        });
    }
    Ok(table)
}

/// Space refinement with `dt = dt_factor · h²`, so that the first-order time
/// error scales like the second-order space error.
pub fn spatial_levels(extent: f64, base_cells: usize, count: usize, dt_factor: f64) -> Vec<Level> {
    (0..count)
        .map(|i| {
            let cells = base_cells << i;
            let h = extent / cells as f64;
            Level { cells, dt: dt_factor * h * h }
        })
        .collect()
}

/// Time refinement on a fixed fine grid.
pub fn temporal_levels(cells: usize, base_dt: f64, count: usize) -> Vec<Level> {
    (0..count).map(|i| Level { cells, dt: base_dt / f64::from(1u32 << i) }).collect()
}

// ---------------------------------------------------------------------------
// ODE comparison oracle

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Sampling box for the sign hypothesis: `t ∈ [0, T]`, `y ∈ (y1, y_max]`.
    pub y_max: Option<f64>,
    pub t_samples: usize,
    pub y_samples: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { y_max: None, t_samples: 200, y_samples: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisViolation {
    pub t: f64,
    pub y: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub max_y: f64,
    /// `max(y1, y0)`
    pub cap: f64,
    /// `max(0, max_y − cap)`
    pub excess: f64,
    pub steps: usize,
    /// First sampled point with `y > y1` and `phi(t, y) > 0`, if any.
    pub violation: Option<HypothesisViolation>,
}

impl OracleReport {
    pub fn respects_cap(&self, tol: f64) -> bool {
        self.excess <= tol
    }
}

/// Integrates `y' = phi(t, y)`, `y(0) = y0`, over `[0, t_end]` with classical
/// fourth-order Runge-Kutta at fixed `dt` and reports the trajectory maximum
/// against the comparison cap `max(y1, y0)`.
///
/// The sign hypothesis (`phi ≤ 0` whenever `y > y1`) is checked on a uniform
/// sample grid; a violation is reported but does not stop the integration.
pub fn ode_comparison_oracle(
    phi: impl Fn(f64, f64) -> f64,
    y0: f64,
    y1: f64,
    t_end: f64,
    dt: f64,
    opts: &OracleOptions,
) -> OracleReport {
    assert!(dt > 0.0 && t_end > 0.0 && y0 >= 0.0 && y1 > 0.0);
    let cap = y1.max(y0);
    let y_max = opts.y_max.unwrap_or(2.0 * cap + 1.0);

    let mut violation = None;
    'scan: for i in 0..=opts.t_samples {
        let t = t_end * i as f64 / opts.t_samples as f64;
        for j in 1..=opts.y_samples {
            let y = y1 + (y_max - y1) * j as f64 / opts.y_samples as f64;
            let rate = phi(t, y);
            if rate > 0.0 {
                violation = Some(HypothesisViolation { t, y, rate });
                break 'scan;
            }
        }
    }

    let f = |t: f64, y: f64| phi(t, y.max(0.0));
    let mut t = 0.0;
    let mut y = y0;
    let mut max_y = y0;
    let mut steps = 0;
    while t < t_end - 1e-14 * t_end {
        let h = dt.min(t_end - t);
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        steps += 1;
        max_y = max_y.max(y);
    }
    OracleReport { max_y, cap, excess: (max_y - cap).max(0.0), steps, violation }
}

// ---------------------------------------------------------------------------
// Refinement oracles

/// Reference run of `config` with `h` and every time-step control refined by
/// `factor ≥ 4`.
pub fn fine_grid_oracle(config: &RunConfig, factor: usize) -> Result<RunOutput, crate::config::ExecuteError> {
    assert!(factor >= 4, "fine-grid oracle needs refinement factor ≥ 4");
    config.refined(factor).execute()
}

/// Largest relative mismatch of a column between `series` and `reference`
/// at the sample times of `series` (reference linearly interpolated).
pub fn max_relative_mismatch(
    series: &ObservableSeries,
    reference: &ObservableSeries,
    column: impl Fn(&ObservableRow) -> f64 + Copy,
) -> f64 {
    series
        .rows
        .iter()
        .map(|r| {
            let refv = reference.interpolate(r.t, column).expect("nonempty reference");
            let v = column(r);
            (v - refv).abs() / refv.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}
