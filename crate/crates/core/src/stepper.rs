//! IMEX Euler time integration with adaptive steps and blow-up detection.
//!
//! One step from `(u_n, v_n)` with step `dt`:
//!
//! 1. explicit terms at `t_n`: `E = −χ ∇·(u_n ∇v_n) + a u_n^α − b u_n^α ∫u_n^β`
//! 2. `(I − dt Δ_h) u_{n+1} = u_n + dt E`
//! 3. `τ = 1`: `((1 + dt) I − dt Δ_h) v_{n+1} = v_n + dt u_n`;
//!    `τ = 0`: `(I − Δ_h) v_{n+1} = u_{n+1}`
//! 4. audit positivity and finiteness; on violation halve `dt` and redo.
//!
//! A run terminates with `BlowupDetected` when `‖u‖_∞` exceeds the configured
//! threshold or when positivity can only be kept with `dt < dt_min`. This
//! mirrors the dichotomy "global existence or sup-norm blow-up"; it is a
//! report, not a proof of blow-up.

use crate::error::{FieldError, ParamError};
use crate::grid::{integrate, linf_norm, Field, Grid, State, POSITIVITY_TOL};
use crate::helmholtz::{HelmholtzSolver, SolveError};
use crate::observables::Recorder;
use crate::operators::{max_growth_factor, nonlocal_source_into, FaceScheme, OperatorWorkspace};
use crate::params::{ModelParams, Tau};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
    pub linear_tol: f64,
    pub blowup_linf_threshold: f64,
    pub positivity_tol: f64,
    pub max_retries: u32,
    pub face: FaceScheme,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-4,
            dt_min: 1e-12,
            dt_max: 1e-2,
            cfl_safety: 0.4,
            linear_tol: 1e-10,
            blowup_linf_threshold: 1e8,
            positivity_tol: POSITIVITY_TOL,
            max_retries: 20,
            face: FaceScheme::Upwind,
        }
    }
}

impl StepperConfig {
    /// Fixed step size: `dt_min = dt_init = dt_max = dt`.
    pub fn fixed_dt(dt: f64) -> Self {
        Self { dt_init: dt, dt_min: dt, dt_max: dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let bad = |name, reason: String| Err(ParamError::Invalid { name, reason });
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max && self.dt_max.is_finite()) {
            return bad(
                "dt",
                format!(
                    "0 < dt_min ≤ dt_init ≤ dt_max required, got {} / {} / {}",
                    self.dt_min, self.dt_init, self.dt_max
                ),
            );
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad("cfl_safety", format!("must lie in (0, 1], got {}", self.cfl_safety));
        }
        for (name, v) in [
            ("linear_tol", self.linear_tol),
            ("blowup_linf_threshold", self.blowup_linf_threshold),
            ("positivity_tol", self.positivity_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Advanced,
    /// Accepted after one or more dt halvings.
    DtReduced,
    BlowupDetected,
    SolverFailure,
}

impl StepStatus {
    pub fn accepted(self) -> bool {
        matches!(self, StepStatus::Advanced | StepStatus::DtReduced)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    pub dt: f64,
    pub retries: u32,
    pub residual_u: f64,
    pub residual_v: f64,
    pub nonlocal_integral: f64,
    /// `max |a u^α − b u^α I|`
    pub max_source: f64,
    /// `∫ (source + forcing_u)`, the only mass-changing terms
    pub source_integral: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    pub linf_u: f64,
    pub message: Option<String>,
}

impl StepDiagnostics {
    /// `|Δ∫u − dt ∫source|`
    pub fn mass_defect(&self) -> f64 {
        (self.mass_after - self.mass_before - self.dt * self.source_integral).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub status: StepStatus,
    pub diagnostics: StepDiagnostics,
}

/// Extra source terms added to both equations, evaluated explicitly.
pub trait Forcing: Send + Sync {
    fn eval(&self, t: f64, f_u: &mut Field, f_v: &mut Field);
}

/// Outcome of the step-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtChoice {
    pub dt: f64,
    /// `cfl_safety × min(transport, reaction)` before clamping.
    pub unclamped: f64,
    pub transport_bound: f64,
    pub reaction_bound: f64,
}

const BOUND_EPS: f64 = 1e-12;

/// `h / (2 d χ G)`: keeps the upwind outflow of every cell below its content.
pub fn transport_bound(h_min: f64, dim: usize, chi: f64, max_grad_v: f64) -> f64 {
    h_min / (2.0 * dim as f64 * chi * max_grad_v + BOUND_EPS)
}

/// `1 / (a M + b I M)` with `M = max u^{α−1}`.
pub fn reaction_bound(a: f64, b: f64, nonlocal_integral: f64, max_growth: f64) -> f64 {
    1.0 / (a * max_growth + b * nonlocal_integral * max_growth + BOUND_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedTEnd,
    BlowupDetected,
    SolverFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ReachedTEnd => "ReachedTEnd",
            Termination::BlowupDetected => "BlowupDetected",
            Termination::SolverFailure => "SolverFailure",
        }
    }
}

/// Per-step bookkeeping accumulated over accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAudit {
    pub accepted_steps: u64,
    pub retries: u64,
    pub max_mass: f64,
    /// max over steps of `|Δ∫u − dt ∫source| / ∫u_n`
    pub max_rel_mass_defect: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub max_linf_u: f64,
    pub min_dt: f64,
}

impl StepAudit {
    fn new(state: &State, mass: f64) -> Self {
        Self {
            accepted_steps: 0,
            retries: 0,
            max_mass: mass,
            max_rel_mass_defect: 0.0,
            min_u: state.u.min(),
            min_v: state.v.min(),
            max_linf_u: state.u.max(),
            min_dt: f64::INFINITY,
        }
    }

    fn update(&mut self, state: &State, outcome: &StepOutcome) {
        let d = &outcome.diagnostics;
        self.accepted_steps += 1;
        self.retries += u64::from(d.retries);
        self.max_mass = self.max_mass.max(d.mass_after);
        let scale = d.mass_before.abs().max(f64::MIN_POSITIVE);
        self.max_rel_mass_defect = self.max_rel_mass_defect.max(d.mass_defect() / scale);
        self.min_u = self.min_u.min(state.u.min());
        self.min_v = self.min_v.min(state.v.min());
        self.max_linf_u = self.max_linf_u.max(d.linf_u);
        self.min_dt = self.min_dt.min(d.dt);
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: State,
    pub termination: Termination,
    pub audit: StepAudit,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("t_end ({t_end}) must exceed the initial time ({t0})")]
    TimeSpan { t0: f64, t_end: f64 },
    #[error("invalid initial state: {0}")]
    InitialState(#[from] FieldError),
    #[error("initial signal projection failed: {0}")]
    Projection(SolveError),
}

pub struct Stepper {
    grid: Grid,
    params: ModelParams,
    cfg: StepperConfig,
    ops: OperatorWorkspace,
    solver: HelmholtzSolver,
    forcing: Option<Box<dyn Forcing>>,
    explicit_u: Field,
    source: Field,
    force_u: Field,
    force_v: Field,
    rhs: Field,
}

impl Stepper {
    pub fn new(grid: &Grid, params: ModelParams, cfg: StepperConfig) -> Result<Self, ParamError> {
        cfg.validate()?;
        Ok(Self {
            grid: grid.clone(),
            params,
            cfg,
            ops: OperatorWorkspace::new(grid),
            solver: HelmholtzSolver::new(grid, cfg.linear_tol),
            forcing: None,
            explicit_u: Field::zeros(grid),
            source: Field::zeros(grid),
            force_u: Field::zeros(grid),
            force_v: Field::zeros(grid),
            rhs: Field::zeros(grid),
        })
    }

    pub fn with_forcing(mut self, forcing: Box<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    /// Fills the explicit `u` tendency and forcing buffers at `state.t`.
    /// Returns `(∫u^β, max |source|, ∫(source + f_u))`.
    fn explicit_terms(&mut self, state: &State) -> Result<(f64, f64, f64), FieldError> {
        let tol = self.cfg.positivity_tol;
        self.ops
            .chemo_divergence_into(&state.u, &state.v, self.cfg.face, tol, &mut self.explicit_u)?;
        self.explicit_u.scale(-self.params.chi());
        let integral = nonlocal_source_into(&state.u, &self.grid, &self.params, tol, &mut self.source)?;
        self.explicit_u.axpy(1.0, &self.source);
        let max_source = self.source.values().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if let Some(forcing) = &self.forcing {
            forcing.eval(state.t, &mut self.force_u, &mut self.force_v);
            self.explicit_u.axpy(1.0, &self.force_u);
            self.source.axpy(1.0, &self.force_u);
        }
        let source_integral = integrate(&self.source, &self.grid)?;
        Ok((integral, max_source, source_integral))
    }

    /// Step size from the transport and reaction stability bounds, clamped to
    /// `[dt_min, dt_max]`.
    pub fn adapt_dt(&self, state: &State, nonlocal_integral: f64) -> DtChoice {
        let p = &self.params;
        let transport = transport_bound(
            self.grid.min_spacing(),
            self.grid.dim(),
            p.chi(),
            self.ops.max_face_gradient(&state.v),
        );
        let reaction = reaction_bound(p.a(), p.b(), nonlocal_integral, max_growth_factor(&state.u, p.alpha()));
        let unclamped = self.cfg.cfl_safety * transport.min(reaction);
        DtChoice {
            dt: unclamped.clamp(self.cfg.dt_min, self.cfg.dt_max),
            unclamped,
            transport_bound: transport,
            reaction_bound: reaction,
        }
    }

    /// One step with an adaptively chosen `dt`.
    pub fn step(&mut self, state: &State) -> (State, StepOutcome) {
        self.step_capped(state, f64::INFINITY)
    }

    /// One adaptive step whose `dt` never exceeds `dt_cap`.
    pub fn step_capped(&mut self, state: &State, dt_cap: f64) -> (State, StepOutcome) {
        self.step_inner(state, None, dt_cap)
    }

    /// Attempts exactly `dt`, halving on positivity violations.
    pub fn step_with_dt(&mut self, state: &State, dt: f64) -> (State, StepOutcome) {
        self.step_inner(state, Some(dt), f64::INFINITY)
    }

    fn fail(state: &State, status: StepStatus, mut diagnostics: StepDiagnostics, msg: String) -> (State, StepOutcome) {
        diagnostics.message = Some(msg);
        (state.clone(), StepOutcome { status, diagnostics })
    }

    fn step_inner(&mut self, state: &State, forced_dt: Option<f64>, dt_cap: f64) -> (State, StepOutcome) {
        let mut diag = StepDiagnostics::default();
        let linf = match linf_norm(&state.u) {
            Ok(v) => v,
            Err(e) => return Self::fail(state, StepStatus::SolverFailure, diag, e.to_string()),
        };
        diag.linf_u = linf;
        if linf > self.cfg.blowup_linf_threshold {
            let msg = format!("‖u‖∞ = {linf:e} exceeds threshold {:e}", self.cfg.blowup_linf_threshold);
            return Self::fail(state, StepStatus::BlowupDetected, diag, msg);
        }

        let (integral, max_source, source_integral) = match self.explicit_terms(state) {
            Ok(v) => v,
            Err(e) => return Self::fail(state, StepStatus::SolverFailure, diag, e.to_string()),
        };
        diag.nonlocal_integral = integral;
        diag.max_source = max_source;
        diag.source_integral = source_integral;
        diag.mass_before = integrate(&state.u, &self.grid).unwrap_or(f64::NAN);

        let mut dt = match forced_dt {
            Some(dt) => dt,
            None => {
                let mut dt = self.adapt_dt(state, integral).dt;
                if state.step_index == 0 {
                    dt = dt.min(self.cfg.dt_init);
                }
                dt
            }
        };
        dt = dt.min(dt_cap);

        let tol = self.cfg.positivity_tol;
        let mut retries = 0u32;
        loop {
            match self.attempt(state, dt) {
                Ok((u, v, res_u, res_v)) => {
                    let positive = u.check_nonnegative(tol).and(v.check_nonnegative(tol));
                    if let Err(violation) = positive {
                        retries += 1;
                        dt *= 0.5;
                        diag.retries = retries;
                        if dt < self.cfg.dt_min {
                            let msg = format!("dt fell below dt_min keeping positivity ({violation})");
                            return Self::fail(state, StepStatus::BlowupDetected, diag, msg);
                        }
                        if retries > self.cfg.max_retries {
                            let msg = format!("positivity retries exhausted ({violation})");
                            return Self::fail(state, StepStatus::SolverFailure, diag, msg);
                        }
                        continue;
                    }
                    diag.dt = dt;
                    diag.retries = retries;
                    diag.residual_u = res_u;
                    diag.residual_v = res_v;
                    diag.mass_after = integrate(&u, &self.grid).unwrap_or(f64::NAN);
                    let linf_new = u.max();
                    diag.linf_u = linf_new;
                    let next = State {
                        u,
                        v,
                        t: state.t + dt,
                        step_index: state.step_index + 1,
                        dt_last: dt,
                    };
                    let status = if linf_new > self.cfg.blowup_linf_threshold {
                        diag.message = Some(format!(
                            "‖u‖∞ = {linf_new:e} exceeds threshold {:e}",
                            self.cfg.blowup_linf_threshold
                        ));
                        StepStatus::BlowupDetected
                    } else if retries > 0 {
                        StepStatus::DtReduced
                    } else {
                        StepStatus::Advanced
                    };
                    return (next, StepOutcome { status, diagnostics: diag });
                }
                Err(e) => return Self::fail(state, StepStatus::SolverFailure, diag, e.to_string()),
            }
        }
    }

    /// Implicit solves for a trial `dt`. Explicit buffers must be current.
    fn attempt(&mut self, state: &State, dt: f64) -> Result<(Field, Field, f64, f64), SolveError> {
        self.rhs.values_mut().copy_from_slice(state.u.values());
        self.rhs.axpy(dt, &self.explicit_u);
        let u = self.solver.solve(&self.rhs, dt)?;
        let res_u = self.solver.last_residual();

        let v = match self.params.tau() {
            Tau::Parabolic => {
                self.rhs.values_mut().copy_from_slice(state.v.values());
                self.rhs.axpy(dt, &state.u);
                if self.forcing.is_some() {
                    self.rhs.axpy(dt, &self.force_v);
                }
                self.rhs.scale(1.0 / (1.0 + dt));
                self.solver.solve(&self.rhs, dt / (1.0 + dt))?
            }
            Tau::Elliptic => {
                self.rhs.values_mut().copy_from_slice(u.values());
                if let Some(forcing) = &self.forcing {
                    let mut fu = Field::zeros(&self.grid);
                    forcing.eval(state.t + dt, &mut fu, &mut self.force_v);
                    self.rhs.axpy(1.0, &self.force_v);
                }
                self.solver.solve(&self.rhs, 1.0)?
            }
        };
        let res_v = self.solver.last_residual();
        if u.check_finite().is_err() || v.check_finite().is_err() {
            return Err(SolveError::NonFinite);
        }
        Ok((u, v, res_u, res_v))
    }

    /// Replaces `v` by the stationary signal `(I − Δ_h)^{-1} u` (parabolic-elliptic mode).
    pub fn project_signal(&mut self, state: &mut State) -> Result<(), SolveError> {
        let mut rhs = state.u.clone();
        if let Some(forcing) = &self.forcing {
            let mut fu = Field::zeros(&self.grid);
            let mut fv = Field::zeros(&self.grid);
            forcing.eval(state.t, &mut fu, &mut fv);
            rhs.axpy(1.0, &fv);
        }
        state.v = self.solver.solve(&rhs, 1.0)?;
        Ok(())
    }

    pub fn run(&mut self, initial: State, t_end: f64, recorder: &mut Recorder) -> Result<RunResult, RunError> {
        self.run_with(initial, t_end, recorder, |_, _| {})
    }

    /// Advances until `t_end` or termination, calling `on_step` after every
    /// step attempt (accepted or not).
    pub fn run_with(
        &mut self,
        initial: State,
        t_end: f64,
        recorder: &mut Recorder,
        mut on_step: impl FnMut(&State, &StepOutcome),
    ) -> Result<RunResult, RunError> {
        if !(t_end > initial.t) {
            return Err(RunError::TimeSpan { t0: initial.t, t_end });
        }
        let mut state = initial;
        if self.params.tau() == Tau::Elliptic {
            self.project_signal(&mut state).map_err(RunError::Projection)?;
        }
        state.validate(&self.grid, self.cfg.positivity_tol)?;
        recorder.start(&state, &self.grid, &self.params)?;

        let mass0 = integrate(&state.u, &self.grid)?;
        let mut audit = StepAudit::new(&state, mass0);
        let eps = 1e-12 * t_end.abs().max(1.0);
        let mut termination = Termination::ReachedTEnd;
        let mut message = None;

        while state.t < t_end - eps {
            let target = recorder.next_sample_time().min(t_end);
            let (mut next, outcome) = self.step_capped(&state, target - state.t);
            if (next.t - target).abs() <= eps {
                next.t = target;
            }
            on_step(&next, &outcome);
            let status = outcome.status;
            if status.accepted() || (status == StepStatus::BlowupDetected && next.t > state.t) {
                audit.update(&next, &outcome);
                state = next;
            }
            if !status.accepted() {
                termination = match status {
                    StepStatus::BlowupDetected => Termination::BlowupDetected,
                    _ => Termination::SolverFailure,
                };
                message = outcome.diagnostics.message;
                break;
            }
            if state.t >= recorder.next_sample_time() - eps {
                if let Err(e) = recorder.sample(&state, &self.grid, &self.params, audit.retries) {
                    termination = Termination::SolverFailure;
                    message = Some(format!("non-finite observable: {e}"));
                    break;
                }
            }
        }
        if termination != Termination::SolverFailure && state.u.check_finite().is_ok() {
            // final state is always part of the series
            let _ = recorder.sample(&state, &self.grid, &self.params, audit.retries);
        }
        Ok(RunResult { state, termination, audit, message })
    }
}
