//! Command-line front end.
//!
//! Every failure ends with one machine-parsable line on stderr,
//! `error kind=<kind> key=<key> line=<line> message="<text>"`, and a nonzero
//! exit code (see [`ExitCode`]).

use std::collections::HashSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{ConfigError, ExecuteError, RunConfig, RunOutput};
use crate::grid::Grid;
use crate::observables::ObservableSeries;
use crate::operators::FaceScheme;
use crate::params::{classify_exponents, mass_envelope_raw, ModelParams};
use crate::snapshot::{grid_csv, write_snapshot};
use crate::stepper::Termination;
use crate::verification::{
    build_mms_case, convergence_study, default_mms_params, ode_comparison_oracle, spatial_levels, temporal_levels,
    OracleOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Failure = 1,
    Config = 2,
    Blowup = 3,
    Solver = 4,
}

#[derive(Debug, Parser)]
#[command(name = "ks-nonlocal", version, about = "Keller-Segel system with nonlocal logistic source")]
struct Cli {
    /// Worker threads for parallel subcommands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify (alpha, beta, n) and print `alpha,beta,n,regime,y1,m0`.
    Classify(ClassifyArgs),
    /// Run a simulation from a config file; `--key value` pairs override file values.
    Run(RunArgs),
    /// Classify a grid of (alpha, beta) points, optionally with a short run each.
    Sweep(SweepArgs),
    /// Manufactured-solution convergence study.
    Mms(MmsArgs),
    /// Mass-envelope audit of a finished run plus comparison-oracle fixtures.
    BoundCheck(BoundCheckArgs),
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Domain measure |Ω|.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Initial mass ∫u0 (enters m0 only).
    #[arg(long, default_value_t = 0.0)]
    mass: f64,
    /// Print the column header first.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// `--model.alpha 1.5` or `--model.alpha=1.5`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    alpha_min: f64,
    #[arg(long, default_value_t = 3.0)]
    alpha_max: f64,
    #[arg(long, default_value_t = 1.0)]
    beta_min: f64,
    #[arg(long, default_value_t = 4.0)]
    beta_max: f64,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Output CSV; rows are appended when resuming.
    #[arg(long)]
    out: PathBuf,
    /// Completed-point ledger (default: `<out>.ledger`).
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Base config for a short run at every point; `n` is then the grid dimension.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.t_end` of the base config.
    #[arg(long)]
    t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Study {
    Spatial,
    Temporal,
}

#[derive(Debug, Args)]
struct MmsArgs {
    #[arg(long, value_enum, default_value_t = Study::Spatial)]
    study: Study,
    #[arg(long, default_value = "central")]
    face: FaceScheme,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Coarsest mesh (spatial study) or the fixed mesh (temporal study).
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    t_end: f64,
    /// Spatial study: `dt = dt_factor · h²`.
    #[arg(long, default_value_t = 0.25)]
    dt_factor: f64,
    /// Temporal study: coarsest dt.
    #[arg(long, default_value_t = 0.01)]
    base_dt: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 1 unless the smallest observed order of u reaches this value.
    #[arg(long)]
    min_order: Option<f64>,
}

#[derive(Debug, Args)]
struct BoundCheckArgs {
    run_dir: PathBuf,
    /// Step of the comparison-oracle integrations.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

/// Error reported on stderr as a single `error ...` line.
#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: &'static str,
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
    pub code: ExitCode,
}

impl CliError {
    fn new(kind: &'static str, code: ExitCode, message: impl Into<String>) -> Self {
        Self { kind, key: None, line: None, message: message.into(), code }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new("io", ExitCode::Failure, format!("{}: {e}", path.display()))
    }

    pub fn render(&self) -> String {
        format!(
            "error kind={} key={} line={} message=\"{}\"",
            self.kind,
            self.key.as_deref().unwrap_or("-"),
            self.line.map_or("-".to_string(), |l| l.to_string()),
            self.message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ")
        )
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Io { .. } => "io",
            ConfigError::Syntax { .. } => "syntax",
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::Duplicate { .. } => "duplicate_key",
            ConfigError::Type { .. } => "type",
            ConfigError::Constraint { .. } => "constraint",
        };
        Self { kind, key: e.key().map(str::to_string), line: e.line(), message: e.to_string(), code: ExitCode::Config }
    }
}

impl From<ExecuteError> for CliError {
    fn from(e: ExecuteError) -> Self {
        match e {
            ExecuteError::Run(crate::stepper::RunError::Projection(_)) => {
                Self::new("solver", ExitCode::Solver, e.to_string())
            }
            _ => Self::new("setup", ExitCode::Config, e.to_string()),
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                return ExitCode::Ok as i32;
            }
            let _ = write!(err, "{text}");
            let ce = CliError::new("usage", ExitCode::Config, text.lines().next().unwrap_or("").to_string());
            let _ = writeln!(err, "{}", ce.render());
            return ExitCode::Config as i32;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(cli.command, &mut buf));
                let _ = out.write_all(&buf);
                r
            }
            Err(e) => Err(CliError::new("usage", ExitCode::Config, e.to_string())),
        },
        None => dispatch(cli.command, out),
    };
    match result {
        Ok(code) => code as i32,
        Err(e) => {
            let _ = writeln!(err, "{}", e.render());
            e.code as i32
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    match command {
        Command::Classify(a) => classify(&a, out),
        Command::Run(a) => run(&a, out),
        Command::Sweep(a) => sweep(&a, out),
        Command::Mms(a) => mms(&a, out),
        Command::BoundCheck(a) => bound_check(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::new("io", ExitCode::Failure, e.to_string()))
}

pub const CLASSIFY_HEADER: &str = "alpha,beta,n,regime,y1,m0";

fn classify(a: &ClassifyArgs, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    if !(a.omega > 0.0) || a.mass < 0.0 {
        return Err(CliError::new("usage", ExitCode::Config, "omega must be positive and mass nonnegative"));
    }
    let regime = classify_exponents(a.alpha, a.beta, a.n);
    let env = mass_envelope_raw(a.a, a.b, a.beta, a.mass, a.omega);
    let mut text = String::new();
    if a.header {
        let _ = writeln!(text, "{CLASSIFY_HEADER}");
    }
    let _ = writeln!(text, "{},{},{},{},{},{}", a.alpha, a.beta, a.n, regime, env.y1, env.m0);
    emit(out, &text)?;
    Ok(ExitCode::Ok)
}

/// Splits `--key value` / `--key=value` tokens into pairs.
pub fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(body) = tok.strip_prefix("--") else {
            return Err(CliError::new("usage", ExitCode::Config, format!("expected `--key value`, got `{tok}`")));
        };
        match body.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::new("usage", ExitCode::Config, format!("missing value for `--{body}`")))?;
                pairs.push((body.to_string(), v.clone()));
            }
        }
    }
    Ok(pairs)
}

/// Writes the run artifacts into `config.output.dir`.
pub fn write_run_artifacts(config: &RunConfig, output: &RunOutput) -> Result<(), CliError> {
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let put = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    put("resolved_config.txt", &config.to_resolved_text())?;
    put("observables.csv", &output.series.to_csv())?;
    put("summary.txt", &summary_text(output))?;
    if config.output.snapshots {
        for (name, field, t) in [
            ("u_initial.snap", &output.initial.u, output.initial.t),
            ("v_initial.snap", &output.initial.v, output.initial.t),
            ("u_final.snap", &output.result.state.u, output.result.state.t),
            ("v_final.snap", &output.result.state.v, output.result.state.t),
        ] {
            let p = dir.join(name);
            write_snapshot(&p, &config.grid, field, t).map_err(|e| CliError::io(&p, e))?;
        }
    }
    if config.output.grid_csv {
        put("final_grid.csv", &grid_csv(&config.grid, &output.result.state.u, &output.result.state.v))?;
    }
    Ok(())
}

fn summary_text(output: &RunOutput) -> String {
    let r = &output.result;
    let mut s = String::new();
    let _ = writeln!(s, "termination={}", r.termination.as_str());
    let _ = writeln!(s, "t_final={}", r.state.t);
    if let Some(report) = &output.report {
        let _ = writeln!(s, "regime={}", report.regime);
        let _ = writeln!(s, "y1={}", report.y1);
    }
    let _ = writeln!(s, "accepted_steps={}", r.audit.accepted_steps);
    let _ = writeln!(s, "retries={}", r.audit.retries);
    let _ = writeln!(s, "min_u={:e}", r.audit.min_u);
    let _ = writeln!(s, "min_v={:e}", r.audit.min_v);
    let _ = writeln!(s, "min_dt={:e}", r.audit.min_dt);
    let _ = writeln!(s, "max_rel_mass_defect={:e}", r.audit.max_rel_mass_defect);
    s.push_str(&output.summary.to_text());
    if let Some(m) = &r.message {
        let _ = writeln!(s, "message={}", m.replace('\n', " "));
    }
    s
}

fn termination_code(t: Termination) -> ExitCode {
    match t {
        Termination::ReachedTEnd => ExitCode::Ok,
        Termination::BlowupDetected => ExitCode::Blowup,
        Termination::SolverFailure => ExitCode::Solver,
    }
}

fn run(a: &RunArgs, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    let overrides = parse_overrides(&a.overrides)?;
    let config = RunConfig::from_file_with_overrides(&a.config, &overrides)?;
    let output = config.execute()?;
    write_run_artifacts(&config, &output)?;
    emit(out, &summary_text(&output))?;
    let code = termination_code(output.result.termination);
    if code != ExitCode::Ok {
        let kind = if code == ExitCode::Blowup { "blowup" } else { "solver" };
        return Err(CliError::new(kind, code, output.result.message.clone().unwrap_or_default()));
    }
    Ok(code)
}

pub const SWEEP_HEADER: &str = "alpha,beta,n,regime,termination,t_final,max_mass,max_linf_u,mass_envelope_ok,linf_bounded_below_threshold,lk_plateau_detected";

/// Grid values `min + i·step` up to `max`, rounded to 12 decimals so that
/// labels stay stable.
pub fn sweep_axis(min: f64, max: f64, step: f64) -> Vec<f64> {
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| ((min + i as f64 * step) * 1e12).round() / 1e12).collect()
}

fn sweep_row(alpha: f64, beta: f64, n: u32, base: Option<&RunConfig>) -> String {
    let regime = classify_exponents(alpha, beta, n);
    let mut row = format!("{alpha},{beta},{n},{regime}");
    let Some(base) = base else {
        row.push_str(",,,,,,,");
        return row;
    };
    let mut cfg = base.clone();
    let params = if cfg.allow_degenerate {
        ModelParams::degenerate(cfg.params.chi(), cfg.params.a(), cfg.params.b(), alpha, beta, cfg.params.tau())
    } else {
        ModelParams::new(cfg.params.chi(), cfg.params.a(), cfg.params.b(), alpha, beta, cfg.params.tau())
    };
    let result = params.map_err(|e| e.to_string()).and_then(|p| {
        cfg.params = p;
        cfg.execute().map_err(|e| e.to_string())
    });
    match result {
        Ok(o) => {
            let s = &o.summary;
            let col = |name: &str| s.column(name).map_or(f64::NAN, |c| c.max);
            let _ = write!(
                row,
                ",{},{},{},{},{},{},{}",
                o.result.termination.as_str(),
                o.result.state.t,
                col("mass"),
                col("linf_u"),
                s.mass_envelope_ok,
                s.linf_bounded_below_threshold,
                s.lk_plateau_detected
            );
        }
        Err(_) => row.push_str(",error,,,,,,"),
    }
    row
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    if !(a.step > 0.0) || a.alpha_max < a.alpha_min || a.beta_max < a.beta_min {
        return Err(CliError::new("usage", ExitCode::Config, "need step > 0 and min ≤ max on both axes"));
    }
    let base = match &a.config {
        Some(path) => {
            let mut overrides = Vec::new();
            if let Some(t) = a.t_end {
                overrides.push(("run.t_end".to_string(), t.to_string()));
            }
            Some(RunConfig::from_file_with_overrides(path, &overrides)?)
        }
        None => None,
    };
    let n = base.as_ref().map_or(a.n, |c| c.grid.dim() as u32);

    let ledger_path = a.ledger.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".ledger");
        PathBuf::from(p)
    });
    let done: HashSet<String> = match File::open(&ledger_path) {
        Ok(f) => BufReader::new(f).lines().map_while(Result::ok).filter(|l| !l.is_empty()).collect(),
        Err(_) => HashSet::new(),
    };
    let fresh = fs::metadata(&a.out).map(|m| m.len() == 0).unwrap_or(true);
    let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(|e| CliError::io(p, e));
    let mut csv = open(&a.out)?;
    if fresh {
        writeln!(csv, "{SWEEP_HEADER}").map_err(|e| CliError::io(&a.out, e))?;
    }
    let ledger = open(&ledger_path)?;

    let points: Vec<(f64, f64, String)> = sweep_axis(a.alpha_min, a.alpha_max, a.step)
        .into_iter()
        .flat_map(|al| sweep_axis(a.beta_min, a.beta_max, a.step).into_iter().map(move |be| (al, be)))
        .map(|(al, be)| (al, be, format!("{al},{be}")))
        .filter(|(_, _, key)| !done.contains(key))
        .collect();
    let skipped = done.len();

    let sinks = Mutex::new((csv, ledger));
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    points.par_iter().for_each(|(al, be, key)| {
        let row = sweep_row(*al, *be, n, base.as_ref());
        let mut guard = sinks.lock().expect("sweep sink");
        let (csv, ledger) = &mut *guard;
        // the ledger entry is written only once the row is durable
        let res = writeln!(csv, "{row}")
            .and_then(|_| csv.flush())
            .and_then(|_| writeln!(ledger, "{key}"))
            .and_then(|_| ledger.flush());
        if let Err(e) = res {
            failure.lock().expect("sweep failure").get_or_insert(CliError::io(&a.out, e));
        }
    });
    if let Some(e) = failure.into_inner().expect("sweep failure") {
        return Err(e);
    }
    emit(out, &format!("points_run={}\npoints_skipped={}\nout={}\n", points.len(), skipped, a.out.display()))?;
    Ok(ExitCode::Ok)
}

fn mms(a: &MmsArgs, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    let bad = |m: &str| CliError::new("usage", ExitCode::Config, m.to_string());
    if !(1..=2).contains(&a.dim) {
        return Err(bad("dim must be 1 or 2"));
    }
    if a.levels < 3 {
        return Err(bad("at least 3 refinement levels required"));
    }
    if !(a.t_end > 0.0 && a.dt_factor > 0.0 && a.base_dt > 0.0) {
        return Err(bad("t_end, dt_factor and base_dt must be positive"));
    }
    let levels = match a.study {
        Study::Spatial => spatial_levels(1.0, a.cells.unwrap_or(16), a.levels, a.dt_factor),
        Study::Temporal => temporal_levels(a.cells.unwrap_or(256), a.base_dt, a.levels),
    };
    let template = if a.dim == 1 {
        Grid::line(1.0, levels[0].cells)
    } else {
        Grid::rect(1.0, 1.0, levels[0].cells, levels[0].cells)
    }
    .map_err(|e| bad(&e.to_string()))?;
    let case = build_mms_case(default_mms_params(), &template);
    let table = convergence_study(&case, &levels, a.t_end, a.face)
        .map_err(|e| CliError::new("solver", ExitCode::Solver, e.to_string()))?;
    let csv = table.to_csv();
    match &a.out {
        Some(p) => fs::write(p, &csv).map_err(|e| CliError::io(p, e))?,
        None => emit(out, &csv)?,
    }
    let min_order = table.min_order_u();
    emit(out, &format!("min_order_u={min_order}\nmin_order_v={}\n", table.min_order_v()))?;
    if let Some(req) = a.min_order {
        if !(min_order >= req) {
            return Err(CliError::new(
                "check",
                ExitCode::Failure,
                format!("observed order {min_order} below required {req}"),
            ));
        }
    }
    Ok(ExitCode::Ok)
}

/// Envelope audit of an observable series: `(y1, m0, max_mass, ok)`.
pub fn audit_mass_envelope(config: &RunConfig, series: &ObservableSeries) -> Option<(f64, f64, f64, bool)> {
    let first = series.rows.first()?;
    let p = &config.params;
    let env = mass_envelope_raw(p.a(), p.b(), p.beta(), first.mass, config.grid.measure());
    let max_mass = series.rows.iter().map(|r| r.mass).fold(f64::NEG_INFINITY, f64::max);
    let ok = max_mass <= env.m0 * (1.0 + crate::observables::MASS_ENVELOPE_SLACK);
    Some((env.y1, env.m0, max_mass, ok))
}

fn bound_check(a: &BoundCheckArgs, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    let config = RunConfig::from_file(&a.run_dir.join("resolved_config.txt"))?;
    let csv_path = a.run_dir.join("observables.csv");
    let text = fs::read_to_string(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let series = ObservableSeries::from_csv(&text).map_err(|e| CliError::io(&csv_path, e))?;
    let (y1, m0, max_mass, mass_ok) = audit_mass_envelope(&config, &series)
        .ok_or_else(|| CliError::new("check", ExitCode::Failure, "observables.csv has no rows"))?;

    // Comparison ODE of the mass: y' = (a − b|Ω|^{1−β} y^β) |Ω|^{1−α} y^α,
    // scaled by a positive time modulation.
    let p = config.params;
    let omega = config.grid.measure();
    let mut oracle_ok = true;
    let mut fixtures = 0;
    if y1.is_finite() && y1 > 0.0 {
        let rate = move |t: f64, y: f64, wobble: f64| {
            let c = 1.0 + wobble * (3.0 * t).sin();
            c * (p.a() - p.b() * omega.powf(1.0 - p.beta()) * y.powf(p.beta())) * omega.powf(1.0 - p.alpha()) * y.powf(p.alpha())
        };
        let y_start = series.rows[0].mass;
        for y0 in [0.25 * y1, y1, 4.0 * y1, y_start] {
            for wobble in [0.0, 0.5] {
                let report = ode_comparison_oracle(|t, y| rate(t, y, wobble), y0, y1, 10.0, a.dt, &OracleOptions::default());
                fixtures += 1;
                oracle_ok &= report.violation.is_none() && report.respects_cap(1e-6 * report.cap);
            }
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "y1={y1}");
    let _ = writeln!(s, "m0={m0}");
    let _ = writeln!(s, "max_mass={max_mass}");
    let _ = writeln!(s, "mass_envelope_ok={mass_ok}");
    let _ = writeln!(s, "oracle_fixtures={fixtures}");
    let _ = writeln!(s, "oracle_ok={oracle_ok}");
    emit(out, &s)?;
    if mass_ok && oracle_ok {
        Ok(ExitCode::Ok)
    } else {
        Err(CliError::new("check", ExitCode::Failure, "bound check failed"))
    }
}
