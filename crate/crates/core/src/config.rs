//! Run configuration files.
//!
//! Plain text, one `key = value` per line, `#` starts a comment. Keys are
//! dotted (`model.alpha = 1.5`). Every key has a default; unknown keys are
//! rejected. Lists are comma separated (`grid.cells = 64, 64`).
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `model.chi`, `model.a`, `model.b` | 1, 1, 1 | sensitivity, growth, dampening |
//! | `model.alpha`, `model.beta` | 1.5, 3 | growth / dampening exponents (≥ 1) |
//! | `model.tau` | 1 | 1 fully parabolic, 0 parabolic-elliptic |
//! | `model.allow_degenerate` | false | permit `chi`, `a`, `b` = 0 |
//! | `grid.dim` | 1 | 1 or 2 |
//! | `grid.extent`, `grid.cells` | 1, 128 | per axis (one value is broadcast) |
//! | `stepper.*` | see [`StepperConfig`] | time-step controls, tolerances, `face = upwind\|central` |
//! | `init.u.*`, `init.v.*` | gaussian / constant 0 | `kind`, `value`, `mass`, `width`, `center`, `amplitude` |
//! | `run.t_end`, `run.sample_interval` | 10, 0.1 | |
//! | `run.k_list`, `run.seed` | 2,4,8 / 0 | |
//! | `output.dir`, `output.snapshots`, `output.grid_csv` | out / true / false | |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::ParamError;
use crate::grid::{integrate, Grid, State};
use crate::init::{InitKind, InitSpec};
use crate::observables::{summarize, ObservableSeries, Recorder, SeriesSummary, SummaryOptions};
use crate::operators::FaceScheme;
use crate::params::{ModelParams, RegimeReport, Tau};
use crate::stepper::{RunError, RunResult, Stepper, StepperConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: `{key}` expects {expected}, got `{value}`")]
    Type { key: String, line: usize, expected: &'static str, value: String },
    #[error("line {line}: `{key}`: {reason}")]
    Constraint { key: String, line: usize, reason: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::Duplicate { key, .. }
            | ConfigError::Type { key, .. }
            | ConfigError::Constraint { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::Duplicate { line, .. }
            | ConfigError::Type { line, .. }
            | ConfigError::Constraint { line, .. } => Some(*line),
            ConfigError::Io { .. } => None,
        }
    }
}

/// Key names with their defaults, in echo order.
const SCHEMA: &[(&str, &str)] = &[
    ("model.chi", "1"),
    ("model.a", "1"),
    ("model.b", "1"),
    ("model.alpha", "1.5"),
    ("model.beta", "3"),
    ("model.tau", "1"),
    ("model.allow_degenerate", "false"),
    ("grid.dim", "1"),
    ("grid.extent", "1"),
    ("grid.cells", "128"),
    ("stepper.dt_init", "0.0001"),
    ("stepper.dt_min", "0.000000000001"),
    ("stepper.dt_max", "0.01"),
    ("stepper.cfl_safety", "0.4"),
    ("stepper.linear_tol", "0.0000000001"),
    ("stepper.blowup_linf_threshold", "100000000"),
    ("stepper.positivity_tol", "0.000000000001"),
    ("stepper.max_retries", "20"),
    ("stepper.face", "upwind"),
    ("init.u.kind", "gaussian"),
    ("init.u.value", "1"),
    ("init.u.mass", "1"),
    ("init.u.width", "0.1"),
    ("init.u.center", "auto"),
    ("init.u.amplitude", "0.1"),
    ("init.v.kind", "constant"),
    ("init.v.value", "0"),
    ("init.v.mass", "1"),
    ("init.v.width", "0.1"),
    ("init.v.center", "auto"),
    ("init.v.amplitude", "0.1"),
    ("run.t_end", "10"),
    ("run.sample_interval", "0.1"),
    ("run.k_list", "2, 4, 8"),
    ("run.seed", "0"),
    ("output.dir", "out"),
    ("output.snapshots", "true"),
    ("output.grid_csv", "false"),
];

pub fn known_keys() -> impl Iterator<Item = &'static str> {
    SCHEMA.iter().map(|(k, _)| *k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub snapshots: bool,
    pub grid_csv: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub allow_degenerate: bool,
    pub grid: Grid,
    pub stepper: StepperConfig,
    pub init_u: InitSpec,
    pub init_v: InitSpec,
    pub t_end: f64,
    pub sample_interval: f64,
    pub k_list: Vec<f64>,
    pub seed: u64,
    pub output: OutputSpec,
}

/// Raw `key → (value, line)` map; line 0 marks defaults and command-line overrides.
#[derive(Debug, Clone, Default)]
struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax {
                line: line_no,
                reason: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if !known_keys().any(|k| k == key) {
                return Err(ConfigError::UnknownKey { key: key.into(), line: line_no });
            }
            if raw.entries.contains_key(key) {
                return Err(ConfigError::Duplicate { key: key.into(), line: line_no });
            }
            raw.entries.insert(key.to_string(), (value.trim().to_string(), line_no));
        }
        Ok(raw)
    }

    fn set_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known_keys().any(|k| k == key) {
            return Err(ConfigError::UnknownKey { key: key.into(), line: 0 });
        }
        self.entries.insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }

    fn get(&self, key: &'static str) -> (&str, usize) {
        match self.entries.get(key) {
            Some((v, l)) => (v.as_str(), *l),
            None => {
                let default = SCHEMA.iter().find(|(k, _)| *k == key).expect("schema key").1;
                (default, 0)
            }
        }
    }

    fn float(&self, key: &'static str) -> Result<f64, ConfigError> {
        let (v, line) = self.get(key);
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| type_err(key, line, "a finite number", v))
    }

    fn uint(&self, key: &'static str) -> Result<u64, ConfigError> {
        let (v, line) = self.get(key);
        v.parse::<u64>().map_err(|_| type_err(key, line, "a nonnegative integer", v))
    }

    fn boolean(&self, key: &'static str) -> Result<bool, ConfigError> {
        let (v, line) = self.get(key);
        v.parse::<bool>().map_err(|_| type_err(key, line, "true or false", v))
    }

    fn float_list(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        let (v, line) = self.get(key);
        v.split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| type_err(key, line, "a comma-separated list of numbers", v))
    }

    fn uint_list(&self, key: &'static str) -> Result<Vec<usize>, ConfigError> {
        let (v, line) = self.get(key);
        v.split(',')
            .map(|s| s.trim().parse::<usize>().ok())
            .collect::<Option<Vec<_>>>()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| type_err(key, line, "a comma-separated list of integers", v))
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, key: &'static str) -> Result<T, ConfigError> {
        let (v, line) = self.get(key);
        v.parse::<T>().map_err(|reason| constraint(key, line, reason))
    }

    fn line(&self, key: &'static str) -> usize {
        self.get(key).1
    }
}

fn type_err(key: &str, line: usize, expected: &'static str, value: &str) -> ConfigError {
    ConfigError::Type { key: key.into(), line, expected, value: value.into() }
}

fn constraint(key: &str, line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError::Constraint { key: key.into(), line, reason: reason.into() }
}

fn broadcast<T: Copy>(values: Vec<T>, dim: usize, key: &'static str, raw: &RawConfig) -> Result<Vec<T>, ConfigError> {
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values),
        n => Err(constraint(key, raw.line(key), format!("expected 1 or {dim} values, got {n}"))),
    }
}

fn init_spec(raw: &RawConfig, field: char) -> Result<InitSpec, ConfigError> {
    macro_rules! key {
        ($name:literal) => {
            if field == 'u' {
                concat!("init.u.", $name)
            } else {
                concat!("init.v.", $name)
            }
        };
    }
    let center_key = key!("center");
    let (center_raw, center_line) = raw.get(center_key);
    let center = if center_raw == "auto" {
        None
    } else {
        Some(raw.float_list(center_key)?)
    };
    let spec = InitSpec {
        kind: raw.parsed::<InitKind>(key!("kind"))?,
        value: raw.float(key!("value"))?,
        mass: raw.float(key!("mass"))?,
        width: raw.float(key!("width"))?,
        center,
        amplitude: raw.float(key!("amplitude"))?,
    };
    spec.validate().map_err(|e| {
        // attribute to the most specific key
        let k = match spec.kind {
            InitKind::Gaussian if !(spec.width > 0.0) => key!("width"),
            InitKind::Gaussian => key!("mass"),
            InitKind::Random if !(0.0..=1.0).contains(&spec.amplitude) => key!("amplitude"),
            _ => key!("value"),
        };
        constraint(k, raw.line(k), e.to_string())
    })?;
    let _ = center_line;
    Ok(spec)
}

fn param_err(raw: &RawConfig, e: ParamError) -> ConfigError {
    let ParamError::Invalid { name, reason } = e;
    let key = match name {
        "chi" => "model.chi",
        "a" => "model.a",
        "b" => "model.b",
        "alpha" => "model.alpha",
        "beta" => "model.beta",
        "tau" => "model.tau",
        "dt" => "stepper.dt_init",
        "cfl_safety" => "stepper.cfl_safety",
        "linear_tol" => "stepper.linear_tol",
        "blowup_linf_threshold" => "stepper.blowup_linf_threshold",
        "positivity_tol" => "stepper.positivity_tol",
        _ => "model",
    };
    let line = SCHEMA.iter().find(|(k, _)| *k == key).map_or(0, |(k, _)| raw.line(k));
    constraint(key, line, reason)
}

fn fmt_list<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_file_with_overrides(path, &[])
    }

    pub fn from_file_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides(text, &[])
    }

    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for (k, v) in overrides {
            raw.set_override(k, v)?;
        }
        Self::from_raw(&raw)
    }

    fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let tau = Tau::from_value(raw.float("model.tau")?).map_err(|e| param_err(raw, e))?;
        let allow_degenerate = raw.boolean("model.allow_degenerate")?;
        let (chi, a, b) = (raw.float("model.chi")?, raw.float("model.a")?, raw.float("model.b")?);
        let (alpha, beta) = (raw.float("model.alpha")?, raw.float("model.beta")?);
        let params = if allow_degenerate {
            ModelParams::degenerate(chi, a, b, alpha, beta, tau)
        } else {
            ModelParams::new(chi, a, b, alpha, beta, tau)
        }
        .map_err(|e| param_err(raw, e))?;

        let dim = raw.uint("grid.dim")? as usize;
        if !(1..=2).contains(&dim) {
            return Err(constraint("grid.dim", raw.line("grid.dim"), format!("dim must be 1 or 2, got {dim}")));
        }
        let extent = broadcast(raw.float_list("grid.extent")?, dim, "grid.extent", raw)?;
        let cells = broadcast(raw.uint_list("grid.cells")?, dim, "grid.cells", raw)?;
        let grid = Grid::new(&extent, &cells).map_err(|e| {
            let key = if matches!(e, crate::error::GridError::Extent { .. }) { "grid.extent" } else { "grid.cells" };
            constraint(key, raw.line(key), e.to_string())
        })?;

        let stepper = StepperConfig {
            dt_init: raw.float("stepper.dt_init")?,
            dt_min: raw.float("stepper.dt_min")?,
            dt_max: raw.float("stepper.dt_max")?,
            cfl_safety: raw.float("stepper.cfl_safety")?,
            linear_tol: raw.float("stepper.linear_tol")?,
            blowup_linf_threshold: raw.float("stepper.blowup_linf_threshold")?,
            positivity_tol: raw.float("stepper.positivity_tol")?,
            max_retries: u32::try_from(raw.uint("stepper.max_retries")?).map_err(|_| {
                constraint("stepper.max_retries", raw.line("stepper.max_retries"), "too large")
            })?,
            face: raw.parsed::<FaceScheme>("stepper.face")?,
        };
        stepper.validate().map_err(|e| param_err(raw, e))?;

        let init_u = init_spec(raw, 'u')?;
        let init_v = init_spec(raw, 'v')?;
        for (spec, key) in [(&init_u, "init.u.center"), (&init_v, "init.v.center")] {
            if let Some(c) = &spec.center {
                if c.len() != dim {
                    return Err(constraint(key, raw.line(key), format!("expected {dim} coordinates, got {}", c.len())));
                }
            }
        }
        for (spec, key) in [(&init_u, "init.u.kind"), (&init_v, "init.v.kind")] {
            if spec.kind == InitKind::Equilibrium && params.b() <= 0.0 {
                return Err(constraint(key, raw.line(key), "equilibrium initial data needs b > 0"));
            }
        }

        let t_end = raw.float("run.t_end")?;
        if !(t_end > 0.0) {
            return Err(constraint("run.t_end", raw.line("run.t_end"), "t_end must be positive"));
        }
        let sample_interval = raw.float("run.sample_interval")?;
        if !(sample_interval > 0.0) {
            return Err(constraint(
                "run.sample_interval",
                raw.line("run.sample_interval"),
                "sample_interval must be positive",
            ));
        }
        let k_list = raw.float_list("run.k_list")?;
        if k_list.iter().any(|&k| k <= 1.0) {
            return Err(constraint("run.k_list", raw.line("run.k_list"), "every k must exceed 1"));
        }

        Ok(Self {
            params,
            allow_degenerate,
            grid,
            stepper,
            init_u,
            init_v,
            t_end,
            sample_interval,
            k_list,
            seed: raw.uint("run.seed")?,
            output: OutputSpec {
                dir: PathBuf::from(raw.get("output.dir").0),
                snapshots: raw.boolean("output.snapshots")?,
                grid_csv: raw.boolean("output.grid_csv")?,
            },
        })
    }

    /// Every key with its effective value, in schema order. Parsing this text
    /// yields an identical configuration.
    pub fn to_resolved_text(&self) -> String {
        let p = &self.params;
        let s = &self.stepper;
        let mut values: Vec<(&str, String)> = vec![
            ("model.chi", p.chi().to_string()),
            ("model.a", p.a().to_string()),
            ("model.b", p.b().to_string()),
            ("model.alpha", p.alpha().to_string()),
            ("model.beta", p.beta().to_string()),
            ("model.tau", p.tau().value().to_string()),
            ("model.allow_degenerate", self.allow_degenerate.to_string()),
            ("grid.dim", self.grid.dim().to_string()),
            ("grid.extent", fmt_list(self.grid.extent())),
            ("grid.cells", fmt_list(self.grid.cells())),
            ("stepper.dt_init", s.dt_init.to_string()),
            ("stepper.dt_min", s.dt_min.to_string()),
            ("stepper.dt_max", s.dt_max.to_string()),
            ("stepper.cfl_safety", s.cfl_safety.to_string()),
            ("stepper.linear_tol", s.linear_tol.to_string()),
            ("stepper.blowup_linf_threshold", s.blowup_linf_threshold.to_string()),
            ("stepper.positivity_tol", s.positivity_tol.to_string()),
            ("stepper.max_retries", s.max_retries.to_string()),
            ("stepper.face", s.face.as_str().to_string()),
        ];
        for (name, spec) in [("u", &self.init_u), ("v", &self.init_v)] {
            let center = spec.center.as_deref().map_or("auto".to_string(), fmt_list);
            let entries = [
                ("kind", spec.kind.as_str().to_string()),
                ("value", spec.value.to_string()),
                ("mass", spec.mass.to_string()),
                ("width", spec.width.to_string()),
                ("center", center),
                ("amplitude", spec.amplitude.to_string()),
            ];
            for (k, v) in entries {
                let key = SCHEMA
                    .iter()
                    .find(|(s, _)| *s == format!("init.{name}.{k}"))
                    .expect("init key")
                    .0;
                values.push((key, v));
            }
        }
        values.extend([
            ("run.t_end", self.t_end.to_string()),
            ("run.sample_interval", self.sample_interval.to_string()),
            ("run.k_list", fmt_list(&self.k_list)),
            ("run.seed", self.seed.to_string()),
            ("output.dir", self.output.dir.display().to_string()),
            ("output.snapshots", self.output.snapshots.to_string()),
            ("output.grid_csv", self.output.grid_csv.to_string()),
        ]);
        debug_assert_eq!(values.len(), SCHEMA.len());
        let mut out = String::from("# resolved configuration\n");
        for (k, v) in values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Same run with `h` and every time-step control divided by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let f = factor as f64;
        let mut cfg = self.clone();
        cfg.grid = self.grid.refined(factor);
        cfg.stepper.dt_init /= f;
        cfg.stepper.dt_min /= f;
        cfg.stepper.dt_max /= f;
        cfg.stepper.cfl_safety /= f;
        cfg
    }

    pub fn initial_state(&self) -> Result<State, crate::init::InitError> {
        let u = self.init_u.build(&self.grid, &self.params, self.seed)?;
        let v = self.init_v.build(&self.grid, &self.params, self.seed.wrapping_add(1))?;
        Ok(State::new(u, v))
    }

    /// Builds the initial data and runs to `t_end`.
    pub fn execute(&self) -> Result<RunOutput, ExecuteError> {
        let initial = self.initial_state()?;
        let mut stepper = Stepper::new(&self.grid, self.params, self.stepper)?;
        let mut recorder = Recorder::new(&self.k_list, self.sample_interval);
        let result = stepper.run(initial.clone(), self.t_end, &mut recorder)?;
        let series = recorder.into_series();
        let initial_mass = integrate(&initial.u, &self.grid).unwrap_or(0.0);
        let b_positive = self.params.b() > 0.0;
        let report = b_positive.then(|| RegimeReport::new(&self.params, self.grid.dim() as u32, initial_mass, self.grid.measure()));
        let summary = summarize(
            &series,
            &SummaryOptions {
                y1: report.map(|r| r.y1),
                linf_threshold: self.stepper.blowup_linf_threshold,
            },
        );
        Ok(RunOutput { initial, result, series, summary, report })
    }
}

#[derive(Debug, Error)]
pub enum ExecuteError {
    #[error("initial data: {0}")]
    Init(#[from] crate::init::InitError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: State,
    pub result: RunResult,
    pub series: ObservableSeries,
    pub summary: SeriesSummary,
    /// `None` when `b = 0` (no mass cap).
    pub report: Option<RegimeReport>,
}
