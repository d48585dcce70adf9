//! Initial-data builders. Every builder returns a nonnegative field.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{integrate, Field, Grid};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitError {
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Constant,
    /// Gaussian bump normalized to a prescribed total mass.
    Gaussian,
    /// `value · (1 + amplitude · ξ)` with `ξ` uniform in `[−1, 1]`.
    Random,
    /// Homogeneous steady state `(a / (b |Ω|))^{1/β}`.
    Equilibrium,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Constant => "constant",
            InitKind::Gaussian => "gaussian",
            InitKind::Random => "random",
            InitKind::Equilibrium => "equilibrium",
        }
    }
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(InitKind::Constant),
            "gaussian" => Ok(InitKind::Gaussian),
            "random" => Ok(InitKind::Random),
            "equilibrium" => Ok(InitKind::Equilibrium),
            other => Err(format!("unknown initial condition `{other}` (expected constant|gaussian|random|equilibrium)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub value: f64,
    pub mass: f64,
    pub width: f64,
    /// Bump center; `None` means the domain center.
    pub center: Option<Vec<f64>>,
    pub amplitude: f64,
}

impl InitSpec {
    pub fn constant(value: f64) -> Self {
        Self { kind: InitKind::Constant, value, mass: 1.0, width: 0.1, center: None, amplitude: 0.1 }
    }

    pub fn gaussian(mass: f64, width: f64) -> Self {
        Self { kind: InitKind::Gaussian, mass, width, ..Self::constant(0.0) }
    }

    pub fn validate(&self) -> Result<(), InitError> {
        let bad = |m: String| Err(InitError::Invalid(m));
        match self.kind {
            InitKind::Constant if !(self.value >= 0.0 && self.value.is_finite()) => {
                bad(format!("constant value must be finite and ≥ 0, got {}", self.value))
            }
            InitKind::Gaussian if !(self.mass >= 0.0 && self.mass.is_finite()) => {
                bad(format!("mass must be finite and ≥ 0, got {}", self.mass))
            }
            InitKind::Gaussian if !(self.width > 0.0 && self.width.is_finite()) => {
                bad(format!("width must be positive, got {}", self.width))
            }
            InitKind::Random if !(self.value >= 0.0 && self.value.is_finite()) => {
                bad(format!("base value must be finite and ≥ 0, got {}", self.value))
            }
            InitKind::Random if !(0.0..=1.0).contains(&self.amplitude) => {
                bad(format!("amplitude must lie in [0, 1], got {}", self.amplitude))
            }
            _ => Ok(()),
        }
    }

    /// Builds the field. `seed` feeds the random builder only.
    pub fn build(&self, grid: &Grid, params: &ModelParams, seed: u64) -> Result<Field, InitError> {
        self.validate()?;
        match self.kind {
            InitKind::Constant => Ok(grid.field(self.value)),
            InitKind::Gaussian => gaussian_bump(grid, self.mass, self.width, self.center.as_deref()),
            InitKind::Random => Ok(random_perturbation(grid, self.value, self.amplitude, seed)),
            InitKind::Equilibrium => params
                .homogeneous_equilibrium(grid.measure())
                .map(|u| grid.field(u))
                .ok_or_else(|| InitError::Invalid("equilibrium initial data needs b > 0".into())),
        }
    }
}

/// `exp(−|x − c|² / 2σ²)` sampled at cell centers and scaled so that the
/// discrete integral equals `mass`.
pub fn gaussian_bump(grid: &Grid, mass: f64, width: f64, center: Option<&[f64]>) -> Result<Field, InitError> {
    let mid: Vec<f64> = grid.extent().iter().map(|l| 0.5 * l).collect();
    let c = center.unwrap_or(&mid);
    if c.len() != grid.dim() {
        return Err(InitError::Invalid(format!("center needs {} coordinates, got {}", grid.dim(), c.len())));
    }
    let (cx, cy) = (c[0], c.get(1).copied().unwrap_or(0.0));
    let two_d = grid.dim() == 2;
    let mut f = grid.field_from_fn(|x, y| {
        let r2 = (x - cx).powi(2) + if two_d { (y - cy).powi(2) } else { 0.0 };
        (-r2 / (2.0 * width * width)).exp()
    });
    let raw = integrate(&f, grid).map_err(|e| InitError::Invalid(e.to_string()))?;
    if !(raw > 0.0) {
        return Err(InitError::Invalid("bump vanishes on the grid (width too small?)".into()));
    }
    f.scale(mass / raw);
    Ok(f)
}

pub fn random_perturbation(grid: &Grid, base: f64, amplitude: f64, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len())
        .map(|_| base * (1.0 + amplitude * rng.gen_range(-1.0..=1.0)))
        .collect();
    Field::from_vec(grid, values).expect("length matches grid")
}
