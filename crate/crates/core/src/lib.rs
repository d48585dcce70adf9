//! Simulation and verification toolkit for the fully parabolic Keller-Segel
//! system with a nonlocal logistic source,
//!
//! ```text
//! u_t = Δu − χ ∇·(u ∇v) + a u^α − b u^α ∫_Ω u^β,    τ v_t = Δv − v + u,
//! ```
//!
//! on rectangles with zero-flux boundaries.
//!
//! Module map:
//! - [`params`]: coefficients, boundedness-region classifier, mass envelope
//! - [`grid`]: cell-centered meshes, fields and their reductions
//! - [`operators`]: flux-form Laplacian, chemotactic divergence, nonlocal source
//! - [`helmholtz`], [`stepper`]: IMEX Euler integration and blow-up detection
//! - [`observables`]: sampled norms and boundedness verdicts
//! - [`verification`]: manufactured solutions, ODE comparison oracle, refinement oracles
//! - [`config`], [`init`], [`snapshot`], [`cli`]: configuration files, initial data, outputs, CLI

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod init;
pub mod observables;
pub mod operators;
pub mod params;
pub mod snapshot;
pub mod stepper;
pub mod verification;

pub use error::{FieldError, GridError, ParamError};
pub use grid::{integrate, linf_norm, lp_norm_pow, Field, Grid, State};
pub use observables::{summarize, ObservableSeries, Recorder, SeriesSummary, SummaryOptions};
pub use operators::FaceScheme;
pub use params::{classify_regime, mass_envelope, ModelParams, Regime, RegimeReport, Tau};
pub use stepper::{StepOutcome, StepStatus, Stepper, StepperConfig, Termination};
