//! Model coefficients, boundedness-region classification and the mass envelope.
//!
//! The system being simulated is
//!
//! ```text
//! u_t     = Δu − χ ∇·(u ∇v) + a u^α − b u^α ∫_Ω u^β
//! τ v_t   = Δv − v + u
//! ```
//!
//! with zero-flux boundary conditions on both fields.

use std::fmt;
use std::str::FromStr;

use crate::error::ParamError;

/// Signal time-scale: fully parabolic (`tau = 1`) or parabolic-elliptic (`tau = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau {
    Elliptic,
    Parabolic,
}

impl Tau {
    pub fn from_value(tau: f64) -> Result<Self, ParamError> {
        if tau == 0.0 {
            Ok(Tau::Elliptic)
        } else if tau == 1.0 {
            Ok(Tau::Parabolic)
        } else {
            Err(ParamError::Invalid {
                name: "tau",
                reason: format!("tau must be 0 or 1, got {tau}"),
            })
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Tau::Elliptic => 0.0,
            Tau::Parabolic => 1.0,
        }
    }
}

/// PDE coefficients.
///
/// [`ModelParams::new`] enforces the standing assumptions `χ, a, b > 0` and
/// `α, β ≥ 1`. [`ModelParams::degenerate`] relaxes the positivity of `χ, a, b`
/// to nonnegativity so that verification runs can switch individual terms
/// off (e.g. pure Keller-Segel with `a = b = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    chi: f64,
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
    tau: Tau,
}

impl ModelParams {
    pub fn new(chi: f64, a: f64, b: f64, alpha: f64, beta: f64, tau: Tau) -> Result<Self, ParamError> {
        for (name, value) in [("chi", chi), ("a", a), ("b", b)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ParamError::Invalid {
                    name,
                    reason: format!("{name} > 0 required, got {value}"),
                });
            }
        }
        Self::check_exponents(alpha, beta)?;
        Ok(Self { chi, a, b, alpha, beta, tau })
    }

    /// Like [`ModelParams::new`] but allows `chi`, `a`, `b` to be zero.
    pub fn degenerate(chi: f64, a: f64, b: f64, alpha: f64, beta: f64, tau: Tau) -> Result<Self, ParamError> {
        for (name, value) in [("chi", chi), ("a", a), ("b", b)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::Invalid {
                    name,
                    reason: format!("{name} >= 0 required, got {value}"),
                });
            }
        }
        Self::check_exponents(alpha, beta)?;
        Ok(Self { chi, a, b, alpha, beta, tau })
    }

    fn check_exponents(alpha: f64, beta: f64) -> Result<(), ParamError> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(ParamError::Invalid {
                name: "alpha",
                reason: format!("alpha ≥ 1 required, got {alpha}"),
            });
        }
        if !(beta.is_finite() && beta >= 1.0) {
            return Err(ParamError::Invalid {
                name: "beta",
                reason: format!("beta ≥ 1 required, got {beta}"),
            });
        }
        Ok(())
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn tau(&self) -> Tau {
        self.tau
    }

    /// Spatially homogeneous steady state `u* = v* = (a / (b |Ω|))^{1/β}`.
    ///
    /// Returns `None` when `b = 0` (no finite equilibrium with positive mass).
    pub fn homogeneous_equilibrium(&self, domain_measure: f64) -> Option<f64> {
        if self.b <= 0.0 {
            return None;
        }
        Some((self.a / (self.b * domain_measure)).powf(1.0 / self.beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    SubquadraticBounded,
    SuperquadraticBounded,
    Uncovered,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SubquadraticBounded => "SubquadraticBounded",
            Regime::SuperquadraticBounded => "SuperquadraticBounded",
            Regime::Uncovered => "Uncovered",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SubquadraticBounded" => Ok(Regime::SubquadraticBounded),
            "SuperquadraticBounded" => Ok(Regime::SuperquadraticBounded),
            "Uncovered" => Ok(Regime::Uncovered),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// `1 ≤ α < 2` and `β > (n + 4)/2 − α`.
pub fn is_subquadratic(alpha: f64, beta: f64, n: u32) -> bool {
    let n = f64::from(n);
    (1.0..2.0).contains(&alpha) && beta > (n + 4.0) / 2.0 - alpha
}

/// `β > n/2` and `2 ≤ α < 1 + 2β/n`.
pub fn is_superquadratic(alpha: f64, beta: f64, n: u32) -> bool {
    let n = f64::from(n);
    beta > n / 2.0 && alpha >= 2.0 && alpha < 1.0 + 2.0 * beta / n
}

/// Classifies `(α, β)` in dimension `n` against the two boundedness regions.
///
/// Only the exponents matter; `χ`, `a` and `b` play no role. Points on the
/// boundary of either region are `Uncovered`.
pub fn classify_regime(params: &ModelParams, n: u32) -> Regime {
    classify_exponents(params.alpha(), params.beta(), n)
}

pub fn classify_exponents(alpha: f64, beta: f64, n: u32) -> Regime {
    assert!(n >= 1, "spatial dimension must be positive");
    if is_subquadratic(alpha, beta, n) {
        Regime::SubquadraticBounded
    } else if is_superquadratic(alpha, beta, n) {
        Regime::SuperquadraticBounded
    } else {
        Regime::Uncovered
    }
}

/// Mass cap `y1` and envelope `m0 = max(∫u0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassEnvelope {
    pub y1: f64,
    pub m0: f64,
}

/// `y1 = (a / (b |Ω|^{1−β}))^{1/β}`, `m0 = max(initial_mass, y1)`.
pub fn mass_envelope(params: &ModelParams, initial_mass: f64, domain_measure: f64) -> MassEnvelope {
    mass_envelope_raw(params.a(), params.b(), params.beta(), initial_mass, domain_measure)
}

pub fn mass_envelope_raw(a: f64, b: f64, beta: f64, initial_mass: f64, domain_measure: f64) -> MassEnvelope {
    debug_assert!(initial_mass >= 0.0 && domain_measure > 0.0);
    let y1 = (a / (b * domain_measure.powf(1.0 - beta))).powf(1.0 / beta);
    MassEnvelope { y1, m0: initial_mass.max(y1) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    pub n: u32,
    pub mass_envelope: f64,
    pub y1: f64,
}

impl RegimeReport {
    pub fn new(params: &ModelParams, n: u32, initial_mass: f64, domain_measure: f64) -> Self {
        let env = mass_envelope(params, initial_mass, domain_measure);
        Self {
            regime: classify_regime(params, n),
            n,
            mass_envelope: env.m0,
            y1: env.y1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(alpha: f64, beta: f64) -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0, alpha, beta, Tau::Parabolic).unwrap()
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_regime(&p(1.0, 3.0), 3), Regime::SubquadraticBounded);
        assert_eq!(classify_regime(&p(2.0, 2.0), 2), Regime::SuperquadraticBounded);
        assert_eq!(classify_regime(&p(2.0, 1.0), 2), Regime::Uncovered);
        assert_eq!(classify_regime(&p(1.5, 1.0), 3), Regime::Uncovered);
    }

    #[test]
    fn envelope_examples() {
        let env = mass_envelope_raw(1.0, 1.0, 2.0, 0.5, 1.0);
        assert_eq!((env.y1, env.m0), (1.0, 1.0));
        let env = mass_envelope_raw(4.0, 1.0, 2.0, 0.1, 1.0);
        assert_eq!((env.y1, env.m0), (2.0, 2.0));
        let env = mass_envelope_raw(1.0, 1.0, 1.0, 10.0, 5.0);
        assert_eq!((env.y1, env.m0), (1.0, 10.0));
    }

    #[test]
    fn envelope_cap_is_where_the_mass_rate_vanishes() {
        // y' = a y - b |Ω|^{1-β} y^{β+1} has its positive root at y1.
        for &(a, b, beta, omega) in &[(1.0, 1.0, 2.0, 1.0), (3.0, 0.5, 3.0, 2.0), (0.2, 4.0, 1.5, 0.3)] {
            let env = mass_envelope_raw(a, b, beta, 0.0, omega);
            let rate = |y: f64| a * y - b * f64::powf(omega, 1.0 - beta) * y.powf(beta + 1.0);
            assert!(rate(env.y1).abs() < 1e-12 * env.y1.max(1.0));
            assert!(rate(env.y1 * 1.01) < 0.0);
            assert!(rate(env.y1 * 0.99) > 0.0);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ModelParams::new(0.0, 1.0, 1.0, 1.0, 1.0, Tau::Parabolic).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0, 1.0, 1.0, Tau::Parabolic).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 0.5, 1.0, Tau::Parabolic).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.99, Tau::Parabolic).is_err());
        assert!(Tau::from_value(2.0).is_err());
        assert!(ModelParams::degenerate(0.0, 0.0, 0.0, 1.0, 1.0, Tau::Parabolic).is_ok());
        assert!(ModelParams::degenerate(-1.0, 0.0, 0.0, 1.0, 1.0, Tau::Parabolic).is_err());
    }

    #[test]
    fn equilibrium_value() {
        let params = ModelParams::new(1.0, 2.0, 1.0, 1.5, 2.0, Tau::Parabolic).unwrap();
        let ustar = params.homogeneous_equilibrium(0.5).unwrap();
        assert!((ustar - 2.0).abs() < 1e-15);
    }
}
