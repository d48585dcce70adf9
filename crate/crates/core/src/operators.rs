//! Discrete spatial operators in flux form.
//!
//! Every operator is assembled face by face: a flux is computed on each
//! interior face and added to / subtracted from the two adjacent cells, and
//! boundary faces carry zero flux (reflected ghost cells). Summed over the
//! grid, the result therefore telescopes to zero, which is the discrete
//! counterpart of the zero-flux boundary condition.

use std::str::FromStr;

use crate::error::FieldError;
use crate::grid::{abs_pow, lp_norm_pow, Field, Grid};
use crate::params::ModelParams;

/// Face interpolation of `u` in the chemotactic flux `u ∇v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceScheme {
    /// First-order upwinding on the sign of the signal gradient. Positivity-safe
    /// under the transport time-step bound.
    #[default]
    Upwind,
    /// Arithmetic mean of the two cells. Second order, not positivity-safe;
    /// intended for convergence studies.
    Central,
}

impl FaceScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            FaceScheme::Upwind => "upwind",
            FaceScheme::Central => "central",
        }
    }
}

impl FromStr for FaceScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upwind" => Ok(FaceScheme::Upwind),
            "central" => Ok(FaceScheme::Central),
            other => Err(format!("unknown face scheme `{other}` (expected upwind|central)")),
        }
    }
}

/// Reusable face-flux buffers for one grid.
#[derive(Debug, Clone)]
pub struct OperatorWorkspace {
    grid: Grid,
    // (nx + 1) * ny faces normal to x, nx * (ny + 1) faces normal to y
    flux_x: Vec<f64>,
    flux_y: Vec<f64>,
}

impl OperatorWorkspace {
    pub fn new(grid: &Grid) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let flux_y = if grid.dim() == 2 { vec![0.0; nx * (ny + 1)] } else { Vec::new() };
        Self {
            grid: grid.clone(),
            flux_x: vec![0.0; (nx + 1) * ny],
            flux_y,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Fills the face buffers with `w_face * (g_R - g_L) / h`, where `w_face` is
    /// 1 (diffusion) or the face value of `weight`.
    fn fill_fluxes(&mut self, g: &[f64], weight: Option<(&[f64], FaceScheme)>) {
        let grid = &self.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        let face_weight = |l: usize, r: usize, dg: f64| -> f64 {
            match weight {
                None => 1.0,
                Some((w, FaceScheme::Upwind)) => {
                    if dg > 0.0 {
                        w[l]
                    } else {
                        w[r]
                    }
                }
                Some((w, FaceScheme::Central)) => 0.5 * (w[l] + w[r]),
            }
        };

        let hx = grid.hx();
        for j in 0..ny {
            let row = j * (nx + 1);
            self.flux_x[row] = 0.0;
            self.flux_x[row + nx] = 0.0;
            for i in 0..nx - 1 {
                let l = grid.idx(i, j);
                let r = l + 1;
                let dg = g[r] - g[l];
                self.flux_x[row + i + 1] = face_weight(l, r, dg) * dg / hx;
            }
        }

        if grid.dim() == 2 {
            let hy = grid.hy();
            for i in 0..nx {
                self.flux_y[i] = 0.0;
                self.flux_y[ny * nx + i] = 0.0;
            }
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let l = grid.idx(i, j);
                    let r = grid.idx(i, j + 1);
                    let dg = g[r] - g[l];
                    self.flux_y[(j + 1) * nx + i] = face_weight(l, r, dg) * dg / hy;
                }
            }
        }
    }

    /// `out_c = Σ_faces (F_out − F_in) / h`.
    fn divergence_into(&self, out: &mut [f64]) {
        let grid = &self.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        let hx = grid.hx();
        for j in 0..ny {
            let row = j * (nx + 1);
            for i in 0..nx {
                out[grid.idx(i, j)] = (self.flux_x[row + i + 1] - self.flux_x[row + i]) / hx;
            }
        }
        if grid.dim() == 2 {
            let hy = grid.hy();
            for j in 0..ny {
                for i in 0..nx {
                    out[grid.idx(i, j)] += (self.flux_y[(j + 1) * nx + i] - self.flux_y[j * nx + i]) / hy;
                }
            }
        }
    }

    pub fn laplacian_into(&mut self, f: &Field, out: &mut Field) -> Result<(), FieldError> {
        f.check_finite()?;
        self.fill_fluxes(f.values(), None);
        self.divergence_into(out.values_mut());
        Ok(())
    }

    /// `∇·(u ∇v)` (without the sensitivity `χ`).
    pub fn chemo_divergence_into(
        &mut self,
        u: &Field,
        v: &Field,
        face: FaceScheme,
        positivity_tol: f64,
        out: &mut Field,
    ) -> Result<(), FieldError> {
        u.check_finite()?;
        v.check_finite()?;
        u.check_nonnegative(positivity_tol)?;
        self.fill_fluxes(v.values(), Some((u.values(), face)));
        self.divergence_into(out.values_mut());
        Ok(())
    }

    /// Largest discrete face gradient `|g_R − g_L| / h` over all interior faces.
    pub fn max_face_gradient(&self, g: &Field) -> f64 {
        let grid = &self.grid;
        let g = g.values();
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut m = 0.0f64;
        for j in 0..ny {
            for i in 0..nx - 1 {
                let l = grid.idx(i, j);
                m = m.max((g[l + 1] - g[l]).abs() / grid.hx());
            }
        }
        if grid.dim() == 2 {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    m = m.max((g[grid.idx(i, j + 1)] - g[grid.idx(i, j)]).abs() / grid.hy());
                }
            }
        }
        m
    }
}

/// Five-point (three-point in 1D) Neumann Laplacian.
pub fn laplacian(f: &Field, grid: &Grid) -> Result<Field, FieldError> {
    let mut ws = OperatorWorkspace::new(grid);
    let mut out = Field::zeros(grid);
    ws.laplacian_into(f, &mut out)?;
    Ok(out)
}

/// `∇·(u ∇v)` with the given face interpolation of `u`. The sensitivity `χ`
/// is applied by the caller.
pub fn chemo_divergence(u: &Field, v: &Field, grid: &Grid, face: FaceScheme) -> Result<Field, FieldError> {
    let mut ws = OperatorWorkspace::new(grid);
    let mut out = Field::zeros(grid);
    ws.chemo_divergence_into(u, v, face, crate::grid::POSITIVITY_TOL, &mut out)?;
    Ok(out)
}

/// `u^p` for `u ≥ 0`, `p ≥ 1`; slightly negative inputs map to 0.
#[inline]
pub fn nonneg_pow(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if p == p.trunc() && p <= 16.0 {
        u.powi(p as i32)
    } else {
        (p * u.ln()).exp()
    }
}

/// Nonlocal logistic source `s = a u^α − b u^α ∫_Ω u^β`.
///
/// Returns `s` together with the integral `I = ∫_Ω u^β`, which is evaluated
/// once from the given `u`.
pub fn nonlocal_source(
    u: &Field,
    grid: &Grid,
    params: &ModelParams,
    positivity_tol: f64,
) -> Result<(Field, f64), FieldError> {
    let mut out = Field::zeros(grid);
    let integral = nonlocal_source_into(u, grid, params, positivity_tol, &mut out)?;
    Ok((out, integral))
}

pub fn nonlocal_source_into(
    u: &Field,
    grid: &Grid,
    params: &ModelParams,
    positivity_tol: f64,
    out: &mut Field,
) -> Result<f64, FieldError> {
    u.check_finite()?;
    u.check_nonnegative(positivity_tol)?;
    let clamped = Field::from_vec(grid, u.values().iter().map(|v| v.max(0.0)).collect())?;
    let integral = lp_norm_pow(&clamped, grid, params.beta())?;
    let rate = params.a() - params.b() * integral;
    for (s, &uc) in out.values_mut().iter_mut().zip(clamped.values()) {
        *s = nonneg_pow(uc, params.alpha()) * rate;
    }
    Ok(integral)
}

/// `max_c u_c^{α−1}` over the nonnegative part of `u`.
pub fn max_growth_factor(u: &Field, alpha: f64) -> f64 {
    u.values().iter().fold(0.0f64, |m, &v| m.max(abs_pow(v.max(0.0), alpha - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use crate::params::Tau;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_field(grid: &Grid, seed: u64, lo: f64, hi: f64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::from_vec(grid, (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn grids() -> Vec<Grid> {
        vec![Grid::line(2.0, 17).unwrap(), Grid::rect(1.0, 1.5, 9, 12).unwrap()]
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        for g in grids() {
            let lap = laplacian(&g.field(3.7), &g).unwrap();
            assert!(lap.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn laplacian_cosine_mode_is_second_order() {
        let err = |n: usize| {
            let l = 2.0;
            let g = Grid::line(l, n).unwrap();
            let k = PI / l;
            let f = g.field_from_fn(|x, _| (k * x).cos());
            let lap = laplacian(&f, &g).unwrap();
            lap.values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| (a + k * k * b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e2 < 1e-3);
        // the boundary cells are first order pointwise; the bulk carries second order
        assert!((e1 / e2).log2() > 0.9);
    }

    #[test]
    fn laplacian_2d_mode_l2_second_order() {
        let err = |n: usize| {
            let g = Grid::rect(1.0, 2.0, n, 2 * n).unwrap();
            let (kx, ky) = (PI, PI / 2.0);
            let f = g.field_from_fn(|x, y| (kx * x).cos() * (ky * y).cos());
            let lap = laplacian(&f, &g).unwrap();
            let e: f64 = lap
                .values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| (a + (kx * kx + ky * ky) * b).powi(2))
                .sum();
            (e * g.cell_volume()).sqrt()
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 1.4, "order {order}");
    }

    #[test]
    fn operators_are_conservative() {
        for (s, g) in grids().into_iter().enumerate() {
            let u = random_field(&g, 10 + s as u64, 0.0, 5.0);
            let v = random_field(&g, 20 + s as u64, 0.0, 5.0);
            let scale = 5.0 / g.min_spacing().powi(2) * g.measure();
            let lap = integrate(&laplacian(&v, &g).unwrap(), &g).unwrap();
            assert!(lap.abs() < 1e-13 * scale, "{lap}");
            for face in [FaceScheme::Upwind, FaceScheme::Central] {
                let cd = integrate(&chemo_divergence(&u, &v, &g, face).unwrap(), &g).unwrap();
                assert!(cd.abs() < 1e-13 * 5.0 * scale, "{cd}");
            }
        }
    }

    #[test]
    fn chemo_divergence_with_constant_signal_vanishes() {
        for g in grids() {
            let u = random_field(&g, 3, 0.0, 2.0);
            let out = chemo_divergence(&u, &g.field(1.3), &g, FaceScheme::Upwind).unwrap();
            assert!(out.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn chemo_divergence_with_constant_density_is_scaled_laplacian() {
        let g = Grid::line(1.0, 64).unwrap();
        let v = g.field_from_fn(|x, _| (PI * x).cos() + 0.3 * (2.0 * PI * x).cos());
        let c = 2.5;
        let lap = laplacian(&v, &g).unwrap();
        let cd = chemo_divergence(&g.field(c), &v, &g, FaceScheme::Upwind).unwrap();
        for (a, b) in cd.values().iter().zip(lap.values()) {
            assert!((a - c * b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn chemo_divergence_rejects_negative_density() {
        let g = Grid::line(1.0, 4).unwrap();
        let u = Field::from_vec(&g, vec![1.0, -1e-6, 1.0, 1.0]).unwrap();
        assert!(chemo_divergence(&u, &g.field(1.0), &g, FaceScheme::Upwind).is_err());
    }

    #[test]
    fn upwind_picks_the_upstream_cell() {
        // v increasing to the right: flux moves mass rightwards, carried by the left cell.
        let g = Grid::line(4.0, 4).unwrap();
        let u = Field::from_vec(&g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Field::from_vec(&g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = chemo_divergence(&u, &v, &g, FaceScheme::Upwind).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0, 1.0, -3.0]);
    }

    #[test]
    fn nonlocal_source_examples() {
        let g = Grid::line(2.0, 8).unwrap();
        let params = ModelParams::new(1.0, 1.5, 0.5, 1.5, 2.0, Tau::Parabolic).unwrap();
        let c: f64 = 1.7;
        let (s, i) = nonlocal_source(&g.field(c), &g, &params, 1e-12).unwrap();
        let expected = 1.5 * c.powf(1.5) - 0.5 * c.powf(1.5) * 2.0 * c * c;
        assert!((i - 2.0 * c * c).abs() < 1e-13);
        assert!(s.values().iter().all(|v| (v - expected).abs() < 1e-12));

        let ustar = params.homogeneous_equilibrium(g.measure()).unwrap();
        let (s, _) = nonlocal_source(&g.field(ustar), &g, &params, 1e-12).unwrap();
        assert!(s.values().iter().all(|v| v.abs() < 1e-14));

        let (s, i) = nonlocal_source(&g.field(0.0), &g, &params, 1e-12).unwrap();
        assert_eq!(i, 0.0);
        assert!(s.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nonlocal_source_treats_tiny_negatives_as_zero() {
        let g = Grid::line(1.0, 4).unwrap();
        let params = ModelParams::new(1.0, 1.0, 1.0, 1.5, 1.5, Tau::Parabolic).unwrap();
        let u = Field::from_vec(&g, vec![1.0, -1e-13, 1.0, 1.0]).unwrap();
        let (s, _) = nonlocal_source(&u, &g, &params, 1e-12).unwrap();
        assert_eq!(s.values()[1], 0.0);
        let u = Field::from_vec(&g, vec![1.0, -1e-6, 1.0, 1.0]).unwrap();
        assert!(nonlocal_source(&u, &g, &params, 1e-12).is_err());
    }

    #[test]
    fn fractional_power_continuity_at_zero() {
        assert_eq!(nonneg_pow(0.0, 1.0), 0.0);
        assert_eq!(nonneg_pow(0.0, 1.37), 0.0);
        assert!((nonneg_pow(2.0, 1.5) - 2f64.powf(1.5)).abs() < 1e-15);
        assert!(nonneg_pow(1e-300, 1.37) < 1e-300);
    }

    fn mirror_x(grid: &Grid, f: &Field) -> Field {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut out = f.clone();
        for j in 0..ny {
            for i in 0..nx {
                out.values_mut()[grid.idx(i, j)] = f.values()[grid.idx(nx - 1 - i, j)];
            }
        }
        out
    }

    proptest! {
        #[test]
        fn mirroring_commutes_with_operators(seed in 0u64..1000, two_d in any::<bool>()) {
            let g = if two_d { Grid::rect(1.0, 0.7, 7, 5).unwrap() } else { Grid::line(1.0, 11).unwrap() };
            let u = random_field(&g, seed, 0.0, 3.0);
            let v = random_field(&g, seed + 7, 0.0, 3.0);
            let (um, vm) = (mirror_x(&g, &u), mirror_x(&g, &v));
            let lap = mirror_x(&g, &laplacian(&v, &g).unwrap());
            let lap_m = laplacian(&vm, &g).unwrap();
            for (a, b) in lap.values().iter().zip(lap_m.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            for face in [FaceScheme::Upwind, FaceScheme::Central] {
                let cd = mirror_x(&g, &chemo_divergence(&u, &v, &g, face).unwrap());
                let cd_m = chemo_divergence(&um, &vm, &g, face).unwrap();
                for (a, b) in cd.values().iter().zip(cd_m.values()) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }
        }

        #[test]
        fn dampening_dominates_above_threshold(seed in 0u64..1000, a in 0.1f64..3.0, b in 0.1f64..3.0) {
            let g = Grid::line(1.0, 16).unwrap();
            let params = ModelParams::new(1.0, a, b, 1.3, 2.0, Tau::Parabolic).unwrap();
            let u = random_field(&g, seed, 0.0, 4.0);
            let (s, i) = nonlocal_source(&u, &g, &params, 1e-12).unwrap();
            if i > a / b {
                for (sv, uv) in s.values().iter().zip(u.values()) {
                    if *uv > 0.0 {
                        prop_assert!(*sv < 0.0);
                    }
                }
            }
        }
    }
}
