//! Direct solvers for `(I − σ Δ_h) w = rhs` with homogeneous Neumann ghosts.
//!
//! In 1D the operator is tridiagonal and is factored by the Thomas algorithm.
//! In 2D the cell-centered Neumann Laplacian is diagonalized exactly by the
//! type-II discrete cosine transform along each axis; the transforms are
//! applied as dense orthonormal matrices, which is adequate for the mesh
//! sizes this tool targets (up to a few hundred cells per axis).

use std::f64::consts::PI;

use thiserror::Error;

use crate::grid::{Field, Grid};
use crate::operators::OperatorWorkspace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("relative residual {residual:e} exceeds tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },
    #[error("non-finite solution")]
    NonFinite,
}

/// Orthonormal DCT-II basis for `n` cell-centered points and the matching
/// eigenvalues of `−Δ_h` (Neumann), `λ_k = 4/h² sin²(πk / 2n)`.
#[derive(Debug, Clone)]
struct CosineBasis {
    n: usize,
    // row k holds mode k sampled at the n cell centers
    modes: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl CosineBasis {
    fn new(n: usize, h: f64) -> Self {
        let mut modes = vec![0.0; n * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                modes[k * n + i] = s * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let eigenvalues = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / (2.0 * n as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        Self { n, modes, eigenvalues }
    }
}

/// Discrete Neumann eigenvalue `λ_k` of `−Δ_h` for mode `k` on `n` cells of width `h`.
pub fn neumann_eigenvalue(k: usize, n: usize, h: f64) -> f64 {
    let s = (PI * k as f64 / (2.0 * n as f64)).sin();
    4.0 * s * s / (h * h)
}

#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    grid: Grid,
    linear_tol: f64,
    basis: Option<(CosineBasis, CosineBasis)>,
    ops: OperatorWorkspace,
    // Thomas sweep scratch
    c_prime: Vec<f64>,
    // transform scratch, ny × nx
    scratch: Vec<f64>,
    lap: Field,
    last_residual: f64,
}

impl HelmholtzSolver {
    pub fn new(grid: &Grid, linear_tol: f64) -> Self {
        let basis = (grid.dim() == 2).then(|| {
            (CosineBasis::new(grid.nx(), grid.hx()), CosineBasis::new(grid.ny(), grid.hy()))
        });
        Self {
            grid: grid.clone(),
            linear_tol,
            basis,
            ops: OperatorWorkspace::new(grid),
            c_prime: vec![0.0; grid.nx()],
            scratch: vec![0.0; grid.len()],
            lap: Field::zeros(grid),
            last_residual: 0.0,
        }
    }

    /// Relative residual of the most recent successful solve.
    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    pub fn solve(&mut self, rhs: &Field, sigma: f64) -> Result<Field, SolveError> {
        let mut out = Field::zeros(&self.grid);
        self.solve_into(rhs, sigma, &mut out)?;
        Ok(out)
    }

    pub fn solve_into(&mut self, rhs: &Field, sigma: f64, out: &mut Field) -> Result<(), SolveError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SolveError::Sigma(sigma));
        }
        if self.grid.dim() == 1 {
            self.thomas(rhs.values(), sigma, out.values_mut());
        } else {
            self.cosine_solve(rhs.values(), sigma, out.values_mut());
        }
        if out.check_finite().is_err() {
            return Err(SolveError::NonFinite);
        }
        let residual = self.relative_residual(rhs, sigma, out);
        if residual > self.linear_tol {
            return Err(SolveError::Residual { residual, tol: self.linear_tol });
        }
        self.last_residual = residual;
        Ok(())
    }

    /// `‖(I − σΔ_h) w − rhs‖₂ / ‖rhs‖₂` (absolute when `rhs = 0`).
    pub fn relative_residual(&mut self, rhs: &Field, sigma: f64, w: &Field) -> f64 {
        self.ops
            .laplacian_into(w, &mut self.lap)
            .expect("finite solution checked by caller");
        let mut num = 0.0;
        let mut den = 0.0;
        for ((wv, lv), rv) in w.values().iter().zip(self.lap.values()).zip(rhs.values()) {
            let r = wv - sigma * lv - rv;
            num += r * r;
            den += rv * rv;
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    fn thomas(&mut self, rhs: &[f64], sigma: f64, x: &mut [f64]) {
        let n = rhs.len();
        let h = self.grid.hx();
        let off = -sigma / (h * h);
        let diag = |i: usize| {
            let neighbours = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            1.0 - off * neighbours
        };
        let cp = &mut self.c_prime;
        cp[0] = off / diag(0);
        x[0] = rhs[0] / diag(0);
        for i in 1..n {
            let m = diag(i) - off * cp[i - 1];
            cp[i] = off / m;
            x[i] = (rhs[i] - off * x[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
    }

    fn cosine_solve(&mut self, rhs: &[f64], sigma: f64, out: &mut [f64]) {
        let (bx, by) = self.basis.as_ref().expect("2D grid has a cosine basis");
        let (nx, ny) = (bx.n, by.n);
        let tmp = &mut self.scratch;

        // along x: tmp[j, k] = Σ_i rhs[j, i] Cx[k, i]
        transform_rows(rhs, &bx.modes, nx, ny, tmp, false);
        // along y: out[q, k] = Σ_j Cy[q, j] tmp[j, k]
        transform_cols(tmp, &by.modes, nx, ny, out, false);
        for q in 0..ny {
            for k in 0..nx {
                out[q * nx + k] /= 1.0 + sigma * (bx.eigenvalues[k] + by.eigenvalues[q]);
            }
        }
        transform_cols(out, &by.modes, nx, ny, tmp, true);
        transform_rows(tmp, &bx.modes, nx, ny, out, true);
    }
}

/// Applies the basis along x to every row; `inverse` uses the transpose.
fn transform_rows(src: &[f64], modes: &[f64], nx: usize, ny: usize, dst: &mut [f64], inverse: bool) {
    for j in 0..ny {
        let row = &src[j * nx..(j + 1) * nx];
        for k in 0..nx {
            let mut acc = 0.0;
            for (i, r) in row.iter().enumerate() {
                let m = if inverse { modes[i * nx + k] } else { modes[k * nx + i] };
                acc += m * r;
            }
            dst[j * nx + k] = acc;
        }
    }
}

/// Applies the basis along y to every column; `inverse` uses the transpose.
fn transform_cols(src: &[f64], modes: &[f64], nx: usize, ny: usize, dst: &mut [f64], inverse: bool) {
    dst[..nx * ny].iter_mut().for_each(|d| *d = 0.0);
    for q in 0..ny {
        let out_row = q * nx;
        for j in 0..ny {
            let m = if inverse { modes[j * ny + q] } else { modes[q * ny + j] };
            let in_row = j * nx;
            for k in 0..nx {
                dst[out_row + k] += m * src[in_row + k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn grids() -> Vec<Grid> {
        vec![
            Grid::line(2.0, 33).unwrap(),
            Grid::rect(1.0, 1.5, 12, 9).unwrap(),
            Grid::rect(1.0, 1.0, 32, 32).unwrap(),
        ]
    }

    #[test]
    fn constants_are_preserved() {
        for g in grids() {
            let mut solver = HelmholtzSolver::new(&g, 1e-10);
            let w = solver.solve(&g.field(2.75), 0.3).unwrap();
            assert!(w.values().iter().all(|v| (v - 2.75).abs() < 1e-13), "{g:?}");
        }
    }

    #[test]
    fn discrete_eigenmode_is_recovered_exactly() {
        // cos(πx/L) sampled at cell centers is an exact eigenvector of Δ_h.
        let sigma = 0.7;
        for g in grids() {
            let l = g.extent()[0];
            let q = neumann_eigenvalue(1, g.nx(), g.hx());
            let mode = g.field_from_fn(|x, _| (PI * x / l).cos());
            let mut rhs = mode.clone();
            rhs.scale(1.0 + sigma * q);
            let mut solver = HelmholtzSolver::new(&g, 1e-10);
            let w = solver.solve(&rhs, sigma).unwrap();
            for (a, b) in w.values().iter().zip(mode.values()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn random_rhs_meets_residual_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for g in grids() {
            let mut solver = HelmholtzSolver::new(&g, 1e-10);
            for &sigma in &[1e-4, 0.05, 3.0] {
                let rhs = Field::from_vec(&g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                let w = solver.solve(&rhs, sigma).unwrap();
                assert!(solver.relative_residual(&rhs, sigma, &w) <= 1e-10);
            }
        }
    }

    #[test]
    fn nonnegative_data_stays_nonnegative() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for g in grids() {
            let mut solver = HelmholtzSolver::new(&g, 1e-10);
            for _ in 0..10 {
                let rhs = Field::from_vec(
                    &g,
                    (0..g.len()).map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.0..10.0) } else { 0.0 }).collect(),
                )
                .unwrap();
                let w = solver.solve(&rhs, rng.gen_range(1e-3..1.0)).unwrap();
                assert!(w.min() >= -1e-12, "{}", w.min());
            }
        }
    }

    #[test]
    fn solve_conserves_sum() {
        for g in grids() {
            let rhs = g.field_from_fn(|x, y| (3.0 * x).sin().abs() + y);
            let mut solver = HelmholtzSolver::new(&g, 1e-10);
            let w = solver.solve(&rhs, 0.2).unwrap();
            let s0: f64 = rhs.values().iter().sum();
            let s1: f64 = w.values().iter().sum();
            assert!((s0 - s1).abs() < 1e-12 * s0.abs());
        }
    }

    #[test]
    fn rejects_bad_sigma() {
        let g = Grid::line(1.0, 8).unwrap();
        let mut solver = HelmholtzSolver::new(&g, 1e-10);
        assert!(matches!(solver.solve(&g.field(1.0), 0.0), Err(SolveError::Sigma(_))));
        assert!(matches!(solver.solve(&g.field(1.0), f64::NAN), Err(SolveError::Sigma(_))));
    }

    #[test]
    fn tolerance_failure_is_reported() {
        let g = Grid::rect(1.0, 1.0, 16, 16).unwrap();
        let mut solver = HelmholtzSolver::new(&g, 0.0);
        let rhs = g.field_from_fn(|x, y| x * y + 1.0);
        assert!(matches!(solver.solve(&rhs, 1.0), Err(SolveError::Residual { .. })));
    }
}
