//! Uniform cell-centered rectangular meshes and the fields living on them.
//!
//! Cells are stored row-major with `x` fastest: `index = j * nx + i`. A 1D grid
//! is a 2D grid with a single row. Homogeneous Neumann conditions are realized
//! by reflecting the boundary cell into a virtual ghost cell, which makes every
//! boundary face carry zero flux.

use crate::error::{FieldError, GridError};

/// Default absolute tolerance below zero accepted for densities.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extent: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new(extent: &[f64], cells: &[usize]) -> Result<Self, GridError> {
        let dim = extent.len();
        if !(1..=2).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if cells.len() != dim {
            return Err(GridError::AxisCount { expected: dim, got: cells.len() });
        }
        let mut e = [1.0; 2];
        let mut c = [1usize; 2];
        for axis in 0..dim {
            if !(extent[axis].is_finite() && extent[axis] > 0.0) {
                return Err(GridError::Extent { axis, extent: extent[axis] });
            }
            if cells[axis] < 4 {
                return Err(GridError::TooFewCells { axis, cells: cells[axis] });
            }
            e[axis] = extent[axis];
            c[axis] = cells[axis];
        }
        let h = [e[0] / c[0] as f64, e[1] / c[1] as f64];
        Ok(Self { dim, extent: e, cells: c, h })
    }

    pub fn line(length: f64, cells: usize) -> Result<Self, GridError> {
        Self::new(&[length], &[cells])
    }

    pub fn rect(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    /// Row count; 1 for one-dimensional grids.
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn hx(&self) -> f64 {
        self.h[0]
    }

    pub fn hy(&self) -> f64 {
        self.h[1]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `|Ω|`, the product of the extents.
    pub fn measure(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.cells[0] && j < self.cells[1]);
        j * self.cells[0] + i
    }

    /// Cell-center coordinates of cell `index` (the `y` entry is 0 in 1D).
    pub fn center(&self, index: usize) -> [f64; 2] {
        let i = index % self.cells[0];
        let j = index / self.cells[0];
        let x = (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 };
        [x, y]
    }

    /// Same extents with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let cells: Vec<usize> = self.cells().iter().map(|c| c * factor).collect();
        Self::new(self.extent(), &cells).expect("refining a valid grid stays valid")
    }

    pub fn field(&self, value: f64) -> Field {
        Field::constant(self, value)
    }

    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field {
            values: (0..self.len()).map(|k| {
                let [x, y] = self.center(k);
                f(x, y)
            })
            .collect(),
        }
    }
}

/// One sample per cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self { values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Length { expected: grid.len(), got: values.len() });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(FieldError::NonFinite { index, value: self.values[index] }),
            None => Ok(()),
        }
    }

    /// Errors on the most negative value below `-tol`, if any.
    pub fn check_nonnegative(&self, tol: f64) -> Result<(), FieldError> {
        let (index, value) = self
            .values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if value < -tol {
            Err(FieldError::Negative { index, value, tol })
        } else {
            Ok(())
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &Field) {
        debug_assert_eq!(self.len(), other.len());
        self.values.iter_mut().zip(&other.values).for_each(|(s, o)| *s += factor * o);
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `∫_Ω f dx` by the midpoint rule.
pub fn integrate(field: &Field, grid: &Grid) -> Result<f64, FieldError> {
    field.check_finite()?;
    Ok(grid.cell_volume() * compensated_sum(field.values.iter().copied()))
}

/// `∫_Ω |f|^k dx` by the midpoint rule, `k ≥ 1`.
pub fn lp_norm_pow(field: &Field, grid: &Grid, k: f64) -> Result<f64, FieldError> {
    assert!(k >= 1.0, "lp_norm_pow requires k >= 1, got {k}");
    field.check_finite()?;
    Ok(grid.cell_volume() * compensated_sum(field.values.iter().map(|v| abs_pow(*v, k))))
}

/// `max |f|`.
pub fn linf_norm(field: &Field) -> Result<f64, FieldError> {
    field.check_finite()?;
    Ok(field.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[inline]
pub(crate) fn abs_pow(v: f64, k: f64) -> f64 {
    let v = v.abs();
    if k == k.trunc() && k <= 16.0 {
        v.powi(k as i32)
    } else {
        v.powf(k)
    }
}

/// The evolving pair `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    pub step_index: u64,
    pub dt_last: f64,
}

impl State {
    pub fn new(u: Field, v: Field) -> Self {
        Self { u, v, t: 0.0, step_index: 0, dt_last: 0.0 }
    }

    pub fn validate(&self, grid: &Grid, positivity_tol: f64) -> Result<(), FieldError> {
        for f in [&self.u, &self.v] {
            if f.len() != grid.len() {
                return Err(FieldError::Length { expected: grid.len(), got: f.len() });
            }
            f.check_finite()?;
            f.check_nonnegative(positivity_tol)?;
        }
        Ok(())
    }
}
