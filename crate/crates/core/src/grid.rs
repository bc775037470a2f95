//! Uniform 1-D grids, discrete fields and their norms.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::powf;

pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_lo: f64,
    x_hi: f64,
    n_cells: usize,
    h: f64,
}

impl Grid {
    pub fn new(x_lo: f64, x_hi: f64, n_cells: usize) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_hi > x_lo) {
            return Err(invalid!(
                "grid interval ({x_lo}, {x_hi}) is empty or not finite"
            ));
        }
        if n_cells < MIN_CELLS {
            return Err(invalid!(
                "grid needs at least {MIN_CELLS} cells (got {n_cells})"
            ));
        }
        Ok(Self {
            x_lo,
            x_hi,
            n_cells,
            h: (x_hi - x_lo) / n_cells as f64,
        })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Mesh width.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn measure(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    /// Node `i` for `i` in `0..=n_cells`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_cells {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Same cell count on `(x_lo, x_hi)` dilated by `factor` about the midpoint.
    pub fn dilated(&self, factor: f64) -> Result<Self> {
        let mid = 0.5 * (self.x_lo + self.x_hi);
        let half = 0.5 * self.measure() * factor;
        Self::new(mid - half, mid + half, self.n_cells)
    }
}

/// A discrete function: one value per interior node plus a boundary value shared by both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    interior: Vec<f64>,
    boundary: f64,
}

impl Field {
    pub fn new(grid: Grid, interior: Vec<f64>, boundary: f64) -> Result<Self> {
        if interior.len() != grid.n_interior() {
            return Err(invalid!(
                "field has {} interior values, grid has {} interior nodes",
                interior.len(),
                grid.n_interior()
            ));
        }
        if !boundary.is_finite() || boundary < 0.0 {
            return Err(invalid!(
                "boundary value must be finite and >= 0 (got {boundary})"
            ));
        }
        if let Some(i) = interior.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("non-finite value at interior node {}", i + 1));
        }
        Ok(Self {
            grid,
            interior,
            boundary,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            interior: alloc::vec![0.0; grid.n_interior()],
            boundary: 0.0,
        }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(grid: Grid, boundary: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let interior = (1..grid.n_cells()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, interior, boundary)
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, interior: Vec<f64>, boundary: f64) -> Self {
        Self {
            grid,
            interior,
            boundary,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary_value(&self) -> f64 {
        self.boundary
    }

    /// Value at node `i` in `0..=n_cells`.
    pub fn value(&self, i: usize) -> f64 {
        if i == 0 || i == self.grid.n_cells() {
            self.boundary
        } else {
            self.interior[i - 1]
        }
    }

    /// All `n_cells + 1` node values, boundary included.
    pub fn node_values(&self) -> Vec<f64> {
        (0..=self.grid.n_cells()).map(|i| self.value(i)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            interior: self.interior.iter().map(|v| c * v).collect(),
            boundary: c * self.boundary,
        }
    }

    pub fn min_value(&self) -> f64 {
        self.interior.iter().copied().fold(self.boundary, f64::min)
    }
}

/// A pair of fields on one grid at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

impl StatePair {
    pub fn new(u: Field, v: Field, t: f64) -> Result<Self> {
        if u.grid() != v.grid() {
            return Err(invalid!("u and v live on different grids"));
        }
        if !(t >= 0.0) {
            return Err(invalid!("time must be >= 0 (got {t})"));
        }
        Ok(Self { u, v, t })
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }
}

/// Max of `|f|` over all nodes, boundary included.
pub fn sup_norm(f: &Field) -> f64 {
    f.interior
        .iter()
        .fold(f.boundary.abs(), |acc, v| acc.max(v.abs()))
}

/// Trapezoidal `(∑ w_i |f_i|^s)^{1/s}`.
pub fn lp_norm(f: &Field, s: f64) -> Result<f64> {
    if !(s >= 1.0) || !s.is_finite() {
        return Err(invalid!(
            "norm exponent must satisfy 1 <= s < inf (got {s})"
        ));
    }
    if !f.boundary.is_finite() || f.interior.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("field contains non-finite values"));
    }
    let sup = sup_norm(f);
    if sup == 0.0 {
        return Ok(0.0);
    }
    // Scaled by the sup so large exponents cannot overflow.
    let grid = f.grid;
    let sum: f64 = (0..=grid.n_cells())
        .map(|i| grid.weight(i) * powf(f.value(i).abs() / sup, s))
        .sum();
    Ok(sup * powf(sum, 1.0 / s))
}

/// Trapezoidal `∫ g(f(x)) dx` over all nodes.
pub fn integrate_with(f: &Field, g: impl Fn(f64) -> f64) -> f64 {
    let grid = f.grid;
    (0..=grid.n_cells())
        .map(|i| grid.weight(i) * g(f.value(i)))
        .sum()
}
