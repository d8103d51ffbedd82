//! Uniform cell-centered Cartesian grids and real-valued fields on them.
//!
//! All lengths are in millimetres. Cells are stored in row-major order: the
//! last axis varies fastest, so for a 2D grid with `cells = [nx, ny]` the
//! cell `(i, j)` lives at flat index `i * ny + j`.

use crate::error::{Error, Result};

/// Smallest number of cells accepted along any axis.
pub const MIN_CELLS: usize = 4;

/// A 2D or 3D box `origin + [0, extent]` split into equal cells.
///
/// Unused trailing axes of a 2D grid hold `cells = 1` and are ignored by
/// every accessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    origin: [f64; 3],
    extent: [f64; 3],
    cells: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(dim: usize, origin: &[f64], extent: &[f64], cells: &[usize]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        if origin.len() != dim || extent.len() != dim || cells.len() != dim {
            return Err(Error::invalid(format!(
                "grid of dimension {dim} needs {dim} origin, extent and cell entries"
            )));
        }
        let mut g = Grid {
            dim,
            origin: [0.0; 3],
            extent: [1.0; 3],
            cells: [1; 3],
            spacing: [1.0; 3],
        };
        for a in 0..dim {
            if !(extent[a] > 0.0) || !extent[a].is_finite() {
                return Err(Error::invalid(format!("extent along axis {a} must be positive, got {}", extent[a])));
            }
            if !origin[a].is_finite() {
                return Err(Error::invalid(format!("origin along axis {a} is not finite")));
            }
            if cells[a] < MIN_CELLS {
                return Err(Error::invalid(format!(
                    "need at least {MIN_CELLS} cells along axis {a}, got {}",
                    cells[a]
                )));
            }
            g.origin[a] = origin[a];
            g.extent[a] = extent[a];
            g.cells[a] = cells[a];
            g.spacing[a] = extent[a] / cells[a] as f64;
        }
        Ok(g)
    }

    /// Square/cubic grid centered on the origin.
    pub fn centered(dim: usize, side: f64, n: usize) -> Result<Self> {
        Grid::new(dim, &vec![-side / 2.0; dim], &vec![side; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Area (2D: length) of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        (0..self.dim).filter(|&a| a != axis).map(|a| self.spacing[a]).product()
    }

    /// Measure of the box boundary: perimeter in 2D, surface area in 3D.
    pub fn boundary_measure(&self) -> f64 {
        (0..self.dim)
            .map(|axis| {
                2.0 * (0..self.dim).filter(|&a| a != axis).map(|a| self.extent[a]).product::<f64>()
            })
            .sum()
    }

    pub fn strides(&self) -> [usize; 3] {
        let mut s = [0usize; 3];
        let mut acc = 1;
        for a in (0..self.dim).rev() {
            s[a] = acc;
            acc *= self.cells[a];
        }
        s
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let s = self.strides();
        idx.iter().zip(s.iter()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in (0..self.dim).rev() {
            out[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        out
    }

    pub fn center_of(&self, idx: &[usize]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = self.origin[a] + (idx[a] as f64 + 0.5) * self.spacing[a];
        }
        c
    }

    pub fn center(&self, flat: usize) -> [f64; 3] {
        self.center_of(&self.multi_index(flat))
    }

    /// Index of the cell containing `x`, or `None` when `x` is outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            if !(t >= 0.0) || t > self.cells[a] as f64 {
                return None;
            }
            idx[a] = (t.floor() as usize).min(self.cells[a] - 1);
        }
        Some(idx)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.origin[a] && x[a] <= self.origin[a] + self.extent[a])
    }

    /// Geometric center of the box.
    pub fn midpoint(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = self.origin[a] + 0.5 * self.extent[a];
        }
        c
    }

    /// Whether `other` has the same spacing and its cell centers sit on this
    /// grid's lattice (integer cell offset between the origins).
    pub fn lattice_offset(&self, other: &Grid) -> Option<[i64; 3]> {
        if self.dim != other.dim {
            return None;
        }
        let mut off = [0i64; 3];
        for a in 0..self.dim {
            let h = self.spacing[a];
            if ((other.spacing[a] - h) / h).abs() > 1e-9 {
                return None;
            }
            let t = (other.origin[a] - self.origin[a]) / h;
            let r = t.round();
            if (t - r).abs() > 1e-6 {
                return None;
            }
            off[a] = r as i64;
        }
        Some(off)
    }

    /// Grid with the same spacing, grown by `margin` cells on every side.
    pub fn dilate(&self, margin: usize) -> Grid {
        let mut g = *self;
        for a in 0..self.dim {
            g.origin[a] -= margin as f64 * self.spacing[a];
            g.cells[a] += 2 * margin;
            g.extent[a] = g.cells[a] as f64 * self.spacing[a];
        }
        g
    }
}

/// Real values, one per cell of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite field value at cell {i}")));
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let c = grid.center(i);
                f(&c[..grid.dim()])
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.linear_index(idx)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ u w dx` with cell-volume weights.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.grid.cell_volume() * dot(&self.values, &other.values)
    }

    /// `∫ u dx`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Discrete L² norm with cell-volume weights.
    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, mut f: impl FnMut(f64, f64) -> f64) -> ScalarField {
        debug_assert_eq!(self.values.len(), other.values.len());
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        self.grid == other.grid
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what}: fields live on different grids")))
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_extent() {
        let g = Grid::new(2, &[-10.0, -10.0], &[20.0, 20.0], &[64, 64]).unwrap();
        assert_eq!(g.spacing(), &[0.3125, 0.3125]);
        let g3 = Grid::new(3, &[-10.0; 3], &[20.0; 3], &[32; 3]).unwrap();
        assert_eq!(g3.len(), 32768);
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(Grid::new(2, &[0.0, 0.0], &[20.0, 20.0], &[3, 3]).is_err());
        assert!(Grid::new(2, &[0.0, 0.0], &[0.0, 20.0], &[8, 8]).is_err());
        assert!(Grid::new(2, &[0.0, 0.0], &[-1.0, 20.0], &[8, 8]).is_err());
        assert!(Grid::new(4, &[0.0; 4], &[1.0; 4], &[8; 4]).is_err());
    }

    #[test]
    fn index_center_round_trip() {
        let g = Grid::new(3, &[-1.0, 0.5, 2.0], &[3.0, 2.0, 1.0], &[5, 7, 4]).unwrap();
        for flat in 0..g.len() {
            let c = g.center(flat);
            let idx = g.locate(&c[..3]).unwrap();
            assert_eq!(g.linear_index(&idx[..3]), flat);
        }
    }

    #[test]
    fn boundary_measure_of_boxes() {
        let g = Grid::new(2, &[0.0, 0.0], &[3.0, 5.0], &[6, 10]).unwrap();
        assert_eq!(g.boundary_measure(), 16.0);
        let g3 = Grid::new(3, &[0.0; 3], &[1.0, 2.0, 3.0], &[4, 4, 4]).unwrap();
        assert_eq!(g3.boundary_measure(), 22.0);
    }

    #[test]
    fn lattice_offset_detects_alignment() {
        let g = Grid::centered(2, 20.0, 64).unwrap();
        let big = g.dilate(16);
        assert_eq!(big.lattice_offset(&g), Some([16, 16, 0]));
        let shifted = Grid::new(2, &[-9.9, -10.0], &[20.0, 20.0], &[64, 64]).unwrap();
        assert_eq!(g.lattice_offset(&shifted), None);
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = Grid::centered(2, 1.0, 4).unwrap();
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(ScalarField::from_values(g, v).is_err());
    }
}
