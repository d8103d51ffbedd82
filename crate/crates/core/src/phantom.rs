//! Piecewise-constant concentration phantoms made of spherical inclusions.

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct Inclusion {
    pub center: Vec<f64>,
    pub radius: f64,
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhantomSpec {
    pub background: f64,
    /// Later entries overwrite earlier ones where they overlap.
    pub inclusions: Vec<Inclusion>,
}

impl PhantomSpec {
    /// Two-inclusion phantom: unit-radius spheres at (2.5, 2.5) and (3.5, 0)
    /// holding 5 and 10 concentration units, in the plane `z = 0` for 3D.
    pub fn two_inclusions(dim: usize) -> Self {
        let pad = |mut v: Vec<f64>| {
            v.resize(dim, 0.0);
            v
        };
        PhantomSpec {
            background: 0.0,
            inclusions: vec![
                Inclusion {
                    center: pad(vec![2.5, 2.5]),
                    radius: 1.0,
                    concentration: 5.0,
                },
                Inclusion {
                    center: pad(vec![3.5, 0.0]),
                    radius: 1.0,
                    concentration: 10.0,
                },
            ],
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.background >= 0.0) {
            return Err(Error::invalid("background concentration must be >= 0"));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if inc.center.len() != grid.dim() {
                return Err(Error::invalid(format!(
                    "inclusion {i} has a {}-component center on a {}D grid",
                    inc.center.len(),
                    grid.dim()
                )));
            }
            if !(inc.radius > 0.0) {
                return Err(Error::invalid(format!("inclusion {i} radius must be > 0")));
            }
            if !(inc.concentration >= 0.0) {
                return Err(Error::invalid(format!("inclusion {i} concentration must be >= 0")));
            }
            if !grid.contains(&inc.center) {
                return Err(Error::invalid(format!("inclusion {i} center lies outside the grid")));
            }
        }
        Ok(())
    }
}

/// Rasterizes the phantom: each cell takes the concentration of the last
/// inclusion containing its center, else the background.
pub fn build_phantom(spec: &PhantomSpec, grid: &Grid) -> Result<ScalarField> {
    spec.validate(grid)?;
    Ok(ScalarField::from_fn(*grid, |x| {
        spec.inclusions
            .iter()
            .rev()
            .find(|inc| {
                let r2: f64 = inc.center.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum();
                r2 <= inc.radius * inc.radius
            })
            .map_or(spec.background, |inc| inc.concentration)
    }))
}
