//! Finite-volume discretization of `L = -∇·D∇ + μ_a` with Robin boundary
//! conditions `u + 2AD ∂ν u = h` on a box.
//!
//! Each boundary face carries a ghost value eliminated through
//! `(u_g + u_in)/2 + 2AD (u_g - u_in)/Δ = h`. The homogeneous part of the
//! closure lands on the diagonal, so the assembled matrix is symmetric
//! positive definite; the `h` part moves to the right-hand side. Boundary
//! traces that use the same closure make the reciprocity identity
//! `∫ (Vh) s dx = ∫ h Q dσ` hold exactly at the discrete level.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{norm, Grid, ScalarField};
use crate::optics::OpticalMedium;

const PAR_CHUNK: usize = 4096;

/// Side of the box a boundary face sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    /// Flat index of the cell owning the face.
    pub cell: usize,
    pub axis: usize,
    pub side: Side,
}

/// Enumerates boundary faces: by axis, then low side before high side, then
/// the owning cells in row-major order over the remaining axes.
pub fn boundary_faces(grid: &Grid) -> Vec<BoundaryFace> {
    let dim = grid.dim();
    let cells = grid.cells();
    let mut faces = Vec::new();
    for axis in 0..dim {
        let others: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
        let count: usize = others.iter().map(|&a| cells[a]).product();
        for side in [Side::Low, Side::High] {
            for k in 0..count {
                let mut idx = [0usize; 3];
                let mut rem = k;
                for &a in others.iter().rev() {
                    idx[a] = rem % cells[a];
                    rem /= cells[a];
                }
                idx[axis] = match side {
                    Side::Low => 0,
                    Side::High => cells[axis] - 1,
                };
                faces.push(BoundaryFace {
                    cell: grid.linear_index(&idx[..dim]),
                    axis,
                    side,
                });
            }
        }
    }
    faces
}

/// Values on the boundary faces of a grid together with the face areas (the
/// discrete surface measure).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    grid: Grid,
    values: Vec<f64>,
    areas: Vec<f64>,
}

impl BoundaryField {
    pub fn constant(grid: Grid, value: f64) -> Self {
        let faces = boundary_faces(&grid);
        let areas = faces.iter().map(|f| grid.face_area(f.axis)).collect();
        BoundaryField {
            values: vec![value; faces.len()],
            areas,
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let mut b = BoundaryField::constant(grid, 0.0);
        if values.len() != b.values.len() {
            return Err(Error::invalid(format!(
                "boundary field needs {} face values, got {}",
                b.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite boundary value"));
        }
        b.values = values;
        Ok(b)
    }

    /// Samples `h` at the center of every boundary face.
    pub fn from_fn(grid: Grid, mut h: impl FnMut(&[f64]) -> f64) -> Self {
        let faces = boundary_faces(&grid);
        let mut b = BoundaryField::constant(grid, 0.0);
        for (k, f) in faces.iter().enumerate() {
            let x = face_center(&grid, f);
            b.values[k] = h(&x[..grid.dim()]);
        }
        b
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn face_center(grid: &Grid, face: &BoundaryFace) -> [f64; 3] {
    let mut x = grid.center(face.cell);
    let half = 0.5 * grid.spacing()[face.axis];
    match face.side {
        Side::Low => x[face.axis] -= half,
        Side::High => x[face.axis] += half,
    }
    x
}

/// How the boundary trace entering `Q = u/(2A)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Face value `(u_g + u_in)/2` from the ghost closure. Makes the
    /// reciprocity identity discretely exact.
    #[default]
    Consistent,
    /// Trace extrapolated from the two innermost cells, `(3u₀ - u₁)/2`, as a
    /// detector reading the physical field would see it.
    Continuum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// `None` means `20 · N^(1/dim)`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Matrix-free discrete diffusion operator with homogeneous Robin closure.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: Grid,
    absorption: Vec<f64>,
    /// Coupling `D_face / Δ²` to the upper neighbour along each axis; zero on
    /// the last layer.
    couplings: [Vec<f64>; 3],
    faces: Vec<BoundaryFace>,
    /// Robin coefficient per boundary face: `(D/Δ²) / (1/2 + 2AD/Δ)`.
    face_coef: Vec<f64>,
    diagonal: Vec<f64>,
    robin: f64,
    options: CgOptions,
}

/// Builds the operator for a homogeneous medium.
pub fn assemble_operator(grid: &Grid, medium: &OpticalMedium) -> DiffusionOperator {
    let d = ScalarField::constant(*grid, medium.diffusion);
    let mu = ScalarField::constant(*grid, medium.mu_a);
    DiffusionOperator::build(grid, d.values(), mu.values(), medium.robin)
}

impl DiffusionOperator {
    /// Operator with cellwise diffusion and absorption. Interior faces use the
    /// harmonic mean of the adjacent diffusion coefficients.
    pub fn heterogeneous(diffusion: &ScalarField, absorption: &ScalarField, robin: f64) -> Result<Self> {
        diffusion.check_same_grid(absorption, "heterogeneous operator")?;
        if diffusion.values().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::invalid("diffusion must be positive in every cell"));
        }
        if absorption.values().iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::invalid("absorption must be non-negative in every cell"));
        }
        if !(robin > 0.0) {
            return Err(Error::invalid("Robin coefficient must be positive"));
        }
        Ok(DiffusionOperator::build(diffusion.grid(), diffusion.values(), absorption.values(), robin))
    }

    fn build(grid: &Grid, d: &[f64], mu: &[f64], robin: f64) -> Self {
        let n = grid.len();
        let dim = grid.dim();
        let strides = grid.strides();
        let mut couplings: [Vec<f64>; 3] = [vec![], vec![], vec![]];
        let mut diagonal = mu.to_vec();
        for axis in 0..dim {
            let h = grid.spacing()[axis];
            let mut c = vec![0.0; n];
            for i in 0..n {
                let idx = grid.multi_index(i);
                if idx[axis] + 1 < grid.cells()[axis] {
                    let j = i + strides[axis];
                    let dface = 2.0 * d[i] * d[j] / (d[i] + d[j]);
                    c[i] = dface / (h * h);
                    diagonal[i] += c[i];
                    diagonal[j] += c[i];
                }
            }
            couplings[axis] = c;
        }
        let faces = boundary_faces(grid);
        let face_coef: Vec<f64> = faces
            .iter()
            .map(|f| {
                let h = grid.spacing()[f.axis];
                let di = d[f.cell];
                (di / (h * h)) / (0.5 + 2.0 * robin * di / h)
            })
            .collect();
        for (f, c) in faces.iter().zip(&face_coef) {
            diagonal[f.cell] += c;
        }
        DiffusionOperator {
            grid: *grid,
            absorption: mu.to_vec(),
            couplings,
            faces,
            face_coef,
            diagonal,
            robin,
            options: CgOptions::default(),
        }
    }

    pub fn with_options(mut self, options: CgOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> CgOptions {
        self.options
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn robin(&self) -> f64 {
        self.robin
    }

    pub fn faces(&self) -> &[BoundaryFace] {
        &self.faces
    }

    /// `L u` with the homogeneous closure (h = 0).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let dim = self.grid.dim();
        let strides = self.grid.strides();
        let cells = self.grid.cells();
        out.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(chunk, block)| {
            let base = chunk * PAR_CHUNK;
            for (k, o) in block.iter_mut().enumerate() {
                let i = base + k;
                let idx = self.grid.multi_index(i);
                let mut acc = self.absorption[i] * u[i];
                for axis in 0..dim {
                    let s = strides[axis];
                    if idx[axis] + 1 < cells[axis] {
                        acc += self.couplings[axis][i] * (u[i] - u[i + s]);
                    }
                    if idx[axis] > 0 {
                        acc += self.couplings[axis][i - s] * (u[i] - u[i - s]);
                    }
                }
                *o = acc;
            }
        });
        for (f, c) in self.faces.iter().zip(&self.face_coef) {
            out[f.cell] += c * u[f.cell];
        }
    }

    /// Right-hand side contributed by an inhomogeneous boundary datum `h`.
    pub fn boundary_source(&self, h: &BoundaryField) -> Result<Vec<f64>> {
        if h.grid() != &self.grid {
            return Err(Error::invalid("boundary datum lives on a different grid"));
        }
        let mut b = vec![0.0; self.grid.len()];
        for ((f, c), hv) in self.faces.iter().zip(&self.face_coef).zip(h.values()) {
            b[f.cell] += c * hv;
        }
        Ok(b)
    }

    /// Solves `L x = rhs` by Jacobi-preconditioned conjugate gradients.
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let n = rhs.len();
        let bnorm = norm(rhs);
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    residual: 0.0,
                },
            ));
        }
        let max_iter = self.options.max_iter.unwrap_or_else(|| {
            let per_axis = (n as f64).powf(1.0 / self.grid.dim() as f64);
            (20.0 * per_axis).ceil() as usize
        });
        let tol = self.options.rel_tol * bnorm;
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diagonal).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = par_dot(&r, &z);
        let mut rnorm = bnorm;
        for it in 1..=max_iter {
            self.apply_into(&p, &mut ap);
            let alpha = rz / par_dot(&p, &ap);
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
            rnorm = par_dot(&r, &r).sqrt();
            if rnorm <= tol {
                // recompute the true residual to guard against drift
                let lx = self.apply(&x);
                let true_res = lx.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if true_res <= tol {
                    return Ok((
                        x,
                        SolveStats {
                            iterations: it,
                            residual: true_res / bnorm,
                        },
                    ));
                }
                r = rhs.iter().zip(&lx).map(|(b, l)| b - l).collect();
            }
            z.par_iter_mut()
                .zip(&r)
                .zip(&self.diagonal)
                .for_each(|((z, r), d)| *z = r / d);
            let rz_new = par_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        Err(Error::SolverFailure {
            iterations: max_iter,
            residual: rnorm / bnorm,
        })
    }

    /// Boundary trace of `u` on every face, for the chosen quadrature.
    pub fn boundary_trace(&self, u: &[f64], mode: Quadrature) -> Vec<f64> {
        let strides = self.grid.strides();
        self.faces
            .iter()
            .zip(&self.face_coef)
            .map(|(f, c)| match mode {
                Quadrature::Consistent => {
                    // (u_g + u_in)/2 with h = 0 equals 2A·(D/Δ)·u_in/(1/2 + 2AD/Δ)
                    let h = self.grid.spacing()[f.axis];
                    2.0 * self.robin * c * h * u[f.cell]
                }
                Quadrature::Continuum => {
                    let inner = match f.side {
                        Side::Low => f.cell + strides[f.axis],
                        Side::High => f.cell - strides[f.axis],
                    };
                    1.5 * u[f.cell] - 0.5 * u[inner]
                }
            })
            .collect()
    }
}

fn par_dot(a: &[f64], b: &[f64]) -> f64 {
    // fixed chunking keeps the summation order independent of the thread count
    let partial: Vec<f64> = a
        .par_chunks(PAR_CHUNK)
        .zip(b.par_chunks(PAR_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Solves `L u = s` with homogeneous Robin conditions.
pub fn solve_forward(op: &DiffusionOperator, source: &ScalarField) -> Result<ScalarField> {
    if source.grid() != op.grid() {
        return Err(Error::invalid("source lives on a different grid than the operator"));
    }
    let (u, _) = op.solve(source.values())?;
    ScalarField::from_values(*op.grid(), u)
}

/// Outgoing flux `Q = -D ∂ν u = u/(2A)` on every boundary face.
pub fn boundary_flux(op: &DiffusionOperator, u: &ScalarField, mode: Quadrature) -> BoundaryField {
    let trace = op.boundary_trace(u.values(), mode);
    let two_a = 2.0 * op.robin();
    BoundaryField::from_values(*op.grid(), trace.into_iter().map(|t| t / two_a).collect())
        .expect("trace has one value per face")
}

/// Weight `v = Vh`: solves `L v = 0` with `v + 2AD ∂ν v = h`.
pub fn solve_adjoint_weight(op: &DiffusionOperator, h: &BoundaryField) -> Result<ScalarField> {
    let b = op.boundary_source(h)?;
    let (v, _) = op.solve(&b)?;
    ScalarField::from_values(*op.grid(), v)
}

/// Midpoint quadrature of `∫ h Q dσ`.
pub fn boundary_functional(h: &BoundaryField, q: &BoundaryField) -> Result<f64> {
    if h.grid() != q.grid() {
        return Err(Error::invalid("boundary fields live on different grids"));
    }
    Ok(h.values()
        .iter()
        .zip(q.values())
        .zip(h.areas())
        .map(|((h, q), a)| h * q * a)
        .sum())
}

/// The two sides of the reciprocity identity and their relative gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reciprocity {
    /// `∫ (Vh) s dx`
    pub interior: f64,
    /// `∫ h Q dσ`
    pub boundary: f64,
    pub residual: f64,
}

/// Both sides of the identity, with both solves run to relative residual
/// [`RECIPROCITY_SOLVE_TOL`] so that the gap reflects the quadrature rather
/// than the solver.
pub fn reciprocity(
    op: &DiffusionOperator,
    h: &BoundaryField,
    s: &ScalarField,
    mode: Quadrature,
) -> Result<Reciprocity> {
    let options = op.options();
    let tight = op.clone().with_options(CgOptions {
        rel_tol: options.rel_tol.min(RECIPROCITY_SOLVE_TOL),
        ..options
    });
    let op = &tight;
    let v = solve_adjoint_weight(op, h)?;
    let u = solve_forward(op, s)?;
    let q = boundary_flux(op, &u, mode);
    let interior = v.inner(s);
    let boundary = boundary_functional(h, &q)?;
    let residual = (interior - boundary).abs() / interior.abs().max(f64::MIN_POSITIVE);
    Ok(Reciprocity {
        interior,
        boundary,
        residual: if interior == 0.0 && boundary == 0.0 { 0.0 } else { residual },
    })
}

pub const RECIPROCITY_SOLVE_TOL: f64 = 1e-12;

pub fn reciprocity_residual(
    op: &DiffusionOperator,
    h: &BoundaryField,
    s: &ScalarField,
    mode: Quadrature,
) -> Result<f64> {
    Ok(reciprocity(op, h, s, mode)?.residual)
}

/// Width of the boundary collar on which a null-space test function must vanish.
pub const NULL_SPACE_COLLAR: usize = 2;

/// `|∫ (Vh)(Lφ) dx| / ‖φ‖` for `φ` vanishing near the boundary. Adding `Lφ`
/// to a source does not change the boundary functional, so this is zero up to
/// solver accuracy.
pub fn null_space_defect(op: &DiffusionOperator, h: &BoundaryField, phi: &ScalarField) -> Result<f64> {
    let grid = op.grid();
    if phi.grid() != grid {
        return Err(Error::invalid("test function lives on a different grid"));
    }
    let cells = grid.cells();
    for (i, &p) in phi.values().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let idx = grid.multi_index(i);
        let near = (0..grid.dim())
            .any(|a| idx[a] < NULL_SPACE_COLLAR || idx[a] + NULL_SPACE_COLLAR >= cells[a]);
        if near {
            return Err(Error::invalid(format!(
                "test function must vanish within {NULL_SPACE_COLLAR} cells of the boundary"
            )));
        }
    }
    let pn = phi.norm_l2();
    if pn == 0.0 {
        return Ok(0.0);
    }
    let v = solve_adjoint_weight(op, h)?;
    let lphi = ScalarField::from_values(*grid, op.apply(phi.values()))?;
    Ok(v.inner(&lphi).abs() / pn)
}

/// Lower cutoff used wherever a reconstruction is divided by the weight.
pub fn weight_floor(v: &ScalarField) -> f64 {
    1e-6 * v.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tissue() -> OpticalMedium {
        OpticalMedium::from_tissue(0.05, 15.0, 0.9, 1.37).unwrap()
    }

    fn random_field(grid: Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_values(grid, v).unwrap()
    }

    fn smooth_source(grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x| {
            let r2 = (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2);
            (-r2 / 4.0).exp()
        })
    }

    #[test]
    fn face_enumeration_and_measure() {
        let g = Grid::new(2, &[0.0, 0.0], &[2.0, 3.0], &[4, 6]).unwrap();
        let faces = boundary_faces(&g);
        assert_eq!(faces.len(), 2 * 6 + 2 * 4);
        // axis 0 low side first, in order of the remaining axis
        assert_eq!(faces[0].cell, 0);
        assert_eq!(faces[1].cell, 1);
        assert_eq!(faces[6].cell, 3 * 6);
        let h = BoundaryField::constant(g, 1.0);
        let total: f64 = h.areas().iter().sum();
        assert!((total - g.boundary_measure()).abs() < 1e-12);

        let g3 = Grid::new(3, &[0.0; 3], &[1.0, 2.0, 3.0], &[4, 5, 6]).unwrap();
        let h3 = BoundaryField::constant(g3, 1.0);
        assert_eq!(h3.len(), 2 * (5 * 6 + 4 * 6 + 4 * 5));
        let total: f64 = h3.areas().iter().sum();
        assert!((total - g3.boundary_measure()).abs() < 1e-12);
    }

    #[test]
    fn constant_field_sees_only_absorption_in_the_interior() {
        let g = Grid::centered(2, 8.0, 8).unwrap();
        let m = tissue();
        let op = assemble_operator(&g, &m);
        let lu = op.apply(&vec![3.0; g.len()]);
        for i in 0..g.len() {
            let idx = g.multi_index(i);
            if (1..7).contains(&idx[0]) && (1..7).contains(&idx[1]) {
                assert!((lu[i] - m.mu_a * 3.0).abs() < 1e-12);
            } else {
                assert!(lu[i] > m.mu_a * 3.0);
            }
        }
    }

    #[test]
    fn operator_is_symmetric_and_positive() {
        for g in [Grid::centered(2, 10.0, 12).unwrap(), Grid::centered(3, 10.0, 6).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let d = ScalarField::from_fn(g, |_| 0.0).map(|_| rng.gen_range(0.1..1.0));
            let mu = d.map(|_| rng.gen_range(0.0..0.2));
            let op = DiffusionOperator::heterogeneous(&d, &mu, 2.0).unwrap();
            let u = random_field(g, 1);
            let w = random_field(g, 2);
            let lu = ScalarField::from_values(g, op.apply(u.values())).unwrap();
            let lw = ScalarField::from_values(g, op.apply(w.values())).unwrap();
            let a = lu.inner(&w);
            let b = u.inner(&lw);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
            assert!(lu.inner(&u) > 0.0);
        }
    }

    #[test]
    fn inverse_power_iteration_gives_positive_smallest_eigenvalue() {
        let g = Grid::centered(2, 10.0, 16).unwrap();
        let op = assemble_operator(&g, &OpticalMedium::new(0.0, 0.3, 3.0).unwrap());
        let mut x = vec![1.0; g.len()];
        let mut lambda = 0.0;
        for _ in 0..60 {
            let (y, _) = op.solve(&x).unwrap();
            let ny = norm(&y);
            lambda = norm(&x) / ny;
            x = y.iter().map(|v| v / ny).collect();
        }
        let rayleigh = crate::field::dot(&op.apply(&x), &x);
        assert!(lambda > 0.0 && rayleigh > 0.0);
        assert!((lambda - rayleigh).abs() / rayleigh < 1e-6);
    }

    #[test]
    fn forward_round_trip_and_zero_source() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let op = assemble_operator(&g, &tissue());
        let w = smooth_source(g);
        let s = ScalarField::from_values(g, op.apply(w.values())).unwrap();
        let u = solve_forward(&op, &s).unwrap();
        let err = u.zip_map(&w, |a, b| a - b).norm_l2() / w.norm_l2();
        assert!(err < 1e-8, "{err}");
        let z = solve_forward(&op, &ScalarField::zeros(g)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_source_matches_boundary_layer_bounds() {
        // u = c(1 - φ) with 1D boundary layer φ₁ ≤ φ ≤ φ₁(x) + φ₁(y)
        let m = tissue();
        let g = Grid::centered(2, 20.0, 64).unwrap();
        let op = assemble_operator(&g, &m);
        let c = 2.0;
        let s = ScalarField::constant(g, m.mu_a * c);
        let u = solve_forward(&op, &s).unwrap();
        let k = m.k();
        let a = 10.0;
        let alpha = 1.0 / ((k * a).cosh() + m.robin_length() * k * (k * a).sinh());
        let center = u.get(&g.locate(&[1e-9, 1e-9]).unwrap()[..2]);
        let phi = 1.0 - center / c;
        assert!(phi > 0.95 * alpha && phi < 2.05 * alpha, "{phi} vs {alpha}");
        assert!((center - c).abs() < 0.05 * c);
    }

    #[test]
    fn flux_vanishes_for_zero_field_and_respects_symmetry() {
        let g = Grid::centered(2, 10.0, 16).unwrap();
        let op = assemble_operator(&g, &tissue());
        let q = boundary_flux(&op, &ScalarField::zeros(g), Quadrature::Consistent);
        assert!(q.values().iter().all(|&v| v == 0.0));

        let s = ScalarField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let u = solve_forward(&op, &s).unwrap();
        let q = boundary_flux(&op, &u, Quadrature::Consistent);
        // the four sides carry the same profile, and each side is symmetric
        let side = 16;
        let qv = q.values();
        let max = q.max();
        for k in 0..side {
            for s in 1..4 {
                assert!((qv[k] - qv[s * side + k]).abs() < 1e-10 * max);
            }
            assert!((qv[k] - qv[side - 1 - k]).abs() < 1e-10 * max);
        }
    }

    #[test]
    fn consistent_flux_matches_fick_law_through_the_closure() {
        let m = tissue();
        let g = Grid::centered(2, 10.0, 16).unwrap();
        let op = assemble_operator(&g, &m);
        let u = random_field(g, 9).map(|v| v + 2.0);
        let q = boundary_flux(&op, &u, Quadrature::Consistent);
        for (k, f) in op.faces().iter().enumerate() {
            let h = g.spacing()[f.axis];
            let beta = m.robin_length() / h;
            let ui = u.values()[f.cell];
            let ug = -ui * (0.5 - beta) / (0.5 + beta);
            let fick = -m.diffusion * (ug - ui) / h;
            assert!((fick - q.values()[k]).abs() < 1e-12 * fick.abs());
        }
    }

    #[test]
    fn trivial_and_zero_weights() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let op = assemble_operator(&g, &OpticalMedium::new(0.0, 0.2, 3.0).unwrap());
        let v = solve_adjoint_weight(&op, &BoundaryField::constant(g, 1.0)).unwrap();
        assert!(v.values().iter().all(|&x| (x - 1.0).abs() < 1e-10));
        let z = solve_adjoint_weight(&op, &BoundaryField::constant(g, 0.0)).unwrap();
        assert!(z.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn absorbing_weight_is_below_one_with_interior_minimum() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let op = assemble_operator(&g, &tissue());
        let v = solve_adjoint_weight(&op, &BoundaryField::constant(g, 1.0)).unwrap();
        assert!(v.values().iter().all(|&x| x > 0.0 && x < 1.0));
        let argmin = (0..g.len()).min_by(|&a, &b| v.values()[a].total_cmp(&v.values()[b])).unwrap();
        let idx = g.multi_index(argmin);
        assert!((15..=16).contains(&idx[0]) && (15..=16).contains(&idx[1]));
    }

    #[test]
    fn boundary_functional_of_constants() {
        let g = Grid::new(2, &[0.0, 0.0], &[4.0, 6.0], &[8, 12]).unwrap();
        let h = BoundaryField::constant(g, 1.0);
        let q = BoundaryField::constant(g, 0.7);
        assert!((boundary_functional(&h, &q).unwrap() - 0.7 * 20.0).abs() < 1e-12);
        let z = BoundaryField::constant(g, 0.0);
        assert_eq!(boundary_functional(&h, &z).unwrap(), 0.0);
    }

    #[test]
    fn reciprocity_is_discretely_exact() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let op = assemble_operator(&g, &tissue());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = BoundaryField::from_fn(g, |_| rng.gen_range(0.5..1.5));
        let s = smooth_source(g);
        let r = reciprocity_residual(&op, &h, &s, Quadrature::Consistent).unwrap();
        assert!(r < 1e-10, "{r}");
        let z = reciprocity_residual(&op, &h, &ScalarField::zeros(g), Quadrature::Consistent).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn null_space_defect_checks_the_collar() {
        let g = Grid::centered(2, 10.0, 20).unwrap();
        let op = assemble_operator(&g, &tissue());
        let h = BoundaryField::constant(g, 1.0);
        let bump = ScalarField::from_fn(g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < 9.0 {
                (1.0 - r2 / 9.0).powi(3)
            } else {
                0.0
            }
        });
        assert!(null_space_defect(&op, &h, &bump).unwrap() < 1e-8);
        assert_eq!(null_space_defect(&op, &h, &ScalarField::zeros(g)).unwrap(), 0.0);
        let mut edge = ScalarField::zeros(g);
        edge.values_mut()[g.linear_index(&[1, 10])] = 1.0;
        assert!(matches!(null_space_defect(&op, &h, &edge), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn solver_reports_failure_when_capped() {
        let g = Grid::centered(2, 20.0, 32).unwrap();
        let op = assemble_operator(&g, &tissue()).with_options(CgOptions {
            rel_tol: 1e-14,
            max_iter: Some(3),
        });
        let err = solve_forward(&op, &smooth_source(g)).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { iterations: 3, .. }));
    }
}
