//! Excitation patterns and the weighted transforms they produce.
//!
//! A double cone with vertex (focus) `x` illuminates `y` with intensity
//! `a((x-y)/|x-y|) / |x-y|^{n-1}`. Reciprocity turns the boundary measurement
//! for that cone into `Rf(x) = ∫ I_x(y) v(y) f(y) dy`, which is what
//! [`cone_transform`] computes. Single X-ray lines give the weighted X-ray
//! transform of `v f`, computed by [`xray_transform`].

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::diffusion::{boundary_flux, boundary_functional, solve_adjoint_weight, solve_forward};
use crate::diffusion::{BoundaryField, DiffusionOperator, Quadrature};
use crate::error::{Error, Result};
use crate::fft::{fast_len, FftNd};
use crate::field::{Grid, ScalarField};

/// Default vignetting width as a fraction of the half-angle.
pub const DEFAULT_TAPER_FRACTION: f64 = 0.15;

/// Cells whose center is within this many cells (max norm) of the focus are
/// integrated on a sub-grid instead of sampled at their center.
const NEAR_CELLS: f64 = 4.0;
const SUBCELLS: usize = 8;
const POLAR_2D: usize = 4096;
const POLAR_3D: (usize, usize) = (128, 256);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApertureKind {
    /// Double cone about an axis, optionally vignetted.
    Cone,
    /// Uniform density over the whole sphere/circle.
    Full,
}

/// Even angular density `a(θ)` of a double cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    dim: usize,
    kind: ApertureKind,
    axis: [f64; 3],
    half_angle: f64,
    taper_width: f64,
    amplitude: f64,
}

impl Aperture {
    /// Double cone about `axis` with the default taper of
    /// `0.15 · half_angle` and unit amplitude.
    pub fn cone(axis: &[f64], half_angle: f64) -> Result<Self> {
        let dim = axis.len();
        if dim != 2 && dim != 3 {
            return Err(Error::invalid("cone axis must have 2 or 3 components"));
        }
        let len = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::invalid("cone axis must be a nonzero finite vector"));
        }
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(Error::invalid(format!("half-angle must lie in (0, π/2), got {half_angle}")));
        }
        let mut unit = [0.0; 3];
        for (u, a) in unit.iter_mut().zip(axis) {
            *u = a / len;
        }
        Ok(Aperture {
            dim,
            kind: ApertureKind::Cone,
            axis: unit,
            half_angle,
            taper_width: DEFAULT_TAPER_FRACTION * half_angle,
            amplitude: 1.0,
        })
    }

    /// 2D double cone whose axis makes angle `axis_angle` with the x axis.
    pub fn cone_2d(axis_angle: f64, half_angle: f64) -> Result<Self> {
        Aperture::cone(&[axis_angle.cos(), axis_angle.sin()], half_angle)
    }

    /// `a ≡ 1` on the whole circle/sphere.
    pub fn full(dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid("aperture dimension must be 2 or 3"));
        }
        Ok(Aperture {
            dim,
            kind: ApertureKind::Full,
            axis: [1.0, 0.0, 0.0],
            half_angle: PI / 2.0,
            taper_width: 0.0,
            amplitude: 1.0,
        })
    }

    pub fn with_taper(mut self, taper_width: f64) -> Result<Self> {
        if self.kind == ApertureKind::Full {
            return Err(Error::invalid("a full aperture has no taper"));
        }
        if !(0.0..=self.half_angle).contains(&taper_width) {
            return Err(Error::invalid(format!(
                "taper width must lie in [0, half-angle], got {taper_width}"
            )));
        }
        self.taper_width = taper_width;
        Ok(self)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid(format!("amplitude must be positive, got {amplitude}")));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ApertureKind {
        self.kind
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis[..self.dim]
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn taper_width(&self) -> f64 {
        self.taper_width
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `a(θ)` for a unit vector `θ`.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(Error::invalid("direction has the wrong dimension"));
        }
        let n2: f64 = theta.iter().map(|t| t * t).sum();
        if (n2.sqrt() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("direction is not a unit vector (|θ| = {})", n2.sqrt())));
        }
        let mut t = [0.0; 3];
        t[..self.dim].copy_from_slice(theta);
        Ok(self.density(&t))
    }

    /// `a(θ)` without validation; `θ` must be a unit vector.
    pub(crate) fn density(&self, theta: &[f64; 3]) -> f64 {
        if self.kind == ApertureKind::Full {
            return self.amplitude;
        }
        let c = (theta[0] * self.axis[0] + theta[1] * self.axis[1] + theta[2] * self.axis[2]).abs();
        let psi = c.min(1.0).acos();
        let inner = self.half_angle - self.taper_width;
        if psi <= inner {
            self.amplitude
        } else if psi >= self.half_angle {
            0.0
        } else {
            0.5 * self.amplitude * (1.0 + (PI * (psi - inner) / self.taper_width).cos())
        }
    }

    /// Kernel `a(r̂)/|r|^{n-1}` at displacement `r`; zero at `r = 0`.
    fn kernel(&self, r: &[f64; 3]) -> f64 {
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        let unit = [r[0] / len, r[1] / len, r[2] / len];
        let a = self.density(&unit);
        if self.dim == 2 {
            a / len
        } else {
            a / (len * len)
        }
    }
}

/// Cone intensity `I_x(y) = a((x-y)/|x-y|) / |x-y|^{n-1}`.
pub fn cone_intensity(ap: &Aperture, x_focus: &[f64], y: &[f64]) -> Result<f64> {
    if x_focus.len() != ap.dim || y.len() != ap.dim {
        return Err(Error::invalid("points must match the aperture dimension"));
    }
    let mut r = [0.0; 3];
    for a in 0..ap.dim {
        r[a] = x_focus[a] - y[a];
    }
    if r.iter().all(|&c| c == 0.0) {
        return Err(Error::invalid("cone intensity is singular at the focus"));
    }
    Ok(ap.kernel(&r))
}

/// Mean of the cone intensity over the cell whose center sits at `rel`
/// relative to the focus.
///
/// Far cells use the center value. Cells within [`NEAR_CELLS`] of the focus
/// are averaged on a `8^n` sub-grid. The cell containing the focus is
/// integrated exactly in polar coordinates about the focus, where the radial
/// integral reduces to the distance `R(θ)` to the cell boundary.
pub(crate) fn cell_weight(ap: &Aperture, rel: [f64; 3], h: &[f64]) -> f64 {
    let dim = ap.dim;
    let inside = (0..dim).all(|a| rel[a].abs() < 0.5 * h[a]);
    if inside {
        let p = [-rel[0], -rel[1], -rel[2]];
        let volume: f64 = h.iter().product();
        return polar_cell_integral(ap, p, h) / volume;
    }
    // half-cell slack keeps lattice offsets away from the cutoff
    let near = (0..dim).all(|a| rel[a].abs() < (NEAR_CELLS + 0.5) * h[a]);
    if !near {
        return ap.kernel(&rel);
    }
    let s: Vec<f64> = (0..SUBCELLS).map(|k| (k as f64 + 0.5) / SUBCELLS as f64 - 0.5).collect();
    let mut sum = 0.0;
    let zs: &[f64] = if dim == 3 { &s } else { &[0.0] };
    for &sx in &s {
        for &sy in &s {
            for &sz in zs {
                let r = [rel[0] + sx * h[0], rel[1] + sy * h[1], rel[2] + if dim == 3 { sz * h[2] } else { 0.0 }];
                sum += ap.kernel(&r);
            }
        }
    }
    sum / (SUBCELLS.pow(dim as u32)) as f64
}

/// `∫_cell a(r̂)/|r|^{n-1} dr` for a focus at `p` relative to the cell center.
fn polar_cell_integral(ap: &Aperture, p: [f64; 3], h: &[f64]) -> f64 {
    let reach = |theta: &[f64; 3]| {
        let mut r = f64::INFINITY;
        for a in 0..ap.dim {
            if theta[a] != 0.0 {
                let wall = 0.5 * h[a] * theta[a].signum();
                r = r.min((wall - p[a]) / theta[a]);
            }
        }
        r
    };
    if ap.dim == 2 {
        let dt = 2.0 * PI / POLAR_2D as f64;
        (0..POLAR_2D)
            .map(|k| {
                let t = (k as f64 + 0.5) * dt;
                let theta = [t.cos(), t.sin(), 0.0];
                ap.density(&theta) * reach(&theta)
            })
            .sum::<f64>()
            * dt
    } else {
        let (nu, nphi) = POLAR_3D;
        let du = 2.0 / nu as f64;
        let dphi = 2.0 * PI / nphi as f64;
        let mut sum = 0.0;
        for i in 0..nu {
            let u = -1.0 + (i as f64 + 0.5) * du;
            let s = (1.0 - u * u).sqrt();
            for k in 0..nphi {
                let phi = (k as f64 + 0.5) * dphi;
                let theta = [s * phi.cos(), s * phi.sin(), u];
                sum += ap.density(&theta) * reach(&theta);
            }
        }
        sum * du * dphi
    }
}

fn check_apertures(apertures: &[Aperture], dim: usize) -> Result<()> {
    if apertures.is_empty() {
        return Err(Error::invalid("at least one aperture is required"));
    }
    if apertures.iter().any(|a| a.dim != dim) {
        return Err(Error::invalid(format!("every aperture must be {dim}-dimensional")));
    }
    Ok(())
}

/// FFT evaluation of the cone transform for a focus grid on the lattice of
/// the field grid.
///
/// `forward` maps `g = v f` on the field grid to one data field per cone on
/// the focus grid; `adjoint` is its exact transpose.
pub struct ConePlan {
    field: Grid,
    focus: Grid,
    offset: [i64; 3],
    padded: [usize; 3],
    fft: FftNd,
    spectra: Vec<Vec<Complex64>>,
}

impl ConePlan {
    pub fn new(field: &Grid, focus: &Grid, apertures: &[Aperture]) -> Result<Self> {
        let dim = field.dim();
        check_apertures(apertures, dim)?;
        let offset = field
            .lattice_offset(focus)
            .ok_or_else(|| Error::invalid("focus grid is not aligned with the field lattice"))?;
        let n = field.cells();
        let m = focus.cells();
        let mut padded = [1usize; 3];
        let mut table = [1usize; 3];
        for a in 0..dim {
            table[a] = m[a] + n[a] - 1;
            padded[a] = fast_len(table[a]);
        }
        let fft = FftNd::new(&padded[..dim]);
        let h = field.spacing().to_vec();
        let volume = field.cell_volume();
        let pstrides = strides(&padded, dim);
        let spectra = apertures
            .iter()
            .map(|ap| {
                let total: usize = table[..dim].iter().product();
                let mut buf = vec![Complex64::default(); fft.len()];
                let vals: Vec<(usize, f64)> = (0..total)
                    .into_par_iter()
                    .map(|flat| {
                        let t = unflatten(flat, &table, dim);
                        let mut rel = [0.0; 3];
                        let mut dst = 0;
                        for a in 0..dim {
                            // focus index minus source index
                            let d = t[a] as i64 + offset[a] - (n[a] as i64 - 1);
                            rel[a] = -(d as f64) * h[a];
                            dst += t[a] * pstrides[a];
                        }
                        (dst, cell_weight(ap, rel, &h) * volume)
                    })
                    .collect();
                for (dst, w) in vals {
                    buf[dst] = Complex64::new(w, 0.0);
                }
                fft.forward(&mut buf);
                buf
            })
            .collect();
        Ok(ConePlan {
            field: *field,
            focus: *focus,
            offset,
            padded,
            fft,
            spectra,
        })
    }

    pub fn field_grid(&self) -> &Grid {
        &self.field
    }

    pub fn focus_grid(&self) -> &Grid {
        &self.focus
    }

    pub fn cones(&self) -> usize {
        self.spectra.len()
    }

    /// Cell offset of the focus grid origin relative to the field grid.
    pub fn offset(&self) -> [i64; 3] {
        self.offset
    }

    pub fn forward(&self, g: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(g.len(), self.field.len());
        let dim = self.field.dim();
        let n = cells3(&self.field);
        let m = cells3(&self.focus);
        let ps = strides(&self.padded, dim);
        let mut gf = vec![Complex64::default(); self.fft.len()];
        for (q, &val) in g.iter().enumerate() {
            let idx = unflatten(q, &n, dim);
            gf[(0..dim).map(|a| idx[a] * ps[a]).sum::<usize>()] = Complex64::new(val, 0.0);
        }
        self.fft.forward(&mut gf);
        self.spectra
            .iter()
            .map(|spec| {
                let mut c: Vec<Complex64> = gf.iter().zip(spec).map(|(a, b)| a * b).collect();
                self.fft.inverse(&mut c);
                (0..self.focus.len())
                    .map(|p| {
                        let idx = unflatten(p, &m, dim);
                        c[(0..dim).map(|a| (idx[a] + n[a] - 1) * ps[a]).sum::<usize>()].re
                    })
                    .collect()
            })
            .collect()
    }

    pub fn adjoint(&self, data: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(data.len(), self.spectra.len());
        let dim = self.field.dim();
        let n = cells3(&self.field);
        let m = cells3(&self.focus);
        let ps = strides(&self.padded, dim);
        let mut acc = vec![Complex64::default(); self.fft.len()];
        for (d, spec) in data.iter().zip(&self.spectra) {
            assert_eq!(d.len(), self.focus.len());
            let mut df = vec![Complex64::default(); self.fft.len()];
            for (p, &val) in d.iter().enumerate() {
                let idx = unflatten(p, &m, dim);
                df[(0..dim).map(|a| idx[a] * ps[a]).sum::<usize>()] = Complex64::new(val, 0.0);
            }
            self.fft.forward(&mut df);
            acc.par_iter_mut()
                .zip(&df)
                .zip(spec)
                .for_each(|((acc, d), k)| *acc += d * k.conj());
        }
        self.fft.inverse(&mut acc);
        (0..self.field.len())
            .map(|q| {
                let idx = unflatten(q, &n, dim);
                let pos: usize = (0..dim)
                    .map(|a| ((idx[a] + self.padded[a] - (n[a] - 1)) % self.padded[a]) * ps[a])
                    .sum();
                acc[pos].re
            })
            .collect()
    }
}

fn cells3(g: &Grid) -> [usize; 3] {
    let mut c = [1usize; 3];
    c[..g.dim()].copy_from_slice(g.cells());
    c
}

fn strides(shape: &[usize; 3], dim: usize) -> [usize; 3] {
    let mut s = [0usize; 3];
    let mut acc = 1;
    for a in (0..dim).rev() {
        s[a] = acc;
        acc *= shape[a];
    }
    s
}

fn unflatten(mut flat: usize, shape: &[usize; 3], dim: usize) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for a in (0..dim).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

/// Cone transform `Rf(x) = ∫ I_x(y) v(y) f(y) dy` for every focus cell
/// center `x` of `focus`.
///
/// Uses FFT convolution when the focus grid lies on the field lattice and
/// [`cone_transform_direct`] otherwise.
pub fn cone_transform(f: &ScalarField, v: &ScalarField, ap: &Aperture, focus: &Grid) -> Result<ScalarField> {
    f.check_same_grid(v, "cone transform")?;
    if focus.dim() != f.grid().dim() {
        return Err(Error::invalid("focus grid dimension differs from the field grid"));
    }
    if f.grid().lattice_offset(focus).is_none() {
        return cone_transform_direct(f, v, ap, focus);
    }
    let plan = ConePlan::new(f.grid(), focus, std::slice::from_ref(ap))?;
    let g: Vec<f64> = f.values().iter().zip(v.values()).map(|(a, b)| a * b).collect();
    let out = plan.forward(&g).pop().expect("one cone");
    ScalarField::from_values(*focus, out)
}

/// Direct `O(N_focus · N_field)` summation with the same cell weights as the
/// FFT path.
pub fn cone_transform_direct(
    f: &ScalarField,
    v: &ScalarField,
    ap: &Aperture,
    focus: &Grid,
) -> Result<ScalarField> {
    f.check_same_grid(v, "cone transform")?;
    let grid = *f.grid();
    check_apertures(std::slice::from_ref(ap), grid.dim())?;
    if focus.dim() != grid.dim() {
        return Err(Error::invalid("focus grid dimension differs from the field grid"));
    }
    let sources: Vec<([f64; 3], f64)> = f
        .values()
        .iter()
        .zip(v.values())
        .enumerate()
        .filter(|(_, (f, v))| **f * **v != 0.0)
        .map(|(i, (f, v))| (grid.center(i), f * v))
        .collect();
    let h = grid.spacing().to_vec();
    let volume = grid.cell_volume();
    let out: Vec<f64> = (0..focus.len())
        .into_par_iter()
        .map(|p| {
            let x = focus.center(p);
            sources
                .iter()
                .map(|(y, g)| {
                    let rel = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
                    cell_weight(ap, rel, &h) * g
                })
                .sum::<f64>()
                * volume
        })
        .collect();
    ScalarField::from_values(*focus, out)
}

/// Reduced measurements `Rf(x, j)`: one field per cone on a shared focus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeScanData {
    focus: Grid,
    fields: Vec<ScalarField>,
}

impl ConeScanData {
    pub fn new(focus: Grid, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::invalid("scan data needs at least one cone"));
        }
        if fields.iter().any(|f| *f.grid() != focus) {
            return Err(Error::invalid("every cone field must live on the focus grid"));
        }
        Ok(ConeScanData { focus, fields })
    }

    pub fn focus(&self) -> &Grid {
        &self.focus
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn cones(&self) -> usize {
        self.fields.len()
    }

    /// `Σ_j Rf(·, j)`.
    pub fn sum(&self) -> ScalarField {
        let mut acc = ScalarField::zeros(self.focus);
        for f in &self.fields {
            for (a, b) in acc.values_mut().iter_mut().zip(f.values()) {
                *a += b;
            }
        }
        acc
    }

    pub fn map_fields(&self, f: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<ConeScanData> {
        ConeScanData::new(self.focus, self.fields.iter().map(f).collect::<Result<_>>()?)
    }
}

/// How [`simulate_boundary_scan`] produces the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Evaluate the interior side of the reciprocity identity directly.
    Fast,
    /// Solve the diffusion problem for every focus and cone and integrate the
    /// boundary flux against `h`.
    FullPhysics(Quadrature),
}

/// Simulated measurements `R_j f(x) = ∫ h Q_{j,x} dσ` for every focus cell
/// and aperture.
pub fn simulate_boundary_scan(
    op: &DiffusionOperator,
    h: &BoundaryField,
    f: &ScalarField,
    apertures: &[Aperture],
    focus: &Grid,
    mode: ScanMode,
) -> Result<ConeScanData> {
    let grid = *op.grid();
    if *f.grid() != grid {
        return Err(Error::invalid("concentration lives on a different grid than the operator"));
    }
    check_apertures(apertures, grid.dim())?;
    let v = solve_adjoint_weight(op, h)?;
    match mode {
        ScanMode::Fast => {
            if grid.lattice_offset(focus).is_some() {
                let plan = ConePlan::new(&grid, focus, apertures)?;
                let g: Vec<f64> = f.values().iter().zip(v.values()).map(|(a, b)| a * b).collect();
                let fields = plan
                    .forward(&g)
                    .into_iter()
                    .map(|d| ScalarField::from_values(*focus, d))
                    .collect::<Result<_>>()?;
                ConeScanData::new(*focus, fields)
            } else {
                let fields = apertures
                    .iter()
                    .map(|ap| cone_transform_direct(f, &v, ap, focus))
                    .collect::<Result<_>>()?;
                ConeScanData::new(*focus, fields)
            }
        }
        ScanMode::FullPhysics(quadrature) => {
            let fields = apertures
                .iter()
                .map(|ap| {
                    let values = (0..focus.len())
                        .into_par_iter()
                        .map(|p| full_physics_value(op, h, f, ap, &focus.center(p), quadrature))
                        .collect::<Result<Vec<f64>>>()?;
                    ScalarField::from_values(*focus, values)
                })
                .collect::<Result<_>>()?;
            ConeScanData::new(*focus, fields)
        }
    }
}

/// Emission source `I_x f` for a focus at `x`, cell-averaged.
fn focus_source(grid: &Grid, f: &ScalarField, ap: &Aperture, x: &[f64]) -> ScalarField {
    let h = grid.spacing().to_vec();
    let mut out = ScalarField::zeros(*grid);
    for (i, (o, &fv)) in out.values_mut().iter_mut().zip(f.values()).enumerate() {
        if fv != 0.0 {
            let y = grid.center(i);
            let rel = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
            *o = cell_weight(ap, rel, &h) * fv;
        }
    }
    out
}

fn full_physics_value(
    op: &DiffusionOperator,
    h: &BoundaryField,
    f: &ScalarField,
    ap: &Aperture,
    x: &[f64],
    quadrature: Quadrature,
) -> Result<f64> {
    let s = focus_source(op.grid(), f, ap, x);
    if s.values().iter().all(|&s| s == 0.0) {
        return Ok(0.0);
    }
    let u = solve_forward(op, &s)?;
    let q = boundary_flux(op, &u, quadrature);
    boundary_functional(h, &q)
}

/// Fast-mode and full-physics values of `R f(x)` for one focus point and
/// aperture, given the weight `v = Vh`.
pub fn focus_values(
    op: &DiffusionOperator,
    h: &BoundaryField,
    v: &ScalarField,
    f: &ScalarField,
    ap: &Aperture,
    x: &[f64],
    quadrature: Quadrature,
) -> Result<(f64, f64)> {
    let grid = *op.grid();
    if *f.grid() != grid || *v.grid() != grid {
        return Err(Error::invalid("concentration, weight and operator must share a grid"));
    }
    check_apertures(std::slice::from_ref(ap), grid.dim())?;
    let s = focus_source(&grid, f, ap, x);
    let fast = s.inner(v);
    Ok((fast, full_physics_value(op, h, f, ap, x, quadrature)?))
}

/// Line integrals indexed by angle (rows) and offset (columns).
///
/// The line for `(φ, z)` is `{z n + t θ}` with `θ = (cos φ, sin φ)` and
/// `n = (-sin φ, cos φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: Vec<f64>,
    offsets: Vec<f64>,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, offsets: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if angles.is_empty() || offsets.is_empty() {
            return Err(Error::invalid("sinogram needs at least one angle and one offset"));
        }
        if values.len() != angles.len() * offsets.len() {
            return Err(Error::invalid(format!(
                "sinogram has {} values for {} angles × {} offsets",
                values.len(),
                angles.len(),
                offsets.len()
            )));
        }
        if angles.iter().chain(&offsets).chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("sinogram entries must be finite"));
        }
        Ok(Sinogram { angles, offsets, values })
    }

    pub fn zeros(angles: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        let n = angles.len() * offsets.len();
        Sinogram::new(angles, offsets, vec![0.0; n])
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        let n = self.offsets.len();
        &self.values[angle * n..(angle + 1) * n]
    }

    pub fn get(&self, angle: usize, offset: usize) -> f64 {
        self.values[angle * self.offsets.len() + offset]
    }
}

/// `n` angles `iπ/n` covering `[0, π)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * PI / n as f64).collect()
}

/// `n` offsets at the centers of `n` equal bins covering `[-half_width, half_width]`.
pub fn uniform_offsets(n: usize, half_width: f64) -> Vec<f64> {
    let step = 2.0 * half_width / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * step - half_width).collect()
}

/// Bilinear interpolation of a 2D field at `(x, y)`; cells beyond the grid
/// count as zero.
fn bilinear(g: &ScalarField, x: f64, y: f64) -> f64 {
    let grid = g.grid();
    let h = grid.spacing();
    let o = grid.origin();
    let n = grid.cells();
    let fx = (x - o[0]) / h[0] - 0.5;
    let fy = (y - o[1]) / h[1] - 0.5;
    let (ix, iy) = (fx.floor(), fy.floor());
    if ix < -1.0 || iy < -1.0 || ix >= n[0] as f64 || iy >= n[1] as f64 {
        return 0.0;
    }
    let (wx, wy) = (fx - ix, fy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let vals = g.values();
    let at = |i: i64, j: i64| {
        if i < 0 || j < 0 || i >= n[0] as i64 || j >= n[1] as i64 {
            0.0
        } else {
            vals[i as usize * n[1] + j as usize]
        }
    };
    (1.0 - wx) * ((1.0 - wy) * at(ix, iy) + wy * at(ix, iy + 1))
        + wx * ((1.0 - wy) * at(ix + 1, iy) + wy * at(ix + 1, iy + 1))
}

/// Weighted X-ray transform `∫ g(z n + t θ) dt` of a 2D field, sampled with
/// step `spacing/2` and bilinear interpolation.
pub fn xray_transform(g: &ScalarField, angles: &[f64], offsets: &[f64]) -> Result<Sinogram> {
    let grid = g.grid();
    if grid.dim() != 2 {
        return Err(Error::invalid("the X-ray transform is implemented for 2D grids"));
    }
    let step = 0.5 * grid.spacing()[0].min(grid.spacing()[1]);
    let o = grid.origin();
    let e = grid.extent();
    let reach = [o[0], o[0] + e[0]]
        .iter()
        .flat_map(|&x| [o[1], o[1] + e[1]].map(move |y| (x * x + y * y).sqrt()))
        .fold(0.0, f64::max);
    let k = (reach / step).ceil() as i64;
    let lines: Vec<(f64, f64)> = angles
        .iter()
        .flat_map(|&phi| offsets.iter().map(move |&z| (phi, z)))
        .collect();
    let values = lines
        .par_iter()
        .map(|&(phi, z)| {
            let (s, c) = phi.sin_cos();
            let (bx, by) = (-s * z, c * z);
            (-k..=k)
                .map(|i| {
                    let t = i as f64 * step;
                    bilinear(g, bx + t * c, by + t * s)
                })
                .sum::<f64>()
                * step
        })
        .collect();
    Sinogram::new(angles.to_vec(), offsets.to_vec(), values)
}
