//! Fourier-multiplier calculus for translation-invariant double cones.
//!
//! The cone transform with aperture `a` is convolution with
//! `a(ẑ)/|z|^{n-1}`, whose Fourier transform (angular frequency `ξ`) is the
//! order −1 symbol `r⁰(ξ) = π ∫ a(θ) δ(ξ·θ) dθ = c(ξ/|ξ|)/|ξ|`. Summing the
//! data over cones and dividing by `Σ_j r_j⁰` in frequency recovers `v f`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::diffusion::weight_floor;
use crate::error::{Error, Result};
use crate::excitation::{Aperture, ConeScanData};
use crate::fft::FftNd;
use crate::field::{Grid, ScalarField};

/// Trapezoid points on the great circle for 3D symbols.
pub const GREAT_CIRCLE_POINTS: usize = 256;
/// Direction samples used by [`ellipticity_margin`] unless told otherwise.
pub const MARGIN_DIRECTIONS_2D: usize = 2048;
pub const MARGIN_DIRECTIONS_3D: usize = 4096;
/// Width in cells of the cosine rolloff applied to ROI data.
pub const ROI_ROLLOFF: usize = 8;

/// `ω` or `-ω`, whichever has a positive largest component, so that even
/// functions of `ω` are evaluated bit-identically at `±ω`.
fn canonical(omega: &[f64; 3]) -> [f64; 3] {
    let mut big = 0;
    for a in 1..3 {
        if omega[a].abs() > omega[big].abs() {
            big = a;
        }
    }
    if omega[big] < 0.0 {
        [-omega[0], -omega[1], -omega[2]]
    } else {
        *omega
    }
}

/// Angular factor `c(ω) = |ξ| r⁰(ξ)` for unit `ω = ξ/|ξ|`.
pub(crate) fn angular_factor(ap: &Aperture, omega: &[f64; 3]) -> f64 {
    let w = canonical(omega);
    if ap.dim() == 2 {
        // δ(ξ·θ) picks θ = ±ω⊥ with Jacobian 1/|ξ|; a is even
        2.0 * PI * ap.density(&[-w[1], w[0], 0.0])
    } else {
        let (e1, e2) = circle_basis(&w);
        let dt = 2.0 * PI / GREAT_CIRCLE_POINTS as f64;
        let line: f64 = (0..GREAT_CIRCLE_POINTS)
            .map(|k| {
                let (s, c) = (k as f64 * dt).sin_cos();
                ap.density(&[c * e1[0] + s * e2[0], c * e1[1] + s * e2[1], c * e1[2] + s * e2[2]])
            })
            .sum::<f64>()
            * dt;
        PI * line
    }
}

/// Orthonormal pair spanning the plane perpendicular to unit `w`.
fn circle_basis(w: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let mut small = 0;
    for a in 1..3 {
        if w[a].abs() < w[small].abs() {
            small = a;
        }
    }
    let mut helper = [0.0; 3];
    helper[small] = 1.0;
    let e1 = normalize(cross(&helper, w));
    let e2 = cross(w, &e1);
    (e1, e2)
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn as_unit(v: &[f64], dim: usize) -> Result<([f64; 3], f64)> {
    if v.len() != dim {
        return Err(Error::invalid(format!("expected a {dim}-component vector")));
    }
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::invalid("frequency vector must be nonzero and finite"));
    }
    let mut u = [0.0; 3];
    for a in 0..dim {
        u[a] = v[a] / len;
    }
    Ok((u, len))
}

/// Principal symbol `r⁰(ξ)` of one cone.
pub fn multiplier_symbol(ap: &Aperture, xi: &[f64]) -> Result<f64> {
    let (w, len) = as_unit(xi, ap.dim())?;
    Ok(angular_factor(ap, &w) / len)
}

/// Whether some cone contains a direction perpendicular to `ω`.
pub fn visible_direction(apertures: &[Aperture], omega: &[f64]) -> Result<bool> {
    let dim = check_family(apertures)?;
    if omega.len() != dim {
        return Err(Error::invalid(format!("expected a {dim}-component direction")));
    }
    let len = omega.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (len - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("direction is not a unit vector"));
    }
    let mut w = [0.0; 3];
    w[..dim].copy_from_slice(omega);
    Ok(apertures.iter().map(|ap| angular_factor(ap, &w)).sum::<f64>() > 0.0)
}

fn check_family(apertures: &[Aperture]) -> Result<usize> {
    let first = apertures
        .first()
        .ok_or_else(|| Error::invalid("at least one aperture is required"))?;
    let dim = first.dim();
    if apertures.iter().any(|a| a.dim() != dim) {
        return Err(Error::invalid("apertures mix dimensions"));
    }
    Ok(dim)
}

/// Unit directions covering a half-circle (2D, equal angles) or a
/// half-sphere (3D, Fibonacci lattice with `z > 0`).
pub fn half_directions(dim: usize, n: usize) -> Vec<[f64; 3]> {
    if dim == 2 {
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * PI / n as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect()
    } else {
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = i as f64 * golden;
                [r * phi.cos(), r * phi.sin(), z]
            })
            .collect()
    }
}

/// Summary of `Σ_j c_j(ω)` over a direction sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Minimum of the summed angular factor; positive certifies stability on
    /// the sample.
    pub margin: f64,
    pub max: f64,
    pub mean: f64,
    /// `max / margin`; infinite when the margin vanishes.
    pub ratio: f64,
    pub directions: usize,
    /// Sampled directions where every cone is blind.
    pub invisible: Vec<[f64; 3]>,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.margin > 0.0
    }
}

pub fn ellipticity_margin(apertures: &[Aperture], n_directions: usize) -> Result<StabilityReport> {
    let dim = check_family(apertures)?;
    if n_directions < 64 {
        return Err(Error::invalid("at least 64 directions are required"));
    }
    let dirs = half_directions(dim, n_directions);
    let sums: Vec<f64> = dirs
        .par_iter()
        .map(|w| apertures.iter().map(|ap| angular_factor(ap, w)).sum())
        .collect();
    let margin = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sums.iter().copied().fold(0.0, f64::max);
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let invisible = dirs
        .iter()
        .zip(&sums)
        .filter(|(_, &s)| s <= 0.0)
        .map(|(d, _)| *d)
        .collect();
    Ok(StabilityReport {
        margin,
        max,
        mean,
        ratio: if margin > 0.0 { max / margin } else { f64::INFINITY },
        directions: n_directions,
        invisible,
    })
}

/// Default sample size for [`ellipticity_margin`].
pub fn default_directions(dim: usize) -> usize {
    if dim == 2 {
        MARGIN_DIRECTIONS_2D
    } else {
        MARGIN_DIRECTIONS_3D
    }
}

/// Parametrix symbols `q_j = r_j / Σ_k r_k²`, so that `Σ_j q_j r_j = 1`.
pub fn parametrix_weights(apertures: &[Aperture], xi: &[f64]) -> Result<Vec<f64>> {
    let dim = check_family(apertures)?;
    let (w, len) = as_unit(xi, dim)?;
    let r: Vec<f64> = apertures.iter().map(|ap| angular_factor(ap, &w) / len).collect();
    let norm2: f64 = r.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Err(Error::UndefinedDirection(xi.to_vec()));
    }
    Ok(r.iter().map(|x| x / norm2).collect())
}

/// Focus grid used for global inversion: the field grid grown by its own
/// size on every side (three times the extent per axis).
///
/// The symbol is nonlocal, so data recorded only over the field itself miss
/// most of the long-range kernel tails and the division amplifies the
/// truncation.
pub fn inversion_focus_grid(field: &Grid) -> Grid {
    let dim = field.dim();
    let h = field.spacing();
    let n = field.cells();
    let origin: Vec<f64> = (0..dim).map(|a| field.origin()[a] - n[a] as f64 * h[a]).collect();
    let extent: Vec<f64> = (0..dim).map(|a| 3.0 * n[a] as f64 * h[a]).collect();
    let cells: Vec<usize> = n.iter().map(|c| 3 * c).collect();
    Grid::new(dim, &origin, &extent, &cells).expect("scaled grid stays valid")
}

/// `Σ_j r_j⁰(ξ)` on the DFT frequencies of a `shape` grid with spacing `h`.
/// The undefined value at `ξ = 0` is replaced by the angular mean of
/// `Σ_j c_j` divided by the smallest nonzero frequency.
pub fn symbol_table(apertures: &[Aperture], shape: &[usize], h: &[f64]) -> Result<Vec<f64>> {
    let dim = check_family(apertures)?;
    if shape.len() != dim || h.len() != dim {
        return Err(Error::invalid("shape and spacing must match the aperture dimension"));
    }
    let total: usize = shape.iter().product();
    let mut table: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut xi = [0.0; 3];
            for a in (0..dim).rev() {
                let i = rem % shape[a];
                rem /= shape[a];
                let f = if i <= shape[a] / 2 { i as f64 } else { i as f64 - shape[a] as f64 };
                xi[a] = 2.0 * PI * f / (shape[a] as f64 * h[a]);
            }
            let len = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if len == 0.0 {
                return 0.0;
            }
            let w = [xi[0] / len, xi[1] / len, xi[2] / len];
            apertures.iter().map(|ap| angular_factor(ap, &w)).sum::<f64>() / len
        })
        .collect();
    let mean = ellipticity_margin(apertures, default_directions(dim))?.mean;
    let xi_min = (0..dim)
        .map(|a| 2.0 * PI / (shape[a] as f64 * h[a]))
        .fold(f64::INFINITY, f64::min);
    table[0] = mean / xi_min;
    Ok(table)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Explicit inversion `f = v⁻¹ (Σ_j r_j(D))⁻¹ Σ_j R_j f`.
///
/// The scan must cover the field grid of `v` on its lattice; a focus grid
/// from [`inversion_focus_grid`] gives the intended accuracy. Refuses to run
/// when the family fails the stability condition.
pub fn invert_multiplier(
    scan: &ConeScanData,
    apertures: &[Aperture],
    v: &ScalarField,
    eps: f64,
) -> Result<ScalarField> {
    let dim = check_family(apertures)?;
    let report = ellipticity_margin(apertures, default_directions(dim))?;
    if !report.is_stable() {
        return Err(Error::StabilityViolation { margin: report.margin });
    }
    pseudo_invert_multiplier(scan, apertures, v, eps)
}

/// [`invert_multiplier`] without the stability check. On invisible
/// directions the regularized division returns zero, so only the visible
/// part of the singularities is recovered.
pub fn pseudo_invert_multiplier(
    scan: &ConeScanData,
    apertures: &[Aperture],
    v: &ScalarField,
    eps: f64,
) -> Result<ScalarField> {
    let g = invert_sum(&scan.sum(), apertures, v.grid(), eps)?;
    let floor = weight_floor(v);
    Ok(g.zip_map(v, |g, v| g / v.max(floor)))
}

/// Regularized division of summed data by the total symbol, cropped to `field`.
fn invert_sum(data: &ScalarField, apertures: &[Aperture], field: &Grid, eps: f64) -> Result<ScalarField> {
    let dim = check_family(apertures)?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("regularization must be >= 0, got {eps}")));
    }
    let focus = *data.grid();
    if focus.dim() != dim || field.dim() != dim {
        return Err(Error::invalid("scan, weight and apertures must share a dimension"));
    }
    let off = field
        .lattice_offset(&focus)
        .ok_or_else(|| Error::invalid("focus grid is not aligned with the field grid"))?;
    let m = focus.cells();
    let n = field.cells();
    for a in 0..dim {
        if off[a] > 0 || off[a] + (m[a] as i64) < n[a] as i64 {
            return Err(Error::invalid("focus grid does not cover the field grid"));
        }
    }
    let shape: Vec<usize> = m.iter().map(|c| 2 * c).collect();
    let mut strides = [0usize; 3];
    let mut acc = 1;
    for a in (0..dim).rev() {
        strides[a] = acc;
        acc *= shape[a];
    }
    let fft = FftNd::new(&shape);
    let mut buf = vec![Complex64::default(); fft.len()];
    for (p, &val) in data.values().iter().enumerate() {
        let idx = focus.multi_index(p);
        buf[(0..dim).map(|a| idx[a] * strides[a]).sum::<usize>()] = Complex64::new(val, 0.0);
    }
    fft.forward(&mut buf);
    let table = symbol_table(apertures, &shape, focus.spacing())?;
    let reg = (eps * median(&table)).powi(2);
    buf.par_iter_mut().zip(&table).for_each(|(z, &s)| {
        let den = s * s + reg;
        *z = if den > 0.0 { *z * (s / den) } else { Complex64::default() };
    });
    fft.inverse(&mut buf);
    let values = (0..field.len())
        .map(|q| {
            let idx = field.multi_index(q);
            buf[(0..dim).map(|a| (idx[a] as i64 - off[a]) as usize * strides[a]).sum::<usize>()].re
        })
        .collect();
    ScalarField::from_values(*field, values)
}

/// Box of field cells `lo[a] <= i[a] < hi[a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

/// ROI reconstruction with the cells where it is trustworthy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiReconstruction {
    pub field: ScalarField,
    /// Cells at least [`ROI_ROLLOFF`] cells inside the ROI.
    pub mask: Vec<bool>,
}

/// Inverts data known only over an ROI: the data are tapered to zero over
/// the last [`ROI_ROLLOFF`] cells of the ROI and inverted globally.
///
/// Singularities (edges) inside the ROI are recovered; smooth components,
/// including constants, are biased because the data outside are missing.
pub fn roi_reconstruct(
    scan: &ConeScanData,
    apertures: &[Aperture],
    v: &ScalarField,
    eps: f64,
    roi: &Roi,
) -> Result<RoiReconstruction> {
    let field = *v.grid();
    let dim = field.dim();
    let n = field.cells();
    for a in 0..dim {
        if roi.lo[a] < 1 || roi.hi[a] + 1 > n[a] {
            return Err(Error::invalid("ROI must lie strictly inside the field grid"));
        }
        if roi.hi[a] < roi.lo[a] + 2 * ROI_ROLLOFF + 1 {
            return Err(Error::invalid(format!(
                "ROI must span more than {} cells along every axis",
                2 * ROI_ROLLOFF
            )));
        }
    }
    let focus = *scan.focus();
    let off = field
        .lattice_offset(&focus)
        .ok_or_else(|| Error::invalid("focus grid is not aligned with the field grid"))?;
    let depth = |a: usize, q: i64| -> Option<usize> {
        if q < roi.lo[a] as i64 || q >= roi.hi[a] as i64 {
            None
        } else {
            Some((q - roi.lo[a] as i64).min(roi.hi[a] as i64 - 1 - q) as usize)
        }
    };
    let taper = |d: usize| {
        if d >= ROI_ROLLOFF {
            1.0
        } else {
            0.5 * (1.0 - (PI * (d as f64 + 0.5) / ROI_ROLLOFF as f64).cos())
        }
    };
    let window: Vec<f64> = (0..focus.len())
        .map(|p| {
            let idx = focus.multi_index(p);
            (0..dim)
                .map(|a| depth(a, idx[a] as i64 + off[a]).map_or(0.0, taper))
                .product()
        })
        .collect();
    let windowed = scan.map_fields(|f| {
        ScalarField::from_values(focus, f.values().iter().zip(&window).map(|(x, w)| x * w).collect())
    })?;
    let rec = invert_multiplier(&windowed, apertures, v, eps)?;
    let mask = (0..field.len())
        .map(|q| {
            let idx = field.multi_index(q);
            (0..dim).all(|a| depth(a, idx[a] as i64).is_some_and(|d| d >= ROI_ROLLOFF))
        })
        .collect();
    Ok(RoiReconstruction { field: rec, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::cone_transform;

    fn three_cones() -> Vec<Aperture> {
        [0.0f64, 60.0, 120.0]
            .iter()
            .map(|d| Aperture::cone_2d(d.to_radians(), 35f64.to_radians()).unwrap())
            .collect()
    }

    #[test]
    fn full_aperture_symbols() {
        let full2 = Aperture::full(2).unwrap();
        let full3 = Aperture::full(3).unwrap();
        for xi in [[1.0f64, 0.0, 0.0], [0.3, -2.0, 0.7], [-0.01, 0.02, 5.0]] {
            let len = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            let l2 = xi[0].hypot(xi[1]);
            let r2 = multiplier_symbol(&full2, &xi[..2]).unwrap();
            assert!((r2 - 2.0 * PI / l2).abs() < 1e-12 * r2);
            let r3 = multiplier_symbol(&full3, &xi).unwrap();
            assert!((r3 - 2.0 * PI * PI / len).abs() < 1e-6);
        }
        assert!(multiplier_symbol(&full2, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn cone_symbol_vanishes_along_its_axis() {
        let ap = Aperture::cone(&[0.0, 0.0, 1.0], 0.4).unwrap();
        assert_eq!(multiplier_symbol(&ap, &[0.0, 0.0, 3.0]).unwrap(), 0.0);
        assert!(multiplier_symbol(&ap, &[1.0, 0.0, 0.0]).unwrap() > 0.0);
    }

    #[test]
    fn homogeneity_and_evenness_are_exact() {
        let aps = [
            Aperture::cone_2d(0.7, 0.5).unwrap(),
            Aperture::cone(&[1.0, -1.0, 0.5], 0.6).unwrap(),
        ];
        for (i, ap) in aps.iter().enumerate() {
            for k in 0..50 {
                let t = k as f64;
                let xi: Vec<f64> = [0.3 + t.sin(), -0.2 + (1.7 * t).cos(), 0.1 * t - 2.0][..ap.dim()].to_vec();
                let r = multiplier_symbol(ap, &xi).unwrap();
                let twice: Vec<f64> = xi.iter().map(|x| 2.0 * x).collect();
                let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
                assert_eq!(multiplier_symbol(ap, &twice).unwrap(), r / 2.0, "aperture {i}");
                assert_eq!(multiplier_symbol(ap, &neg).unwrap(), r, "aperture {i}");
            }
        }
    }

    #[test]
    fn visibility_of_a_single_cone() {
        let ap = [Aperture::cone_2d(0.0, 30f64.to_radians()).unwrap()];
        assert!(!visible_direction(&ap, &[1.0, 0.0]).unwrap());
        assert!(visible_direction(&ap, &[0.0, 1.0]).unwrap());
        let full = [Aperture::full(3).unwrap()];
        for w in half_directions(3, 100) {
            assert!(visible_direction(&full, &w).unwrap());
        }
        assert!(visible_direction(&ap, &[2.0, 0.0]).is_err());
    }

    #[test]
    fn margins_of_reference_configurations() {
        let r = ellipticity_margin(&three_cones(), MARGIN_DIRECTIONS_2D).unwrap();
        assert!(r.margin > 0.0 && r.invisible.is_empty() && r.ratio.is_finite());

        let beta = 19.2f64.to_radians();
        let single = [Aperture::cone(&[1.0, 0.0, 0.0], beta).unwrap()];
        let r = ellipticity_margin(&single, MARGIN_DIRECTIONS_3D).unwrap();
        assert_eq!(r.margin, 0.0);
        assert!(!r.invisible.is_empty() && r.ratio.is_infinite());

        let ten: Vec<Aperture> = (0..10)
            .map(|i| {
                let t = (36.0 * i as f64).to_radians();
                Aperture::cone(&[t.cos(), t.sin(), 0.0], beta).unwrap()
            })
            .collect();
        let r = ellipticity_margin(&ten, MARGIN_DIRECTIONS_3D).unwrap();
        assert!(r.margin > 0.0, "{}", r.margin);
        assert!(ellipticity_margin(&ten, 10).is_err());
    }

    #[test]
    fn parametrix_identity() {
        let aps = three_cones();
        for k in 0..40 {
            let t = 0.1 + k as f64 * 0.157;
            let xi = [3.0 * t.cos(), 3.0 * t.sin()];
            let q = parametrix_weights(&aps, &xi).unwrap();
            let s: f64 = q
                .iter()
                .zip(&aps)
                .map(|(q, ap)| q * multiplier_symbol(ap, &xi).unwrap())
                .sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let one = [Aperture::cone_2d(0.0, 0.5).unwrap()];
        let xi = [0.0, 2.0];
        let q = parametrix_weights(&one, &xi).unwrap();
        assert!((q[0] - 1.0 / multiplier_symbol(&one[0], &xi).unwrap()).abs() < 1e-15);
        assert!(matches!(
            parametrix_weights(&one, &[1.0, 0.0]),
            Err(Error::UndefinedDirection(_))
        ));
    }

    fn smooth_phantom(grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x| {
            (-((x[0] - 1.0).powi(2) + (x[1] + 0.5).powi(2)) / (2.0 * 1.5 * 1.5)).exp()
                + 0.6 * (-((x[0] + 2.0).powi(2) + (x[1] - 2.0).powi(2)) / 2.0).exp()
        })
    }

    fn scan_of(f: &ScalarField, v: &ScalarField, aps: &[Aperture], focus: &Grid) -> ConeScanData {
        let fields = aps.iter().map(|ap| cone_transform(f, v, ap, focus).unwrap()).collect();
        ConeScanData::new(*focus, fields).unwrap()
    }

    fn rel_l2(a: &ScalarField, b: &ScalarField) -> f64 {
        a.zip_map(b, |x, y| x - y).norm_l2() / b.norm_l2()
    }

    #[test]
    fn round_trip_on_a_coarse_grid() {
        let grid = Grid::centered(2, 20.0, 48).unwrap();
        let aps = three_cones();
        let f = smooth_phantom(grid);
        let v = ScalarField::constant(grid, 1.0);
        let focus = inversion_focus_grid(&grid);
        let rec = invert_multiplier(&scan_of(&f, &v, &aps, &focus), &aps, &v, 1e-3).unwrap();
        assert!(rel_l2(&rec, &f) < 0.05, "{}", rel_l2(&rec, &f));
    }

    #[test]
    fn inversion_is_linear_and_checks_inputs() {
        let grid = Grid::centered(2, 20.0, 16).unwrap();
        let aps = three_cones();
        let f = smooth_phantom(grid);
        let v = ScalarField::constant(grid, 1.0);
        let focus = inversion_focus_grid(&grid);
        let scan = scan_of(&f, &v, &aps, &focus);
        let rec = invert_multiplier(&scan, &aps, &v, 1e-3).unwrap();
        let times4 = scan.map_fields(|s| Ok(s.scaled(4.0))).unwrap();
        let rec4 = invert_multiplier(&times4, &aps, &v, 1e-3).unwrap();
        for (a, b) in rec.values().iter().zip(rec4.values()) {
            assert_eq!(4.0 * a, *b);
        }
        let times3 = scan.map_fields(|s| Ok(s.scaled(3.0))).unwrap();
        let rec3 = invert_multiplier(&times3, &aps, &v, 1e-3).unwrap();
        for (a, b) in rec.values().iter().zip(rec3.values()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * rec.values().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
        let zero = scan.map_fields(|s| Ok(s.scaled(0.0))).unwrap();
        assert!(invert_multiplier(&zero, &aps, &v, 1e-3).unwrap().values().iter().all(|&x| x == 0.0));

        let single = [Aperture::cone_2d(0.0, 0.3).unwrap()];
        assert!(matches!(
            invert_multiplier(&scan_of(&f, &v, &single, &focus), &single, &v, 1e-3),
            Err(Error::StabilityViolation { .. })
        ));
        // same lattice but too small to cover the field
        let small = Grid::centered(2, 10.0, 8).unwrap();
        let partial = ConeScanData::new(small, vec![ScalarField::zeros(small); 3]).unwrap();
        assert!(invert_multiplier(&partial, &aps, &v, 1e-3).is_err());
        assert!(invert_multiplier(&scan, &aps, &v, -1.0).is_err());
    }

    #[test]
    fn pseudo_inversion_recovers_only_visible_edges() {
        // a single cone about e1 sees frequencies near e2, i.e. edges whose
        // normal is close to the y axis
        let grid = Grid::centered(2, 20.0, 64).unwrap();
        let f = ScalarField::from_fn(grid, |x| if x[0].abs() < 3.0 && x[1].abs() < 3.0 { 1.0 } else { 0.0 });
        let v = ScalarField::constant(grid, 1.0);
        let aps = [Aperture::cone_2d(0.0, 20f64.to_radians()).unwrap()];
        let focus = inversion_focus_grid(&grid);
        let rec = pseudo_invert_multiplier(&scan_of(&f, &v, &aps, &focus), &aps, &v, 1e-2).unwrap();
        let energy = |g: &ScalarField| {
            let n = 64;
            let (mut ex, mut ey) = (0.0, 0.0);
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    ex += (g.get(&[i + 1, j]) - g.get(&[i, j])).powi(2);
                    ey += (g.get(&[i, j + 1]) - g.get(&[i, j])).powi(2);
                }
            }
            (ex, ey)
        };
        let (tx, ty) = energy(&f);
        let (rx, ry) = energy(&rec);
        assert!(ry / ty > 0.5, "y edges {}", ry / ty);
        assert!(rx / tx < 0.25 * (ry / ty), "x edges {} vs {}", rx / tx, ry / ty);
    }

    #[test]
    fn roi_reconstruction_locates_edges() {
        let grid = Grid::centered(2, 20.0, 64).unwrap();
        let h = grid.spacing()[0];
        let f = ScalarField::from_fn(grid, |x| if (x[0] - 1.0).hypot(x[1]) <= 2.0 { 1.0 } else { 0.0 });
        let v = ScalarField::constant(grid, 1.0);
        let aps = three_cones();
        let focus = inversion_focus_grid(&grid);
        let scan = scan_of(&f, &v, &aps, &focus);
        let roi = Roi { lo: [12, 12, 0], hi: [52, 52, 1] };
        let rec = roi_reconstruct(&scan, &aps, &v, 1e-3, &roi).unwrap();
        // steepest descent along the x axis through the disc center
        let j = 32;
        let mut best = (0.0, 0);
        for i in 36..50 {
            let drop = rec.field.get(&[i, j]) - rec.field.get(&[i + 1, j]);
            if drop > best.0 {
                best = (drop, i);
            }
        }
        let edge = grid.origin()[0] + (best.1 as f64 + 1.0) * h;
        assert!((edge - 3.0).abs() <= 2.0 * h, "edge at {edge}");
        assert!(rec.mask[grid.linear_index(&[32, 32])]);
        assert!(!rec.mask[grid.linear_index(&[14, 32])]);

        // an empty ROI stays flat inside the mask
        let g = ScalarField::from_fn(grid, |x| if (x[0] + 7.0).hypot(x[1] + 7.0) <= 1.5 { 1.0 } else { 0.0 });
        let scan = scan_of(&g, &v, &aps, &focus);
        let roi = Roi { lo: [30, 30, 0], hi: [58, 58, 1] };
        let rec = roi_reconstruct(&scan, &aps, &v, 1e-3, &roi).unwrap();
        let inside: Vec<f64> = rec
            .field
            .values()
            .iter()
            .zip(&rec.mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| *x)
            .collect();
        let spread = inside.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - inside.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread < 0.1, "{spread}");

        let edge_roi = Roi { lo: [0, 10, 0], hi: [40, 40, 1] };
        assert!(roi_reconstruct(&scan, &aps, &v, 1e-3, &edge_roi).is_err());
    }
}
