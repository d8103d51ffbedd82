//! Parallel-beam filtered backprojection and division by the weight `v`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::excitation::Sinogram;
use crate::field::{Grid, ScalarField};

/// Fewest projection angles accepted by [`fbp`].
pub const MIN_ANGLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Ramp,
    /// Ramp times a Hann window reaching zero at the cutoff.
    RampHann,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbpFilter {
    pub kind: FilterKind,
    /// Fraction of the Nyquist frequency in `(0, 1]` above which the
    /// response is zero.
    pub cutoff: f64,
}

impl Default for FbpFilter {
    fn default() -> Self {
        FbpFilter {
            kind: FilterKind::RampHann,
            cutoff: 0.9,
        }
    }
}

impl FbpFilter {
    pub fn ramp() -> Self {
        FbpFilter {
            kind: FilterKind::Ramp,
            cutoff: 1.0,
        }
    }

    pub fn new(kind: FilterKind, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::invalid(format!("filter cutoff must lie in (0, 1], got {cutoff}")));
        }
        Ok(FbpFilter { kind, cutoff })
    }

    /// Window applied on top of the ramp at `frac` of Nyquist.
    pub fn window(&self, frac: f64) -> f64 {
        let frac = frac.abs();
        if frac > self.cutoff {
            return 0.0;
        }
        match self.kind {
            FilterKind::Ramp => 1.0,
            FilterKind::RampHann => 0.5 * (1.0 + (PI * frac / self.cutoff).cos()),
        }
    }

    /// Discrete frequency response on `len` FFT bins for offset step `tau`.
    ///
    /// The ramp comes from the band-limited spatial kernel
    /// `h[0] = 1/(4τ²)`, `h[n odd] = -1/(n²π²τ²)`, so the zero-frequency
    /// value is the small positive truncation correction `O(1/(len τ))`
    /// rather than exactly zero.
    pub fn response(&self, len: usize, tau: f64) -> Vec<f64> {
        let mut h = vec![Complex64::default(); len];
        let half = (len / 2) as i64;
        for n in -half..half {
            let v = if n == 0 {
                1.0 / (4.0 * tau * tau)
            } else if n % 2 != 0 {
                -1.0 / ((n * n) as f64 * PI * PI * tau * tau)
            } else {
                0.0
            };
            h[n.rem_euclid(len as i64) as usize] = Complex64::new(v, 0.0);
        }
        FftPlanner::new().plan_fft_forward(len).process(&mut h);
        (0..len)
            .map(|k| {
                let f = if k <= len / 2 { k as f64 } else { len as f64 - k as f64 };
                h[k].re * tau * self.window(2.0 * f / len as f64)
            })
            .collect()
    }
}

fn uniform_step(offsets: &[f64]) -> Result<f64> {
    if offsets.len() < 2 {
        return Err(Error::invalid("FBP needs at least two offsets"));
    }
    let tau = offsets[1] - offsets[0];
    if !(tau > 0.0) {
        return Err(Error::invalid("offsets must increase"));
    }
    for w in offsets.windows(2) {
        if ((w[1] - w[0]) - tau).abs() > 1e-9 * tau {
            return Err(Error::invalid("offsets must be uniformly spaced"));
        }
    }
    Ok(tau)
}

/// Filtered backprojection onto the cell centers of a 2D grid.
pub fn fbp(sino: &Sinogram, grid: &Grid, filter: &FbpFilter) -> Result<ScalarField> {
    if grid.dim() != 2 {
        return Err(Error::invalid("FBP reconstructs on 2D grids"));
    }
    let na = sino.angles().len();
    if na < MIN_ANGLES {
        return Err(Error::invalid(format!("FBP needs at least {MIN_ANGLES} angles, got {na}")));
    }
    let offsets = sino.offsets();
    let ns = offsets.len();
    let tau = uniform_step(offsets)?;
    let len = (2 * ns).next_power_of_two();
    let response = filter.response(len, tau);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let filtered: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|a| {
            let mut buf = vec![Complex64::default(); len];
            for (b, &x) in buf.iter_mut().zip(sino.row(a)) {
                *b = Complex64::new(x, 0.0);
            }
            fwd.process(&mut buf);
            for (b, r) in buf.iter_mut().zip(&response) {
                *b *= r / len as f64;
            }
            inv.process(&mut buf);
            buf[..ns].iter().map(|z| z.re).collect()
        })
        .collect();
    let trig: Vec<(f64, f64)> = sino.angles().iter().map(|a| a.sin_cos()).collect();
    let z0 = offsets[0];
    let scale = PI / na as f64;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.center(i);
            let mut sum = 0.0;
            for ((s, co), q) in trig.iter().zip(&filtered) {
                let t = (-c[0] * s + c[1] * co - z0) / tau;
                if t < 0.0 || t > (ns - 1) as f64 {
                    continue;
                }
                let k = (t.floor() as usize).min(ns - 2);
                let w = t - k as f64;
                sum += (1.0 - w) * q[k] + w * q[k + 1];
            }
            sum * scale
        })
        .collect();
    ScalarField::from_values(*grid, values)
}

/// Result of [`divide_by_weight`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDivision {
    pub field: ScalarField,
    /// Fraction of support cells (`g ≠ 0`) where `v <= 0`.
    pub degenerate_fraction: f64,
    /// Set when more than 1% of the support has `v <= 0`.
    pub warning: Option<String>,
    /// Largest amplification `1/max(v, v_floor)` over the support.
    pub max_inverse_weight: f64,
}

/// `f = g / max(v, v_floor)` cellwise.
pub fn divide_by_weight(g: &ScalarField, v: &ScalarField, v_floor: f64) -> Result<WeightedDivision> {
    g.check_same_grid(v, "weight division")?;
    if !(v_floor > 0.0) || !v_floor.is_finite() {
        return Err(Error::invalid(format!("weight floor must be positive, got {v_floor}")));
    }
    let mut support = 0usize;
    let mut degenerate = 0usize;
    let mut max_inv: f64 = 0.0;
    for (&gv, &vv) in g.values().iter().zip(v.values()) {
        if gv != 0.0 {
            support += 1;
            if vv <= 0.0 {
                degenerate += 1;
            }
            max_inv = max_inv.max(1.0 / vv.max(v_floor));
        }
    }
    let fraction = if support == 0 { 0.0 } else { degenerate as f64 / support as f64 };
    let warning = (fraction > 0.01).then(|| {
        format!(
            "weight is non-positive on {:.1}% of the reconstruction support",
            100.0 * fraction
        )
    });
    Ok(WeightedDivision {
        field: g.zip_map(v, |g, v| g / v.max(v_floor)),
        degenerate_fraction: fraction,
        warning,
        max_inverse_weight: max_inv,
    })
}
