//! Optical parameters of the medium in the diffusion regime.

use crate::error::{Error, Result};

/// Homogeneous optical medium for the emitted light.
///
/// `mu_a` is the absorption coefficient (mm⁻¹), `diffusion` the diffusion
/// coefficient D (mm) and `robin` the dimensionless coefficient A of the
/// boundary condition `u + 2AD ∂ν u = h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalMedium {
    pub mu_a: f64,
    pub diffusion: f64,
    pub robin: f64,
}

impl OpticalMedium {
    pub fn new(mu_a: f64, diffusion: f64, robin: f64) -> Result<Self> {
        if !(mu_a >= 0.0) || !mu_a.is_finite() {
            return Err(Error::invalid(format!("absorption must be >= 0, got {mu_a}")));
        }
        if !(diffusion > 0.0) || !diffusion.is_finite() {
            return Err(Error::invalid(format!("diffusion must be > 0, got {diffusion}")));
        }
        if !(robin > 0.0) || !robin.is_finite() {
            return Err(Error::invalid(format!("Robin coefficient must be > 0, got {robin}")));
        }
        Ok(OpticalMedium {
            mu_a,
            diffusion,
            robin,
        })
    }

    /// Medium from tissue parameters: absorption, scattering, anisotropy and
    /// relative refractive index.
    pub fn from_tissue(mu_a: f64, mu_s: f64, g: f64, refractive_index: f64) -> Result<Self> {
        let (_, d) = derived_optics(mu_a, mu_s, g)?;
        let a = robin_coefficient(refractive_index)?;
        OpticalMedium::new(mu_a, d, a)
    }

    /// Attenuation rate `k = sqrt(mu_a / D)`.
    pub fn k(&self) -> f64 {
        (self.mu_a / self.diffusion).sqrt()
    }

    /// The product `2AD` that appears in the boundary condition.
    pub fn robin_length(&self) -> f64 {
        2.0 * self.robin * self.diffusion
    }
}

/// Reduced scattering `μ'_s = (1-g) μ_s` and diffusion `D = 1 / (3(μ_a + μ'_s))`.
pub fn derived_optics(mu_a: f64, mu_s: f64, g: f64) -> Result<(f64, f64)> {
    if !(mu_a >= 0.0) || !(mu_s >= 0.0) {
        return Err(Error::invalid("absorption and scattering must be non-negative"));
    }
    if !(0.0..1.0).contains(&g) {
        return Err(Error::invalid(format!("anisotropy must lie in [0, 1), got {g}")));
    }
    let mu_s_prime = (1.0 - g) * mu_s;
    let total = mu_a + mu_s_prime;
    if !(total > 0.0) {
        return Err(Error::invalid("mu_a + (1-g) mu_s vanishes; diffusion coefficient undefined"));
    }
    Ok((mu_s_prime, 1.0 / (3.0 * total)))
}

/// Internal reflection parameter for relative refractive index `m`
/// (polynomial fit in `1/m`).
pub fn internal_reflection(m: f64) -> f64 {
    -1.4399 / (m * m) + 0.7099 / m + 0.6681 + 0.063 * m
}

/// Robin coefficient `A = (1 + R) / (1 - R)`.
pub fn robin_coefficient(m: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid(format!("refractive index must be positive, got {m}")));
    }
    let r = internal_reflection(m);
    if r >= 1.0 {
        return Err(Error::invalid(format!(
            "reflection parameter R = {r} >= 1 for m = {m}; outside the tissue-optics regime"
        )));
    }
    Ok((1.0 + r) / (1.0 - r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_optics_tissue_values() {
        let (msp, d) = derived_optics(0.05, 15.0, 0.9).unwrap();
        assert!((msp - 1.5).abs() < 1e-12);
        assert!((d - 0.215_053_763_440_860_2).abs() < 1e-12);
        let (msp, d) = derived_optics(0.0, 1.0, 0.0).unwrap();
        assert_eq!(msp, 1.0);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(derived_optics(0.0, 0.0, 0.5).is_err());
        assert!(derived_optics(0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn robin_coefficient_values() {
        // R(1.37) = 0.50541591..., A = 3.0438017652...
        let a = robin_coefficient(1.37).unwrap();
        assert!((a - 3.043_801_765_244_97).abs() < 1e-9, "{a}");
        // root of R(m) = 0
        let a0 = robin_coefficient(0.999_507_759_085_153_054).unwrap();
        assert!((a0 - 1.0).abs() < 1e-12);
        assert!(robin_coefficient(0.0).is_err());
        assert!(robin_coefficient(-1.0).is_err());
        // R grows like 0.063 m and eventually passes 1
        assert!(robin_coefficient(10.0).is_err());
    }

    #[test]
    fn k_from_tissue() {
        let m = OpticalMedium::from_tissue(0.05, 15.0, 0.9, 1.37).unwrap();
        assert!((m.k() - 0.482_182_538_049_648).abs() < 1e-12);
        let clear = OpticalMedium::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(clear.k(), 0.0);
    }

    #[test]
    fn diffusion_decreases_with_scattering() {
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let (_, d) = derived_optics(0.05, i as f64 * 0.5, 0.9).unwrap();
            assert!(d < last);
            last = d;
        }
    }
}
