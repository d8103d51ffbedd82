//! Closed-form solutions of `(-DΔ + μ_a) v = 0` for constant coefficients and
//! a radial finite-difference solver used to check them.

use std::f64::consts::PI;

use crate::bessel::{bessel_i0, bessel_i1};
use crate::error::{Error, Result};
use crate::optics::OpticalMedium;

/// Free-space Green's function of `-DΔ + μ_a` in 3D:
/// `e^{-k|x-y|} / (4πD|x-y|)`.
pub fn greens_3d(medium: &OpticalMedium, x: &[f64; 3], y: &[f64; 3]) -> Result<f64> {
    let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
    if r == 0.0 {
        return Err(Error::invalid("Green's function is singular at x = y"));
    }
    Ok((-medium.k() * r).exp() / (4.0 * PI * medium.diffusion * r))
}

/// Value of a radial weight at one radius and the constant boundary datum
/// that produces it on the sphere/circle of radius `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialWeight {
    pub v: f64,
    pub h: f64,
}

fn check_radius(a: f64, r: f64) -> Result<()> {
    if !(a > 0.0) {
        return Err(Error::invalid("ball radius must be positive"));
    }
    if !(0.0..=a).contains(&r) {
        return Err(Error::invalid(format!("radius {r} outside [0, {a}]")));
    }
    Ok(())
}

/// Ball of radius `a` in 3D: `v(r) = sinh(kr)/r` (with `v(0) = k`) and
/// `h = v(a) + 2AD v'(a)`, `v'(a) = k cosh(ka)/a - sinh(ka)/a²`.
pub fn radial_weight_ball(medium: &OpticalMedium, a: f64, r: f64) -> Result<RadialWeight> {
    check_radius(a, r)?;
    let k = medium.k();
    let v = if r == 0.0 { k } else { (k * r).sinh() / r };
    let va = (k * a).sinh() / a;
    let dva = k * (k * a).cosh() / a - (k * a).sinh() / (a * a);
    Ok(RadialWeight {
        v,
        h: va + medium.robin_length() * dva,
    })
}

/// `sinh(kr)/(kr)`, the ball weight scaled to 1 at the center; tends to 1
/// everywhere as `k → 0`.
pub fn radial_weight_ball_normalized(medium: &OpticalMedium, a: f64, r: f64) -> Result<RadialWeight> {
    check_radius(a, r)?;
    let k = medium.k();
    let shape = |t: f64| if t == 0.0 { 1.0 } else { t.sinh() / t };
    // d/dr sinh(kr)/(kr) = (cosh(kr) - shape(kr)) / r
    let dva = if k == 0.0 { 0.0 } else { ((k * a).cosh() - shape(k * a)) / a };
    Ok(RadialWeight {
        v: shape(k * r),
        h: shape(k * a) + medium.robin_length() * dva,
    })
}

/// Disk of radius `a` in 2D: `v(r) = I₀(kr)` and
/// `h = I₀(ka) + 2AD k I₁(ka)`.
pub fn radial_weight_disk(medium: &OpticalMedium, a: f64, r: f64) -> Result<RadialWeight> {
    check_radius(a, r)?;
    let k = medium.k();
    Ok(RadialWeight {
        v: bessel_i0(k * r),
        h: bessel_i0(k * a) + medium.robin_length() * k * bessel_i1(k * a),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialProfile {
    /// Linear interpolation at radius `r`.
    pub fn at(&self, r: f64) -> f64 {
        let n = self.radii.len();
        let step = self.radii[1] - self.radii[0];
        let t = (r / step).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Solves `-D(v'' + (n-1)/r v') + μ_a v = 0` on `[0, a]` with `v'(0) = 0` and
/// `v(a) + 2AD v'(a) = h_const` by second-order finite volumes on `points`
/// equispaced nodes.
pub fn radial_ode_solve(
    medium: &OpticalMedium,
    a: f64,
    n_dim: usize,
    h_const: f64,
    points: usize,
) -> Result<RadialProfile> {
    if n_dim != 2 && n_dim != 3 {
        return Err(Error::invalid("radial solver supports n = 2 or 3"));
    }
    if points < 100 {
        return Err(Error::invalid("radial solver needs at least 100 points"));
    }
    if !(a > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let n = points;
    let step = a / (n - 1) as f64;
    let d = medium.diffusion;
    let mu = medium.mu_a;
    let p = (n_dim - 1) as i32;
    let radii: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    // r = 0: the Laplacian reduces to n v''
    let c0 = 2.0 * n_dim as f64 * d / (step * step);
    diag[0] = c0 + mu;
    upper[0] = -c0;
    for i in 1..n {
        let r = radii[i];
        let wm = ((r - 0.5 * step) / r).powi(p);
        let wp = ((r + 0.5 * step) / r).powi(p);
        let s = d / (step * step);
        lower[i] = -s * wm;
        diag[i] = s * (wm + wp) + mu;
        upper[i] = -s * wp;
    }
    // ghost node beyond r = a from the centered Robin condition:
    // v_g = v_{n-2} + (h - v_{n-1}) Δ / (A D)
    let last = n - 1;
    let ghost = upper[last];
    let ad = medium.robin * d;
    lower[last] += ghost;
    diag[last] -= ghost * step / ad;
    rhs[last] -= ghost * h_const * step / ad;
    upper[last] = 0.0;

    let values = thomas(&lower, &diag, &upper, &rhs);
    Ok(RadialProfile { radii, values })
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tissue() -> OpticalMedium {
        OpticalMedium::from_tissue(0.05, 15.0, 0.9, 1.37).unwrap()
    }

    #[test]
    fn green_kernel_values() {
        let m = OpticalMedium::new(0.0, 0.5, 1.0).unwrap();
        let g = greens_3d(&m, &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((g - 1.0 / (4.0 * PI * 0.5)).abs() < 1e-15);
        assert!(greens_3d(&m, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());

        let t = tissue();
        let (x, y) = ([0.3, -1.0, 2.0], [1.0, 1.0, 1.0]);
        let r = (0.49f64 + 4.0 + 1.0).sqrt();
        let plus = greens_3d(&t, &x, &y).unwrap();
        let minus = (t.k() * r).exp() / (4.0 * PI * t.diffusion * r);
        assert!((plus / minus - (-2.0 * t.k() * r).exp()).abs() < 1e-14);
    }

    #[test]
    fn green_function_reproduces_a_test_bump() {
        // ∫ G(x, 0) (L ψ)(x) dx = ψ(0) for ψ = (1 - r²/ρ²)⁴
        let m = tissue();
        let (d, k, rho) = (m.diffusion, m.k(), 1.5);
        let lpsi = |r: f64| {
            let s = r / rho;
            let q = 1.0 - s * s;
            let psi = q.powi(4);
            let dpsi = -8.0 * s * q.powi(3) / rho;
            let ddpsi = (-8.0 * q.powi(3) + 48.0 * s * s * q.powi(2)) / (rho * rho);
            -d * (ddpsi + 2.0 * dpsi / r) + m.mu_a * psi
        };
        // 4π r² G(r) = r e^{-kr} / D
        let integrand = |r: f64| if r == 0.0 { 0.0 } else { r * (-k * r).exp() / d * lpsi(r) };
        let n = 2000;
        let h = rho / n as f64;
        let mut s = integrand(0.0) + integrand(rho);
        for i in 1..n {
            s += integrand(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let value = s * h / 3.0;
        assert!((value - 1.0).abs() < 1e-9, "{value}");
    }

    #[test]
    fn ball_weight_limits() {
        let m = tissue();
        let w = radial_weight_ball(&m, 10.0, 0.0).unwrap();
        assert_eq!(w.v, m.k());
        let clear = OpticalMedium::new(0.0, 0.2, 3.0).unwrap();
        let w = radial_weight_ball_normalized(&clear, 10.0, 4.0).unwrap();
        assert_eq!((w.v, w.h), (1.0, 1.0));
        let tiny = OpticalMedium::new(1e-12, 0.2, 3.0).unwrap();
        let w = radial_weight_ball_normalized(&tiny, 10.0, 4.0).unwrap();
        assert!((w.v - 1.0).abs() < 1e-9 && (w.h - 1.0).abs() < 1e-9);
        assert!(radial_weight_ball(&m, 10.0, 11.0).is_err());
    }

    #[test]
    fn disk_weight_limits() {
        let m = tissue();
        assert_eq!(radial_weight_disk(&m, 10.0, 0.0).unwrap().v, 1.0);
        let clear = OpticalMedium::new(0.0, 0.2, 3.0).unwrap();
        let w = radial_weight_disk(&clear, 10.0, 7.0).unwrap();
        assert_eq!((w.v, w.h), (1.0, 1.0));
    }

    #[test]
    fn ode_without_absorption_is_constant() {
        let m = OpticalMedium::new(0.0, 0.3, 2.0).unwrap();
        for n in [2, 3] {
            let p = radial_ode_solve(&m, 5.0, n, 1.7, 200).unwrap();
            assert!(p.values.iter().all(|&v| (v - 1.7).abs() < 1e-12));
        }
    }

    #[test]
    fn ode_matches_closed_forms() {
        let m = tissue();
        let a = 10.0;
        let disk = radial_weight_disk(&m, a, a).unwrap();
        let p2 = radial_ode_solve(&m, a, 2, disk.h, 20001).unwrap();
        let ball = radial_weight_ball(&m, a, a).unwrap();
        let p3 = radial_ode_solve(&m, a, 3, ball.h, 20001).unwrap();
        let mut e2: f64 = 0.0;
        let mut e3: f64 = 0.0;
        for (i, &r) in p2.radii.iter().enumerate() {
            let v2 = radial_weight_disk(&m, a, r).unwrap().v;
            let v3 = radial_weight_ball(&m, a, r).unwrap().v;
            e2 = e2.max((p2.values[i] - v2).abs() / v2);
            e3 = e3.max((p3.values[i] - v3).abs() / v3);
        }
        assert!(e2 < 1e-6, "disk {e2}");
        assert!(e3 < 1e-6, "ball {e3}");
    }

    #[test]
    fn printed_boundary_data_without_derivative_fixes_disagree_with_the_ode() {
        // h with sinh in place of cosh (ball) and without the factor k (disk);
        // a small ball keeps cosh(ka) and sinh(ka) apart
        let m = tissue();
        let (a, k, rl) = (2.0, m.k(), m.robin_length());
        let sinh_h = (k * a).sinh() / a + rl * (k * (k * a).sinh() / a - (k * a).sinh() / (a * a));
        let p3 = radial_ode_solve(&m, a, 3, sinh_h, 20001).unwrap();
        let v0 = radial_weight_ball(&m, a, 0.0).unwrap().v;
        assert!((p3.values[0] - v0).abs() / v0 > 1e-2);
        let right = radial_ode_solve(&m, a, 3, radial_weight_ball(&m, a, a).unwrap().h, 20001).unwrap();
        assert!((right.values[0] - v0).abs() / v0 < 1e-6);

        let no_k_h = bessel_i0(k * a) + rl * bessel_i1(k * a);
        let p2 = radial_ode_solve(&m, a, 2, no_k_h, 20001).unwrap();
        assert!((p2.values[0] - 1.0).abs() > 1e-2);
    }

    #[test]
    fn profile_interpolation() {
        let m = OpticalMedium::new(0.0, 0.3, 2.0).unwrap();
        let p = radial_ode_solve(&m, 5.0, 2, 1.0, 101).unwrap();
        assert!((p.at(2.345) - 1.0).abs() < 1e-12);
        assert!(radial_ode_solve(&m, 5.0, 4, 1.0, 101).is_err());
        assert!(radial_ode_solve(&m, 5.0, 2, 1.0, 50).is_err());
    }
}
