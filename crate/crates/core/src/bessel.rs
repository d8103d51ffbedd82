//! Modified Bessel functions `I₀, I₁, K₀, K₁` of real argument.
//!
//! `I₀, I₁`: ascending power series up to `x = 30` (all terms positive, so no
//! cancellation) and the Hankel asymptotic expansion beyond, relative
//! accuracy better than 1e-12. `K₀, K₁`: logarithmic series up to `x = 8` and
//! the asymptotic expansion beyond, absolute accuracy better than 1e-10.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const I_SERIES_LIMIT: f64 = 30.0;
const K_SERIES_LIMIT: f64 = 8.0;

pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x <= I_SERIES_LIMIT {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        x.exp() / (2.0 * PI * x).sqrt() * hankel_sum(0.0, x, -1.0)
    }
}

pub fn bessel_i1(x: f64) -> f64 {
    let ax = x.abs();
    let val = if ax <= I_SERIES_LIMIT {
        let q = 0.25 * ax * ax;
        let mut term = 0.5 * ax;
        let mut sum = term;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * (k + 1.0));
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        ax.exp() / (2.0 * PI * ax).sqrt() * hankel_sum(1.0, ax, -1.0)
    };
    if x < 0.0 {
        -val
    } else {
        val
    }
}

pub fn bessel_k0(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!("K0 needs x > 0, got {x}")));
    }
    if x <= K_SERIES_LIMIT {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut harmonic = 0.0;
        let mut tail = 0.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            harmonic += 1.0 / k;
            let t = term * harmonic;
            tail += t;
            if t < 1e-17 * tail {
                break;
            }
            k += 1.0;
        }
        Ok(-((0.5 * x).ln() + EULER_GAMMA) * bessel_i0(x) + tail)
    } else {
        Ok((PI / (2.0 * x)).sqrt() * (-x).exp() * hankel_sum(0.0, x, 1.0))
    }
}

pub fn bessel_k1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!("K1 needs x > 0, got {x}")));
    }
    if x <= K_SERIES_LIMIT {
        // K₁ = 1/x + ln(x/2) I₁ - (x/4) Σ (ψ(k+1) + ψ(k+2)) (x²/4)^k / (k!(k+1)!)
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut psi_k1 = -EULER_GAMMA;
        let mut psi_k2 = 1.0 - EULER_GAMMA;
        let mut sum = term * (psi_k1 + psi_k2);
        let mut k = 1.0;
        loop {
            term *= q / (k * (k + 1.0));
            psi_k1 += 1.0 / k;
            psi_k2 += 1.0 / (k + 1.0);
            let t = term * (psi_k1 + psi_k2);
            sum += t;
            if t.abs() < 1e-17 * sum.abs() {
                break;
            }
            k += 1.0;
        }
        Ok(1.0 / x + (0.5 * x).ln() * bessel_i1(x) - 0.25 * x * sum)
    } else {
        Ok((PI / (2.0 * x)).sqrt() * (-x).exp() * hankel_sum(1.0, x, 1.0))
    }
}

/// `Σ_k sign^k a_k(ν) / x^k` truncated at its smallest term.
fn hankel_sum(nu: f64, x: f64, sign: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * sign * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}
