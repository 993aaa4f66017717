//! Decay constants of the localization estimates, as functions of the
//! smallest excluded eigenvalue Λ.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Overlap constant of the structured mesh: `(2m+1)² ≤ 9m²` for `m ≥ 1`.
pub const OVERLAP_CONSTANT: usize = crate::mesh::OVERLAP_CONSTANT;

const GOLDEN_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryConstants {
    pub lambda: f64,
    /// `max_x (cos x + sin x)(cos x / √Λ + sin x)` on `[0, π/2]`.
    pub c_star: f64,
    /// `max_x [(1/√Λ + 1) cos x + sin x]² + (cos x / √Λ + sin x)²` on `[0, π/2]`.
    pub c_star2: f64,
    /// `c_* / (c_* + 1)`.
    pub theta: f64,
    pub overlap: usize,
}

/// Maximizes a unimodal function on `[a, b]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // Endpoints can be the maximizer when the interior is monotone.
    let x = 0.5 * (a + b);
    [(x, f(x)), (0.0, f(0.0)), (FRAC_PI_2, f(FRAC_PI_2))]
        .into_iter()
        .fold((x, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
}

pub fn c_star_integrand(lambda: f64, x: f64) -> f64 {
    let a = 1.0 / lambda.sqrt();
    (x.cos() + x.sin()) * (a * x.cos() + x.sin())
}

pub fn c_star2_integrand(lambda: f64, x: f64) -> f64 {
    let a = 1.0 / lambda.sqrt();
    let first = (a + 1.0) * x.cos() + x.sin();
    let second = a * x.cos() + x.sin();
    first * first + second * second
}

/// Closed form of `c_*`: the integrand is `(a+1)/2 + ((a−1)/2) cos 2x + ((a+1)/2) sin 2x`.
pub fn c_star_closed_form(lambda: f64) -> f64 {
    let a = 1.0 / lambda.sqrt();
    (a + 1.0) / 2.0 + (((a - 1.0) / 2.0).powi(2) + ((a + 1.0) / 2.0).powi(2)).sqrt()
}

pub fn theory_constants(lambda: f64) -> Result<TheoryConstants> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("Λ must be positive and finite, got {lambda}")));
    }
    let (_, c_star) = golden_max(|x| c_star_integrand(lambda, x), 0.0, FRAC_PI_2, GOLDEN_TOL);
    let (_, c_star2) = golden_max(|x| c_star2_integrand(lambda, x), 0.0, FRAC_PI_2, GOLDEN_TOL);
    Ok(TheoryConstants {
        lambda,
        c_star,
        c_star2,
        theta: c_star / (c_star + 1.0),
        overlap: OVERLAP_CONSTANT,
    })
}

/// Smallest `m ≥ 1` with `θ^{(m−1)/2} (m+1) ≤ H²`, capped at `max_m`.
pub fn auto_layers(theta: f64, coarse_h: f64, max_m: usize) -> usize {
    let target = coarse_h * coarse_h;
    (1..=max_m)
        .find(|&m| theta.powf((m as f64 - 1.0) / 2.0) * (m as f64 + 1.0) <= target)
        .unwrap_or(max_m)
}
