//! Step-size adaptation from a quadratic model of the objective along the
//! search direction, `g(alpha) = a alpha^2 + b alpha + c`.

use crate::error::{OfoError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha_tilde: f64,
}

impl QuadModel {
    pub fn eval(&self, alpha: f64) -> f64 {
        (self.a * alpha + self.b) * alpha + self.c
    }
}

/// Fits `g` through `g(0) = phi0`, `g'(0) = dphi0` and `g(alpha_tilde) = phi_at`.
pub fn fit_quadratic(phi0: f64, dphi0: f64, phi_at: f64, alpha_tilde: f64) -> Result<QuadModel> {
    if !(alpha_tilde > 0.0) || !alpha_tilde.is_finite() {
        return Err(OfoError::DegenerateFit(alpha_tilde));
    }
    let c = phi0;
    let b = dphi0;
    let a = (phi_at - c - b * alpha_tilde) / (alpha_tilde * alpha_tilde);
    Ok(QuadModel { a, b, c, alpha_tilde })
}

/// Minimizer of the model over `[alpha_min, alpha_max]`.
///
/// Convex models return the clamped vertex; otherwise the better endpoint,
/// with ties going to `alpha_min`.
pub fn minimize_quadratic(model: &QuadModel, alpha_min: f64, alpha_max: f64) -> f64 {
    debug_assert!(alpha_min <= alpha_max);
    if model.a > 0.0 {
        return (-model.b / (2.0 * model.a)).clamp(alpha_min, alpha_max);
    }
    if model.eval(alpha_max) < model.eval(alpha_min) {
        alpha_max
    } else {
        alpha_min
    }
}
