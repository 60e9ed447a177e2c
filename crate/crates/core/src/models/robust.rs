//! Huber M-estimation by iteratively reweighted least squares.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::{weighted_lstsq, Design, LstsqSolution};

/// Consistency constant turning the median absolute residual into a normal
/// standard deviation.
const MAD_NORMAL: f64 = 0.6745;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    /// Residuals beyond `threshold * scale` get down-weighted.
    pub threshold: f64,
    pub max_iter: usize,
    /// Stop once no coefficient moves by more than this.
    pub tol: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        HuberConfig { threshold: 1.345, max_iter: 200, tol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustFit {
    pub coef: Vec<f64>,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dropped: Vec<usize>,
}

/// Residual scale: median absolute residual over 0.6745 (centered at zero).
pub fn mad_scale(residuals: &[f64]) -> f64 {
    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    crate::num::median(&abs).unwrap_or(0.0) / MAD_NORMAL
}

pub fn huber_weight(residual: f64, scale: f64, threshold: f64) -> f64 {
    let a = residual.abs();
    if a <= threshold * scale {
        1.0
    } else {
        threshold * scale / a
    }
}

/// Huber regression of `y` on `x` (no implicit intercept). The scale is
/// re-estimated from the residuals at every iteration.
pub fn huber_irls(x: &Design, y: &[f64], cfg: &HuberConfig) -> RobustFit {
    let LstsqSolution { mut coef, mut dropped, .. } = weighted_lstsq(x, y, None);
    let mut scale = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let fitted = x.predict(&coef);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(t, f)| t - f).collect();
        scale = mad_scale(&resid);
        if scale == 0.0 {
            // at least half the rows are fitted exactly
            converged = true;
            break;
        }
        let w: Vec<f64> = resid.iter().map(|&r| huber_weight(r, scale, cfg.threshold)).collect();
        let next = weighted_lstsq(x, y, Some(&w));
        iterations += 1;
        let change = next
            .coef
            .iter()
            .zip(&coef)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        coef = next.coef;
        dropped = next.dropped;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    RobustFit { coef, scale, iterations, converged, dropped }
}
