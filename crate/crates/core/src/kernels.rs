//! Squared-exponential similarity kernel between feature geometries:
//! `K = K_σ · K_Θ · K_x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, STATE_SIGNS};
use crate::transform::Geometry;
use crate::Vec3;

pub const DEFAULT_K: f64 = 12.0;
pub const DEFAULT_SIGMA_T_SQ: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    /// Location variance per unit of `σₙσₘ`.
    pub k: f64,
    /// Floor location variance in mm².
    pub sigma_t_sq: f64,
    /// Take `K_Θ` as the best of the four orientation states of the second frame.
    pub use_orientation_states: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            sigma_t_sq: DEFAULT_SIGMA_T_SQ,
            use_orientation_states: true,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!("kernel k must be positive, got {}", self.k)));
        }
        if !(self.sigma_t_sq >= 0.0 && self.sigma_t_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel sigma_t_sq must be nonnegative, got {}",
                self.sigma_t_sq
            )));
        }
        Ok(())
    }
}

/// `exp(-(ln σₙ - ln σₘ)²)`.
pub fn kernel_scale(sigma_n: f64, sigma_m: f64) -> Result<f64> {
    if !(sigma_n > 0.0 && sigma_m > 0.0) {
        return Err(Error::invalid(format!("scales must be positive, got {sigma_n} and {sigma_m}")));
    }
    Ok(scale_term(sigma_n, sigma_m))
}

#[inline]
fn scale_term(sigma_n: f64, sigma_m: f64) -> f64 {
    let d = sigma_n.ln() - sigma_m.ln();
    (-d * d).exp()
}

/// `exp(-3 + Σᵢ θ̂ᵢₙ·θ̂ᵢₘ)`.
pub fn kernel_orientation(f_n: &Frame, f_m: &Frame) -> f64 {
    let c = f_n.axis_cosines(f_m);
    (-3.0 + c[0] + c[1] + c[2]).exp()
}

/// Largest `K_Θ` over the four states of `f_m`. Symmetric in its arguments because
/// each state only flips the signs of per-axis cosines.
pub fn kernel_orientation_states(f_n: &Frame, f_m: &Frame) -> f64 {
    let c = f_n.axis_cosines(f_m);
    let best = STATE_SIGNS
        .iter()
        .map(|&(s1, s2)| s1 * c[0] + s2 * c[1] + (s1 * s2) * c[2])
        .fold(f64::NEG_INFINITY, f64::max);
    (-3.0 + best).exp()
}

/// `exp(-‖xₙ - xₘ‖² / (k σₙ σₘ + σ_T²))`.
pub fn kernel_location(x_n: &Vec3, x_m: &Vec3, sigma_n: f64, sigma_m: f64, p: &KernelParams) -> f64 {
    let d2 = (x_n - x_m).norm_squared();
    (-d2 / (p.k * sigma_n * sigma_m + p.sigma_t_sq)).exp()
}

pub fn kernel_geometry(g_n: &Geometry, g_m: &Geometry, p: &KernelParams) -> f64 {
    let orient = if p.use_orientation_states {
        kernel_orientation_states(&g_n.frame, &g_m.frame)
    } else {
        kernel_orientation(&g_n.frame, &g_m.frame)
    };
    scale_term(g_n.sigma, g_m.sigma) * orient * kernel_location(&g_n.x, &g_m.x, g_n.sigma, g_m.sigma, p)
}
