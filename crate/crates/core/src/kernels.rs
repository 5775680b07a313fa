//! Gaussian, Rayleigh and conditioned heat kernels, plus the limit-term
//! evaluators that the harness compares against simulation.
//!
//! Notation: `s = σ√n` is the diffusive scale and `u = y/s` the rescaled
//! starting level. `ψ(y,z) = φ(y−z) − φ(y+z)`, `H(y) = 2Φ(y) − 1`,
//! `ℓ = ψ/H`, `L(y) = H(y)/y`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Mass of a unit Gaussian beyond this many standard deviations is below 1e-32.
const TAIL_SD: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Below this `|y|`, `ℓ(y, ·)` and `L(y)` return their `y → 0` limits.
    pub y_zero_threshold: f64,
    pub quadrature: Quadrature,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { y_zero_threshold: 1e-6, quadrature: Quadrature::default() }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.y_zero_threshold > 0.0) {
            return Err(Error::InvalidParameter("y_zero_threshold must be positive".into()));
        }
        self.quadrature.validate()
    }

    pub fn ell(&self, y: f64, z: f64) -> f64 {
        if y.abs() < self.y_zero_threshold {
            rayleigh_pdf(z)
        } else {
            psi(y, z) / h_norm(y)
        }
    }

    pub fn l_func(&self, y: f64) -> f64 {
        if y.abs() < self.y_zero_threshold {
            2.0 * INV_SQRT_2PI
        } else {
            h_norm(y) / y
        }
    }

    /// `ℓ_v(x, y) = ψ_v(x, y) / H(x)`; near `x = 0` the limit
    /// `v^{-3/2} y e^{-y²/(2v)}` restricted to `y ≥ 0`.
    pub fn ell_scaled(&self, v: f64, x: f64, y: f64) -> f64 {
        if x.abs() < self.y_zero_threshold {
            let s = v.sqrt();
            rayleigh_pdf(y / s) / v
        } else {
            psi_scaled(v, x, y) / h_norm(x)
        }
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Centered Gaussian density with variance `v`.
pub fn gaussian_pdf(v: f64, x: f64) -> f64 {
    (-0.5 * x * x / v).exp() / (2.0 * PI * v).sqrt()
}

pub fn psi(y: f64, z: f64) -> f64 {
    let yz = y * z;
    if yz < 0.0 {
        return -psi(y, -z);
    }
    // e^{-(y-z)²/2} (1 - e^{-2yz}) avoids cancellation for small yz.
    let d = y - z;
    INV_SQRT_2PI * (-0.5 * d * d).exp() * -(-2.0 * yz).exp_m1()
}

/// `H(y) = 2Φ(y) − 1 = erf(y/√2)`.
pub fn h_norm(y: f64) -> f64 {
    libm::erf(y * FRAC_1_SQRT_2)
}

/// `ℓ(y, z)` with the default threshold.
pub fn ell(y: f64, z: f64) -> f64 {
    KernelConfig::default().ell(y, z)
}

/// `L(y)` with the default threshold.
pub fn l_func(y: f64) -> f64 {
    KernelConfig::default().l_func(y)
}

pub fn rayleigh_pdf(z: f64) -> f64 {
    if z >= 0.0 {
        z * (-0.5 * z * z).exp()
    } else {
        0.0
    }
}

pub fn rayleigh_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        -(-0.5 * t * t).exp_m1()
    } else {
        0.0
    }
}

pub fn psi_scaled(v: f64, x: f64, y: f64) -> f64 {
    let s = v.sqrt();
    psi(x / s, y / s) / s
}

pub fn ell_scaled(v: f64, x: f64, y: f64) -> f64 {
    KernelConfig::default().ell_scaled(v, x, y)
}

/// `χ_ε(t)`: 0 below `−ε`, linear on `(−ε, 0)`, 1 from 0 on.
pub fn smooth_indicator(epsilon: f64, t: f64) -> f64 {
    ((t + epsilon) / epsilon).clamp(0.0, 1.0)
}

/// Closed-form `∫_a^b ψ(u, w) dw`.
pub fn psi_window_closed_form(u: f64, a: f64, b: f64) -> f64 {
    (std_normal_cdf(b - u) - std_normal_cdf(a - u)) - (std_normal_cdf(b + u) - std_normal_cdf(a + u))
}

/// Both sides of the convolution identity
/// `φ_v * ℓ⁺_{1−v}(x, y) + φ_v * ℓ⁻_{1−v}(x, y) = ℓ(x, y)`.
pub fn conv_identity_check(cfg: &KernelConfig, v: f64, x: f64, y: f64) -> Result<(f64, f64)> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidParameter(format!("v = {v} outside (0, 1)")));
    }
    if x.abs() < cfg.y_zero_threshold {
        return Err(Error::InvalidParameter("x must be away from 0".into()));
    }
    let w = 1.0 - v;
    let integrand = |z: f64| gaussian_pdf(v, y - z) * psi_scaled(w, x, z) / h_norm(x);
    let reach = TAIL_SD * v.sqrt().max(w.sqrt()) + x.abs() + y.abs();
    let breaks = |lo: f64, hi: f64| {
        let mut p = vec![lo];
        p.extend([y, x, -x].into_iter().filter(|&b| b > lo && b < hi));
        p.push(hi);
        p.sort_by(f64::total_cmp);
        p
    };
    let plus = cfg.quadrature.integrate_with_breaks(integrand, &breaks(0.0, reach))?;
    let minus = cfg.quadrature.integrate_with_breaks(integrand, &breaks(-reach, 0.0))?;
    Ok((plus + minus, cfg.ell(x, y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremInputs {
    pub y: f64,
    pub z: f64,
    pub delta_window: f64,
    pub n: u64,
    pub sigma_hat: f64,
    pub v_hat: f64,
    #[serde(default)]
    pub v_star_hat: Option<f64>,
}

impl TheoremInputs {
    pub fn validate(&self, delta_floor: f64) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if !(self.sigma_hat > 0.0) {
            return Err(Error::InvalidParameter("sigma_hat must be positive".into()));
        }
        if !(self.z >= 0.0) {
            return Err(Error::InvalidParameter("z must be non-negative".into()));
        }
        if !(self.delta_window >= delta_floor) {
            return Err(Error::InvalidParameter(format!(
                "window {} below floor {delta_floor}",
                self.delta_window
            )));
        }
        Ok(())
    }

    /// `σ̂√n`.
    pub fn scale(&self) -> f64 {
        self.sigma_hat * (self.n as f64).sqrt()
    }

    /// `V̂_n = V̂ · L(y/(σ̂√n))`.
    pub fn v_n(&self, cfg: &KernelConfig) -> f64 {
        self.v_hat * cfg.l_func(self.y / self.scale())
    }

    /// `V̂*_n = V̂* · L((z+Δ)/(σ̂√n))`.
    pub fn v_star_n(&self, cfg: &KernelConfig) -> Option<f64> {
        self.v_star_hat
            .map(|vs| vs * cfg.l_func((self.z + self.delta_window) / self.scale()))
    }

    fn window(&self) -> (f64, f64) {
        let s = self.scale();
        (self.z / s, (self.z + self.delta_window) / s)
    }
}

/// `∫_a^b f(w) dw` for a kernel concentrated within `TAIL_SD` of `±u`;
/// the range is clipped to where the integrand is not negligible.
fn window_integral<F: Fn(f64) -> f64>(cfg: &KernelConfig, f: F, u: f64, a: f64, b: f64) -> Result<f64> {
    let reach = u.abs() + TAIL_SD;
    let (lo, hi) = (a.max(-reach), b.min(reach));
    if lo >= hi {
        return Ok(0.0);
    }
    let mut pts = vec![lo];
    pts.extend([-u.abs(), 0.0, u.abs()].into_iter().filter(|&p| p > lo && p < hi));
    pts.push(hi);
    cfg.quadrature.integrate_with_breaks(f, &pts)
}

/// `V̂_n/(σ̂²n) ∫_z^{z+Δ} ℓ(y/(σ̂√n), z'/(σ̂√n)) dz'`.
pub fn main_term_thm1(cfg: &KernelConfig, inp: &TheoremInputs) -> Result<f64> {
    let s = inp.scale();
    let u = inp.y / s;
    let (a, b) = inp.window();
    let integral = window_integral(cfg, |w| cfg.ell(u, w), u, a, b)?;
    Ok(inp.v_n(cfg) / s * integral)
}

/// Small-`y` form: `2V̂/(√(2π)σ̂²n) ∫_z^{z+Δ} φ⁺(z'/(σ̂√n)) dz'`.
pub fn caravenna_term(inp: &TheoremInputs) -> f64 {
    let s = inp.scale();
    let (a, b) = inp.window();
    2.0 * INV_SQRT_2PI * inp.v_hat / s * (rayleigh_cdf(b) - rayleigh_cdf(a))
}

/// `(1/(σ̂√n)) ∫_z^{z+Δ} ψ(y/(σ̂√n), z'/(σ̂√n)) dz'`.
pub fn large_y_term(cfg: &KernelConfig, inp: &TheoremInputs) -> Result<f64> {
    let u = inp.y / inp.scale();
    let (a, b) = inp.window();
    window_integral(cfg, |w| psi(u, w), u, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcltRegime {
    SmallY,
    LargeY,
    Unified,
}

/// Limit of `P(y + S_n ≤ t σ̂√n, τ > n)` in the requested regime.
pub fn cclt_rhs(cfg: &KernelConfig, inp: &TheoremInputs, t: f64, regime: CcltRegime) -> Result<f64> {
    let s = inp.scale();
    let u = inp.y / s;
    match regime {
        CcltRegime::SmallY => Ok(rayleigh_cdf(t) * 2.0 * INV_SQRT_2PI * inp.v_hat / s),
        CcltRegime::LargeY => {
            if t < 0.0 {
                return Err(Error::InvalidParameter("t must be non-negative".into()));
            }
            window_integral(cfg, |w| psi(u, w), u, 0.0, t)
        }
        CcltRegime::Unified => {
            let integral = window_integral(cfg, |w| cfg.ell(u, w), u, 0.0, t)?;
            Ok(inp.v_n(cfg) / s * integral)
        }
    }
}

/// `Δ n^{−3/2} (1 + V̂_n)(1 + V̂*_n)`, the upper-bound shape with unit constant.
pub fn upper_bound_thm3(cfg: &KernelConfig, inp: &TheoremInputs) -> Result<f64> {
    let vs = inp
        .v_star_n(cfg)
        .ok_or_else(|| Error::InvalidParameter("v_star_hat required".into()))?;
    Ok(upper_bound_shape(inp.delta_window, inp.n, inp.v_n(cfg), vs))
}

pub fn upper_bound_shape(delta: f64, n: u64, v_n: f64, v_star_n: f64) -> f64 {
    delta * (n as f64).powf(-1.5) * (1.0 + v_n) * (1.0 + v_star_n)
}
