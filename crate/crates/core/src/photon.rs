//! Static charge in a thermal photon gas.
//!
//! Heaviside–Lorentz units, `α = e² / 4πħc`. Only the thermal part of the
//! imaginary kernel enters; the vacuum principal-value term drops out for a
//! static pair of world lines.

use std::f64::consts::PI;

use serde::Serialize;

use crate::constants::{C, ELECTRON_MASS, FINE_STRUCTURE, HBAR, K_B};
use crate::error::{Error, Result};
use crate::quadcore::{half_wave_breaks, Integrator, Tolerance};

/// Black-body radiation at a given temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhotonBath {
    pub temperature: f64,
}

impl PhotonBath {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param("temperature", "must be positive"));
        }
        Ok(Self { temperature })
    }

    /// `λ_Tγ = ħc / k_B T`.
    pub fn thermal_length(&self) -> f64 {
        HBAR * C / (K_B * self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChargedParticle {
    pub fine_structure: f64,
    pub mass: f64,
}

impl ChargedParticle {
    pub fn new(fine_structure: f64, mass: f64) -> Result<Self> {
        if !(fine_structure > 0.0 && fine_structure < 1.0) {
            return Err(Error::param("fine_structure", "must lie in (0, 1)"));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::param("mass", "must be positive"));
        }
        Ok(Self { fine_structure, mass })
    }

    pub fn electron() -> Self {
        Self {
            fine_structure: FINE_STRUCTURE,
            mass: ELECTRON_MASS,
        }
    }

    /// `e² = 4π ħ c α`.
    pub fn charge_squared(&self) -> f64 {
        4.0 * PI * HBAR * C * self.fine_structure
    }
}

/// Past this z the Bose factor is below `e^{-60}`.
const Z_CUTOFF: f64 = 60.0;

/// `f(y) = ∫_0^∞ dz sin(zy) / (e^z - 1)` by quadrature.
pub fn thermal_kernel_f(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::param("y", "must be finite"));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let a = y.abs();
    let integrand = |z: f64| {
        if z == 0.0 {
            a
        } else {
            (z * a).sin() / z.exp_m1()
        }
    };
    let mut breaks = if a > 1.0 {
        half_wave_breaks(a * Z_CUTOFF, |phase| phase / a, 100_000)
    } else {
        Vec::new()
    };
    breaks.push(Z_CUTOFF);
    let r = Integrator::new(Tolerance::new(1e-13, 1e-15))
        .with_max_intervals(breaks.len() + 4000)
        .semi_infinite_with_breaks(integrand, &breaks)?;
    Ok(r.value.copysign(y))
}

/// `(π/2) coth(πy) - 1/(2y)`.
pub fn thermal_kernel_f_closed(y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let x = PI * y.abs();
    let value = if x < 0.1 {
        // coth x - 1/x = x/3 - x³/45 + 2x⁵/945 - x⁷/4725 + 2x⁹/93555
        let x2 = x * x;
        0.5 * PI * x * (1.0 / 3.0 + x2 * (-1.0 / 45.0 + x2 * (2.0 / 945.0 + x2 * (-1.0 / 4725.0 + x2 * 2.0 / 93555.0))))
    } else {
        0.5 * PI / x.tanh() - 0.5 * PI / x
    };
    value.copysign(y)
}

/// `arctan(π² y / 6)`, the approximate form of the kernel.
pub fn thermal_kernel_f_arctan(y: f64) -> f64 {
    (PI * PI * y / 6.0).atan()
}

/// Thermal part of `Γ^i(t, x^d)` in joule per second.
pub fn gamma_i_thermal(t: f64, offset: f64, bath: &PhotonBath, chg: &ChargedParticle) -> Result<f64> {
    if offset == 0.0 {
        return Err(Error::ZeroOffset);
    }
    if !(offset > 0.0) {
        return Err(Error::param("offset", "must be positive"));
    }
    let lt = bath.thermal_length();
    let s = offset / lt;
    let r = C * t / lt;
    let bracket = thermal_kernel_f(s - r)? + thermal_kernel_f(s + r)?;
    Ok(chg.charge_squared() * C / (4.0 * PI * PI * lt * offset) * bracket)
}

/// Window half-width beyond `|ct| = |x^d|`, in units of `λ_Tγ`.
const TIME_WINDOW: f64 = 40.0;

/// `∫ dr [f(s - r) + f(s + r)]` over the whole real line, `r = ct/λ_Tγ`.
///
/// Quadrature on `|r| <= s + 40`; beyond, `f(y) = ±π/2 - 1/2y` up to
/// exponentially small terms and the tail is `ln((R + s)/(R - s))`.
fn kernel_time_integral(s: f64) -> Result<f64> {
    let big_r = s + TIME_WINDOW;
    let mut failure = None;
    let integrand = |r: f64| {
        let pair = thermal_kernel_f(s - r).and_then(|a| Ok(a + thermal_kernel_f(s + r)?));
        match pair {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    // even in r; the kink-like structure sits at r = s
    let breaks: Vec<f64> = [s - 1.0, s, s + 1.0].into_iter().filter(|&b| b > 0.0 && b < big_r).collect();
    let body = Integrator::new(Tolerance::new(1e-11, 1e-13)).finite_with_breaks(integrand, 0.0, big_r, &breaks)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let tail = 0.5 * ((big_r + s) / (big_r - s)).ln();
    Ok(2.0 * (body.value + tail))
}

/// Integrand of the photon decoherence potential at `(r, s)`, dimensionless:
/// `[f(s - r) + f(s + r)] / (2π s)`; integrates to one over r.
pub fn photon_integrand(r: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::ZeroOffset);
    }
    Ok((thermal_kernel_f(s - r)? + thermal_kernel_f(s + r)?) / (2.0 * PI * s))
}

/// `U_d(x^d) = ½ ∫ dt Γ^i(t, x^d)`, in joule.
pub fn decoherence_potential_photon(offset: f64, bath: &PhotonBath, chg: &ChargedParticle) -> Result<f64> {
    if offset == 0.0 {
        return Err(Error::ZeroOffset);
    }
    if !(offset > 0.0) {
        return Err(Error::param("offset", "must be positive"));
    }
    let lt = bath.thermal_length();
    let s = offset / lt;
    // ½ ∫dt Γ^i = e² / (8π² λ s) ∫ dr [...]
    Ok(chg.charge_squared() / (8.0 * PI * PI * lt * s) * kernel_time_integral(s)?)
}

/// Share of `U_d` accumulated while `|ct| <= |x^d|`.
pub fn plateau_fraction(offset: f64, bath: &PhotonBath) -> Result<f64> {
    if !(offset > 0.0) {
        return Err(Error::ZeroOffset);
    }
    let s = offset / bath.thermal_length();
    let inner = Integrator::new(Tolerance::new(1e-10, 1e-13)).finite_with_breaks(
        |r| thermal_kernel_f(s - r).unwrap_or(f64::NAN) + thermal_kernel_f(s + r).unwrap_or(f64::NAN),
        0.0,
        s,
        &[],
    )?;
    Ok(2.0 * inner.value / kernel_time_integral(s)?)
}

/// `τ_sd = ħ / (α k_B T)`.
pub fn stationary_time_photon(bath: &PhotonBath, chg: &ChargedParticle) -> f64 {
    HBAR / (chg.fine_structure * K_B * bath.temperature)
}

/// The printed numerical estimate `0.76·10⁻⁹ / T` seconds, kept for comparison.
pub fn stationary_time_photon_printed(bath: &PhotonBath) -> f64 {
    0.76e-9 / bath.temperature
}

/// Abraham–Lorentz friction time `2αħ / (3 m c²)`.
pub fn abraham_lorentz_time(chg: &ChargedParticle) -> f64 {
    2.0 * chg.fine_structure * HBAR / (3.0 * chg.mass * C * C)
}

/// `T_cr = 3 m c² / (2 α² k_B)`.
pub fn critical_temperature(chg: &ChargedParticle) -> f64 {
    3.0 * chg.mass * C * C / (2.0 * chg.fine_structure.powi(2) * K_B)
}
