//! Test particle with contact coupling `V(x) = g δ(x)` to an ideal Fermi gas.
//!
//! Every integral is evaluated in reduced variables: energies in `k_B T`,
//! lengths in `λ_T = ħ √(2π / m k_B T)`, frequencies in `k_B T / ħ`, rates in
//! `ρ₀ = n_s g² m / (ħ³ λ_T⁴)`. The chemical potential is the Fermi energy.
//!
//! # Propagator conventions
//!
//! [`particle_hole_gmp`] returns the magnitude of `G^{-+}_{ω,q}`; the overall
//! `-i` is implicit. The far and imaginary components are normalised as
//!
//! ```text
//! G^f = -i [G(ω) - G(-ω)]        G^i = -[G(ω) + G(-ω)]
//! ```
//!
//! with `G` the magnitude. This normalisation reproduces the closed form
//! `i ∂_ω G^f |_{ω=0} = n_s m² / (2π ħ³ q) · n_F(q)`, the friction rate built
//! on it and the stationary decoherence rate, and keeps `U_d >= 0`. The near
//! component `G^n` is the Kramers–Kronig partner of `G^f`.

use std::cell::RefCell;
use std::f64::consts::PI;

use serde::Serialize;

use crate::constants::{HBAR, K_B};
use crate::error::{Error, Result};
use crate::quadcore::{self, fermi_dirac_complete, one_minus_sinc, Integrator, Tolerance};

/// Ideal Fermi gas in equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GasEnvironment {
    /// Kelvin.
    pub temperature: f64,
    /// Joule; also the chemical potential.
    pub fermi_energy: f64,
    pub spin_degeneracy: f64,
    /// Mass of a gas particle, kilogram.
    pub gas_mass: f64,
}

impl GasEnvironment {
    pub fn new(temperature: f64, fermi_energy: f64, spin_degeneracy: f64, gas_mass: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param("temperature", "must be positive"));
        }
        if !(fermi_energy >= 0.0 && fermi_energy.is_finite()) {
            return Err(Error::param("fermi_energy", "must be non-negative"));
        }
        if !(spin_degeneracy >= 1.0) {
            return Err(Error::param("spin_degeneracy", "must be at least 1"));
        }
        if !(gas_mass > 0.0 && gas_mass.is_finite()) {
            return Err(Error::param("gas_mass", "must be positive"));
        }
        Ok(Self {
            temperature,
            fermi_energy,
            spin_degeneracy,
            gas_mass,
        })
    }

    /// Environment with the Fermi energy fixed by `u = ε_F / k_B T`.
    pub fn with_degeneracy(u: f64, temperature: f64, spin_degeneracy: f64, gas_mass: f64) -> Result<Self> {
        Self::new(temperature, u * K_B * temperature, spin_degeneracy, gas_mass)
    }

    pub fn kt(&self) -> f64 {
        K_B * self.temperature
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.kt()
    }

    /// `u = ε_F / k_B T`.
    pub fn u(&self) -> f64 {
        self.fermi_energy / self.kt()
    }

    /// `λ_T = ħ √(2π / m k_B T)`.
    pub fn thermal_wavelength(&self) -> f64 {
        HBAR * (2.0 * PI / (self.gas_mass * self.kt())).sqrt()
    }

    /// `v_T = √(k_B T / m)`.
    pub fn thermal_velocity(&self) -> f64 {
        (self.kt() / self.gas_mass).sqrt()
    }

    /// Rate unit `ρ₀ = n_s g² m / (ħ³ λ_T⁴)`.
    pub fn rate_unit(&self, cpl: &TestParticleCoupling) -> f64 {
        let lt = self.thermal_wavelength();
        self.spin_degeneracy * cpl.coupling_strength.powi(2) * self.gas_mass / (HBAR.powi(3) * lt.powi(4))
    }

    /// `n_s k_B T m² / (2π ħ⁴ q)` at unit `q`.
    fn gmp_prefactor(&self) -> f64 {
        self.spin_degeneracy * self.kt() * self.gas_mass.powi(2) / (2.0 * PI * HBAR.powi(4))
    }
}

/// Contact coupling strength `g` (J·m³) and bare mass of the test particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestParticleCoupling {
    pub coupling_strength: f64,
    pub bare_mass: f64,
}

impl TestParticleCoupling {
    pub fn new(coupling_strength: f64, bare_mass: f64) -> Result<Self> {
        if !coupling_strength.is_finite() {
            return Err(Error::param("coupling", "must be finite"));
        }
        if !(bare_mass > 0.0 && bare_mass.is_finite()) {
            return Err(Error::param("bare_mass", "must be positive"));
        }
        Ok(Self {
            coupling_strength,
            bare_mass,
        })
    }
}

/// `(u, v) = (ε_F / k_B T, |x^d| / λ_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedPoint {
    pub u: f64,
    pub v: f64,
}

impl ReducedPoint {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::param("u", "must be finite and non-negative"));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::param("v", "must be finite and non-negative"));
        }
        Ok(Self { u, v })
    }
}

/// Scalars of the isotropic influence Lagrangian
/// `Δm ẋ^d ẋ - k x^d ẋ + (i/2)(d₀ x^{d2} + d₂ ẋ^{d2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveCouplings {
    /// kg
    pub delta_mass: f64,
    /// Newtonian friction constant, kg/s.
    pub friction: f64,
    /// J/m²
    pub d0: f64,
    /// J·s²/m²
    pub d2: f64,
}

impl EffectiveCouplings {
    /// `τ_diss = m / k` for the given mass.
    pub fn dissipation_time(&self, mass: f64) -> f64 {
        mass / self.friction
    }

    /// Dissipation time of the dressed test particle, `(m_B + Δm) / k`.
    pub fn test_particle_dissipation_time(&self, cpl: &TestParticleCoupling) -> f64 {
        self.dissipation_time(cpl.bare_mass + self.delta_mass)
    }

    /// `ħ d₀ / 2k`, in joule.
    pub fn hbar_d0_over_2k(&self) -> f64 {
        HBAR * self.d0 / (2.0 * self.friction)
    }
}

/// IR-regulated build-up: cutoff time and static separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BuildupSpec {
    pub tau_ir: f64,
    pub offset: f64,
}

impl BuildupSpec {
    pub fn new(tau_ir: f64, offset: f64) -> Result<Self> {
        if !(tau_ir > 0.0 && tau_ir.is_finite()) {
            return Err(Error::param("tau_ir", "must be positive"));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::param("offset", "must be non-negative"));
        }
        Ok(Self { tau_ir, offset })
    }
}

// ---------------------------------------------------------------------------
// reduced kernels

/// Exponent of `a`: `π w²/q̃² + q̃²/16π - w/2 - u`.
fn log_a(w: f64, qt: f64, u: f64) -> f64 {
    let omega_term = if w == 0.0 { 0.0 } else { PI * w * w / (qt * qt) };
    omega_term + qt * qt / (16.0 * PI) - 0.5 * w - u
}

/// `1 / (e^{q̃²/16π - u} + 1)`, the ω = 0 value of the reduced z-integral.
pub fn static_occupation(qt: f64, u: f64) -> f64 {
    let x = qt * qt / (16.0 * PI) - u;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Reduced `∫_0^∞ dz / (a e^z + b e^{-z} + c)` with `w = ħω/k_BT`, `q̃ = q λ_T`.
pub fn gmp_reduced(w: f64, qt: f64, u: f64, tol: Tolerance) -> Result<f64> {
    let la = log_a(w, qt, u);
    let c = (-w).exp() + 1.0;
    let integrand = |z: f64| {
        let d = (la + z).exp() + (-w - la - z).exp() + c;
        1.0 / d
    };
    // the integrand is flat up to z ≈ -ln a, then decays like e^{-z}/a
    let mut breaks = Vec::new();
    if -la > 1.0 {
        breaks.push(-la);
    }
    Ok(Integrator::new(tol).semi_infinite_with_breaks(integrand, &breaks)?.value)
}

/// Exact z-integral, `ln((a+1)/(a+E)) / (1-E)` with `E = e^{-w}`.
#[allow(clippy::only_used_in_recursion)]
pub fn gmp_reduced_exact(w: f64, qt: f64, u: f64, tol: Tolerance) -> Result<f64> {
    if w == 0.0 {
        return Ok(static_occupation(qt, u));
    }
    if w < 0.0 {
        // e^{-w} overflows; use the detailed-balance partner
        return Ok(w.exp() * gmp_reduced_exact(-w, qt, u, tol)?);
    }
    let la = log_a(w, qt, u);
    let one_minus_e = -(-w).exp_m1();
    let a = la.exp();
    let e = (-w).exp();
    let x = one_minus_e / (a + e);
    let log_ratio = if x > -0.5 { x.ln_1p() } else { ((a + 1.0) / (a + e)).ln() };
    Ok(log_ratio / one_minus_e)
}

type Kernel = fn(f64, f64, f64, Tolerance) -> Result<f64>;

fn far_reduced(kernel: Kernel, w: f64, qt: f64, u: f64, tol: Tolerance) -> Result<f64> {
    if w == 0.0 {
        return Ok(0.0);
    }
    Ok(kernel(w, qt, u, tol)? - kernel(-w, qt, u, tol)?)
}

fn imag_reduced(kernel: Kernel, w: f64, qt: f64, u: f64, tol: Tolerance) -> Result<f64> {
    if w == 0.0 {
        return Ok(-2.0 * kernel(0.0, qt, u, tol)?);
    }
    Ok(-(kernel(w, qt, u, tol)? + kernel(-w, qt, u, tol)?))
}

/// Subtracted Kramers–Kronig transform of the far component:
/// `G^n(w) = -(2/π) ∫_0^∞ [s f(s) - w f(w)] / (s² - w²) ds`.
fn near_reduced(kernel: Kernel, w: f64, qt: f64, u: f64, tol: Tolerance) -> Result<f64> {
    let w = w.abs();
    let inner = Tolerance::relative(tol.relative * 1e-2);
    let fw = far_reduced(kernel, w, qt, u, inner)?;
    let mut failure = None;
    let integrand = |s: f64| {
        // removable point at s = w; nudge off it
        let s = if (s - w).abs() < 1e-9 * (1.0 + w) { w + 1e-6 * (1.0 + w) } else { s };
        match far_reduced(kernel, s, qt, u, inner) {
            Ok(fs) => (s * fs - w * fw) / (s * s - w * w),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    // the far component lives on the scale q̃ and peaks near w ~ q̃²/4π
    let centre = qt * qt / (4.0 * PI) + qt * u.max(1.0).sqrt();
    let mut breaks: Vec<f64> = [0.25 * qt, qt, 4.0 * qt, 0.5 * centre, centre, 2.0 * centre, w]
        .into_iter()
        .filter(|&b| b > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let r = Integrator::new(tol).semi_infinite_with_breaks(integrand, &breaks)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(-2.0 / PI * r.value)
}

// ---------------------------------------------------------------------------
// propagator

/// Magnitude of `G^{-+}_{ω,q}` (the `-i` prefactor is implicit), in
/// 1/(J·m³) units of the particle-hole density response.
pub fn particle_hole_gmp(omega: f64, q: f64, env: &GasEnvironment) -> Result<f64> {
    particle_hole_gmp_with(omega, q, env, Tolerance::relative(1e-12))
}

pub fn particle_hole_gmp_with(omega: f64, q: f64, env: &GasEnvironment, tol: Tolerance) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let w = HBAR * omega / env.kt();
    let qt = q * env.thermal_wavelength();
    Ok(env.gmp_prefactor() / q * gmp_reduced(w, qt, env.u(), tol)?)
}

/// `G^f` component at `(ω, q)` with the `-i` stripped (real, odd in ω).
pub fn far_component(omega: f64, q: f64, env: &GasEnvironment) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let w = HBAR * omega / env.kt();
    let qt = q * env.thermal_wavelength();
    Ok(env.gmp_prefactor() / q * far_reduced(gmp_reduced, w, qt, env.u(), Tolerance::relative(1e-12))?)
}

/// `G^i` component at `(ω, q)` (real, even in ω, non-positive).
pub fn imaginary_component(omega: f64, q: f64, env: &GasEnvironment) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let w = HBAR * omega / env.kt();
    let qt = q * env.thermal_wavelength();
    Ok(env.gmp_prefactor() / q * imag_reduced(gmp_reduced, w, qt, env.u(), Tolerance::relative(1e-12))?)
}

/// `G^n` component at `(ω, q)`, the Kramers–Kronig partner of [`far_component`].
pub fn near_component(omega: f64, q: f64, env: &GasEnvironment) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let w = HBAR * omega / env.kt();
    let qt = q * env.thermal_wavelength();
    Ok(env.gmp_prefactor() / q * near_reduced(gmp_reduced, w, qt, env.u(), Tolerance::relative(1e-10))?)
}

/// `i ∂_ω G^f` at `ω = 0` in closed form.
pub fn far_slope_closed_form(q: f64, env: &GasEnvironment) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let qt = q * env.thermal_wavelength();
    Ok(env.spin_degeneracy * env.gas_mass.powi(2) / (2.0 * PI * HBAR.powi(3) * q) * static_occupation(qt, env.u()))
}

// ---------------------------------------------------------------------------
// rates

/// Largest z that still matters under the Fermi weight `1/(1 + e^{z-u})`.
fn fermi_cutoff(u: f64) -> f64 {
    u.max(0.0) + 50.0
}

/// `∫_0^∞ dz [1 - sinc(4√(πz) v)] / (1 + e^{z-u})`.
pub fn decoherence_integral(u: f64, v: f64) -> Result<f64> {
    if v == 0.0 {
        return Ok(0.0);
    }
    let c = 4.0 * PI.sqrt() * v;
    let integrand = |z: f64| one_minus_sinc(c * z.sqrt()) * static_weight(z, u);
    let z_max = fermi_cutoff(u);
    let mut breaks = if v > 5.0 {
        // zeros of sin(c √z): z_k = (kπ / c)²
        quadcore::half_wave_breaks(c * z_max.sqrt(), |phase| (phase / c).powi(2), 20_000)
    } else {
        Vec::new()
    };
    if u > 2.0 {
        breaks.push(u);
        breaks.sort_by(f64::total_cmp);
    }
    breaks.push(z_max);
    let integrator = Integrator::new(Tolerance::default()).with_max_intervals(breaks.len() + 4000);
    Ok(integrator.semi_infinite_with_breaks(integrand, &breaks)?.value)
}

fn static_weight(z: f64, u: f64) -> f64 {
    let x = z - u;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Friction rate `1/τ_diss = (32 n_s g² m)/(3π ħ³ λ_T⁴) F₁(u)` in 1/s.
pub fn dissipation_rate(env: &GasEnvironment, cpl: &TestParticleCoupling) -> f64 {
    env.rate_unit(cpl) * reduced_dissipation_rate(env.u())
}

/// `1/τ_diss` in units of `ρ₀`.
pub fn reduced_dissipation_rate(u: f64) -> f64 {
    32.0 / (3.0 * PI) * fermi_dirac_complete(1, u)
}

/// `1/τ_sd(x^d)` in units of `ρ₀`.
pub fn reduced_stationary_decoherence_rate(u: f64, v: f64) -> Result<f64> {
    Ok(8.0 / PI * decoherence_integral(u, v)?)
}

/// Stationary decoherence rate `1/τ_sd(x^d)` in 1/s.
pub fn stationary_decoherence_rate(offset: f64, env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    if !(offset >= 0.0) {
        return Err(Error::param("offset", "must be non-negative"));
    }
    let v = offset / env.thermal_wavelength();
    Ok(env.rate_unit(cpl) * reduced_stationary_decoherence_rate(env.u(), v)?)
}

/// `R(u, v) = τ_diss / τ_sd`.
pub fn ratio_r(p: ReducedPoint) -> Result<f64> {
    if p.v == 0.0 {
        return Ok(0.0);
    }
    Ok(0.75 * decoherence_integral(p.u, p.v)? / fermi_dirac_complete(1, p.u))
}

/// Saturated ratio at strong off-diagonality for a degenerate gas, `3 k_B T / 2 ε_F`.
pub fn degenerate_asymptote(u: f64) -> f64 {
    1.5 / u
}

/// Saturated ratio for a classical gas, `9 ln 2 / π²`.
pub fn classical_saturation() -> f64 {
    9.0 * 2f64.ln() / (PI * PI)
}

// ---------------------------------------------------------------------------
// decoherence potential

/// `n_s k_B T m² / (2π³ ħ⁴ λ_T²)`: converts `∫ dq̃ q̃ (1 - sinc) |V|² n_F` into joule.
fn potential_prefactor(env: &GasEnvironment) -> f64 {
    let lt = env.thermal_wavelength();
    env.spin_degeneracy * env.kt() * env.gas_mass.powi(2) / (2.0 * PI.powi(3) * HBAR.powi(4) * lt * lt)
}

/// Stationary decoherence potential for a spherically symmetric potential
/// with Fourier transform `V_q` (J·m³ as a function of q in 1/m).
///
/// Evaluated as a momentum integral over `-G^i_{0q}`; for `V_q = g` it
/// equals `ħ / τ_sd`.
pub fn decoherence_potential<V: Fn(f64) -> f64>(offset: f64, env: &GasEnvironment, fourier_potential: V) -> Result<f64> {
    if !(offset >= 0.0) {
        return Err(Error::param("offset", "must be non-negative"));
    }
    if offset == 0.0 {
        return Ok(0.0);
    }
    let lt = env.thermal_wavelength();
    let v = offset / lt;
    let u = env.u();
    let integrand = |qt: f64| {
        let vq = fourier_potential(qt / lt);
        qt * one_minus_sinc(qt * v) * vq * vq * static_occupation(qt, u)
    };
    let qt_max = (16.0 * PI * fermi_cutoff(u)).sqrt();
    let mut breaks = if v > 1.0 {
        quadcore::half_wave_breaks(qt_max * v, |phase| phase / v, 20_000)
    } else {
        Vec::new()
    };
    breaks.push(qt_max);
    let integrator = Integrator::new(Tolerance::new(1e-11, 0.0)).with_max_intervals(breaks.len() + 4000);
    let r = integrator.semi_infinite_with_breaks(integrand, &breaks)?;
    Ok(potential_prefactor(env) * r.value)
}

// ---------------------------------------------------------------------------
// effective couplings

/// `∫_0^∞ dq̃ q̃³ h(q̃)` over the Fermi-weighted range.
fn cubic_moment<H: FnMut(f64) -> Result<f64>>(u: f64, tol: Tolerance, mut h: H) -> Result<f64> {
    let mut failure = None;
    let integrand = |qt: f64| match h(qt) {
        Ok(val) => qt.powi(3) * val,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let qt_edge = (16.0 * PI * u).sqrt();
    let breaks: Vec<f64> = if qt_edge > 1.0 { vec![qt_edge] } else { Vec::new() };
    let r = Integrator::new(tol).semi_infinite_with_breaks(integrand, &breaks)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

/// Relative frequency step for Richardson ω-derivatives, `ħω/k_BT` units.
const OMEGA_STEP: f64 = 1e-3;

fn omega_step(qt: f64) -> f64 {
    // the reduced components vary on the scale q̃ in w
    OMEGA_STEP * qt.min(1.0)
}

/// The near component at w = 0 varies on the particle-hole scale `q̃²/4π`.
fn near_step(qt: f64) -> f64 {
    omega_step(qt) * (qt * qt / (40.0 * PI)).max(1.0)
}

/// Second w-derivative at `w = 0` of an even reduced component.
fn second_derivative_at_zero<G: Fn(f64) -> Result<f64>>(g: G, step: f64) -> Result<f64> {
    let failure = RefCell::new(None);
    let f = |w: f64| match g(w) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let d = quadcore::derivative(f, 0.0, 2, step)?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(d),
    }
}

/// Friction constant `k = -(1/6π²) ∫ dq q⁴ g² ∂_{iω} G^f_{0q}` using the
/// closed-form ω-slope of the far component.
pub fn friction_constant(env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    let u = env.u();
    let lt = env.thermal_wavelength();
    let moment = cubic_moment(u, Tolerance::relative(1e-12), |qt| Ok(static_occupation(qt, u)))?;
    let g2 = cpl.coupling_strength.powi(2);
    Ok(g2 * env.spin_degeneracy * env.gas_mass.powi(2) / (12.0 * PI.powi(3) * HBAR.powi(3) * lt.powi(4)) * moment)
}

/// `d₀ = -(1/6π²) ∫ dq q⁴ g² G^i_{0q}` with `G^i_{0q}` from the z-quadrature.
pub fn coordinate_decoherence(env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    let u = env.u();
    let lt = env.thermal_wavelength();
    let moment = cubic_moment(u, Tolerance::relative(1e-11), |qt| {
        imag_reduced(gmp_reduced, 0.0, qt, u, Tolerance::relative(1e-13))
    })?;
    let g2 = cpl.coupling_strength.powi(2);
    Ok(-g2 * env.spin_degeneracy * env.kt() * env.gas_mass.powi(2) / (12.0 * PI.powi(3) * HBAR.powi(4) * lt.powi(4)) * moment)
}

/// Common prefactor of Δm and d₂: `g² n_s m² / (24 π³ ħ² k_B T λ_T⁴)`.
fn curvature_prefactor(env: &GasEnvironment, cpl: &TestParticleCoupling) -> f64 {
    let lt = env.thermal_wavelength();
    cpl.coupling_strength.powi(2) * env.spin_degeneracy * env.gas_mass.powi(2)
        / (24.0 * PI.powi(3) * HBAR.powi(2) * env.kt() * lt.powi(4))
}

/// `d₂ = (1/12π²) ∫ dq q⁴ g² ∂²_{iω} G^i_{0q}`, Richardson in ω.
pub fn velocity_decoherence(env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    let u = env.u();
    let moment = cubic_moment(u, Tolerance::relative(1e-8), |qt| {
        second_derivative_at_zero(|w| imag_reduced(gmp_reduced_exact, w, qt, u, Tolerance::default()), omega_step(qt))
    })?;
    Ok(-curvature_prefactor(env, cpl) * moment)
}

/// `Δm = (1/12π²) ∫ dq q⁴ g² ∂²_{iω} G^n_{0q}`, Richardson in ω.
///
/// Beyond the particle-hole continuum the q̃-integrand behaves as
/// `(A + B/q̃²)/q̃²`; the range past `Q` is added from a two-point fit.
pub fn mass_renormalization(env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    let u = env.u();
    let curvature = |qt: f64| {
        second_derivative_at_zero(|w| near_reduced(gmp_reduced_exact, w, qt, u, Tolerance::relative(1e-12)), near_step(qt))
    };
    let q_max = 8.0 * (16.0 * PI * (u.max(0.0) + 10.0)).sqrt();
    let mut failure = None;
    let integrand = |qt: f64| match curvature(qt) {
        Ok(val) => qt.powi(3) * val,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let qt_edge = (16.0 * PI * u).sqrt();
    let breaks: Vec<f64> = [1.0, qt_edge, 2.0 * qt_edge].into_iter().filter(|&b| b > 0.0 && b < q_max).collect();
    let body = Integrator::new(Tolerance::new(1e-5, 1e-10)).finite_with_breaks(integrand, 0.0, q_max, &breaks)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let h1 = q_max.powi(5) * curvature(q_max)?;
    let h2 = (2.0 * q_max).powi(5) * curvature(2.0 * q_max)?;
    let a = (4.0 * h2 - h1) / 3.0;
    let b = (h1 - a) * q_max * q_max;
    let tail = a / q_max + b / (3.0 * q_max.powi(3));
    Ok(-curvature_prefactor(env, cpl) * (body.value + tail))
}

/// All four influence-Lagrangian scalars.
pub fn effective_couplings(env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<EffectiveCouplings> {
    Ok(EffectiveCouplings {
        delta_mass: mass_renormalization(env, cpl)?,
        friction: friction_constant(env, cpl)?,
        d0: coordinate_decoherence(env, cpl)?,
        d2: velocity_decoherence(env, cpl)?,
    })
}

// ---------------------------------------------------------------------------
// build-up

/// Decoherence potential accumulated under the IR cutoff `e^{-t²/τ_IR²}`.
///
/// The Gaussian frequency window `e^{-τ_IR² ω² / 8}` is normalised to unit
/// weight, so the result tends to [`decoherence_potential`] with `V_q = g`
/// as `τ_IR → ∞`.
pub fn buildup_potential(spec: &BuildupSpec, env: &GasEnvironment, cpl: &TestParticleCoupling) -> Result<f64> {
    if spec.offset == 0.0 {
        return Ok(0.0);
    }
    let lt = env.thermal_wavelength();
    let v = spec.offset / lt;
    let u = env.u();
    let tau = spec.tau_ir * env.kt() / HBAR;

    let qt_max = (16.0 * PI * fermi_cutoff(u)).sqrt() + 4.0;
    let mut q_breaks = if v > 1.0 {
        quadcore::half_wave_breaks(qt_max * v, |phase| phase / v, 20_000)
    } else {
        Vec::new()
    };
    q_breaks.push(qt_max);
    let q_integrator = Integrator::new(Tolerance::new(1e-8, 0.0)).with_max_intervals(q_breaks.len() + 2000);
    let z_tol = Tolerance::relative(1e-10);

    let mut failure: Option<Error> = None;
    let mut spectral = |w: f64| -> f64 {
        let integrand = |qt: f64| {
            if failure.is_some() {
                return 0.0;
            }
            let pair = gmp_reduced(w, qt, u, z_tol).and_then(|a| Ok(a + gmp_reduced(-w, qt, u, z_tol)?));
            match pair {
                Ok(g) => qt * one_minus_sinc(qt * v) * g,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        };
        match q_integrator.semi_infinite_with_breaks(integrand, &q_breaks) {
            Ok(r) => r.value,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    // w-window: Gaussian of width 2/τ, plus the spectral width of G itself
    let w_scale = 2.0 / tau;
    let w_breaks: Vec<f64> = (1..=6).map(|k| k as f64 * w_scale).collect();
    let outer = Integrator::new(Tolerance::new(1e-6, 0.0))
        .semi_infinite_with_breaks(|w| (-tau * tau * w * w / 8.0).exp() * spectral(w), &w_breaks)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let g2 = cpl.coupling_strength.powi(2);
    let window = tau / (8.0 * PI).sqrt();
    Ok(potential_prefactor(env) * g2 * window * outer.value)
}

/// Build-up time estimate `|x^d| / v_T`.
pub fn buildup_time_estimate(offset: f64, env: &GasEnvironment) -> f64 {
    offset / env.thermal_velocity()
}
