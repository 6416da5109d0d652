//! Collisional decoherence of a test particle by independent scatterers.
//!
//! Amplitudes depend on the scattering angle only through `cos θ`, so the
//! double unit-sphere average collapses to a single `cos θ` integral. The
//! wavenumber `q` is used throughout; momentum is `ħq`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::constants::{C, HBAR, K_B};
use crate::error::{Error, Result};
use crate::quadcore::{half_wave_breaks, one_minus_sinc, riemann_zeta_int, sinc, Integrator, Tolerance};

pub type AmplitudeSq = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Speed entering the flux factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Flux {
    /// `ħq/m` for environment particles of mass `m`.
    Massive(f64),
    /// Speed of light.
    Massless,
}

impl Flux {
    pub fn speed(&self, q: f64) -> f64 {
        match *self {
            Flux::Massive(m) => HBAR * q / m,
            Flux::Massless => C,
        }
    }
}

/// Momentum distribution `ν(q)` of the environment, `∫ ν dq = n_g`.
#[derive(Clone)]
pub enum Density {
    /// All particles at wavenumber `q0`.
    Delta { q0: f64, n_g: f64 },
    /// Continuous density; `q_scale` sets the integration scale.
    Continuous { nu: DensityFn, q_scale: f64 },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Delta { q0, n_g } => f.debug_struct("Delta").field("q0", q0).field("n_g", n_g).finish(),
            Density::Continuous { q_scale, .. } => f.debug_struct("Continuous").field("q_scale", q_scale).finish(),
        }
    }
}

/// Planck density of photons, both polarizations: `(q²/π²) / (e^{ħcq/k_BT} - 1)`.
pub fn planck_density(temperature: f64) -> Density {
    let q_scale = K_B * temperature / (HBAR * C);
    Density::Continuous {
        nu: Arc::new(move |q: f64| {
            let x = q / q_scale;
            if x == 0.0 {
                0.0
            } else {
                q * q / (PI * PI) / x.exp_m1()
            }
        }),
        q_scale,
    }
}

#[derive(Clone)]
pub struct ScatteringModel {
    /// `|f(q n, q n')|²` as a function of `(q, cos θ)`, in m².
    pub amplitude_sq: AmplitudeSq,
    pub density: Density,
    pub flux: Flux,
}

impl fmt::Debug for ScatteringModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScatteringModel")
            .field("density", &self.density)
            .field("flux", &self.flux)
            .finish_non_exhaustive()
    }
}

impl ScatteringModel {
    pub fn new(amplitude_sq: AmplitudeSq, density: Density, flux: Flux) -> Result<Self> {
        match &density {
            Density::Delta { q0, n_g } => {
                if !(*q0 > 0.0) {
                    return Err(Error::NonPositiveMomentum(*q0));
                }
                if !(*n_g >= 0.0) {
                    return Err(Error::param("n_g", "must be non-negative"));
                }
            }
            Density::Continuous { q_scale, .. } => {
                if !(*q_scale > 0.0 && q_scale.is_finite()) {
                    return Err(Error::param("q_scale", "must be positive"));
                }
            }
        }
        if let Flux::Massive(m) = flux {
            if !(m > 0.0) {
                return Err(Error::UnphysicalMass(m));
            }
        }
        Ok(Self {
            amplitude_sq,
            density,
            flux,
        })
    }

    /// Hard sphere in the Born sense: `|f|² = a²`.
    pub fn isotropic(length: f64, density: Density, flux: Flux) -> Result<Self> {
        Self::new(Arc::new(move |_, _| length * length), density, flux)
    }

    /// Rayleigh scattering of unpolarized light off a dielectric sphere.
    pub fn rayleigh(sphere: DielectricSphere, density: Density) -> Result<Self> {
        let k = sphere.polarizability_factor();
        let a6 = sphere.radius.powi(6);
        Self::new(
            Arc::new(move |q: f64, c: f64| q.powi(4) * a6 * k * k * 0.5 * (1.0 + c * c)),
            density,
            Flux::Massless,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DielectricSphere {
    pub radius: f64,
    pub epsilon: f64,
}

impl DielectricSphere {
    pub fn new(radius: f64, epsilon: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::param("radius", "must be positive"));
        }
        if epsilon == -2.0 || !epsilon.is_finite() {
            return Err(Error::param("epsilon", "must be finite and differ from -2"));
        }
        Ok(Self { radius, epsilon })
    }

    /// `(ε - 1)/(ε + 2)`.
    pub fn polarizability_factor(&self) -> f64 {
        (self.epsilon - 1.0) / (self.epsilon + 2.0)
    }
}

fn angle_tol() -> Tolerance {
    Tolerance::new(1e-12, 0.0)
}

fn cos_integral<W: Fn(f64) -> f64>(q: f64, model: &ScatteringModel, weight: W) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositiveMomentum(q));
    }
    let amp = &model.amplitude_sq;
    Ok(Integrator::new(angle_tol()).finite(|c| weight(c) * amp(q, c), -1.0, 1.0)?.value)
}

/// `σ_eff = (2π/3) ∫ d cos θ (1 - cos θ) |f|²`.
pub fn effective_cross_section(q: f64, model: &ScatteringModel) -> Result<f64> {
    Ok(2.0 * PI / 3.0 * cos_integral(q, model, |c| 1.0 - c)?)
}

/// `σ_tot = 2π ∫ d cos θ |f|²`.
pub fn total_cross_section(q: f64, model: &ScatteringModel) -> Result<f64> {
    Ok(2.0 * PI * cos_integral(q, model, |_| 1.0)?)
}

/// `2π ∫ d cos θ [1 - sinc(q |n - n'| x)] |f|²`, with `|n - n'| = √(2(1 - cos θ))`.
/// Above this `qx` the oscillating angular part is taken from its asymptotic form.
const ASYMPTOTIC_QX: f64 = 1e4;

fn angular_average(q: f64, x: f64, model: &ScatteringModel) -> Result<f64> {
    let amp = &model.amplitude_sq;
    let qx = q * x;
    let g = |s: f64| amp(q, 1.0 - 0.5 * s * s);
    // s = |n - n'|, d cos θ = s ds on [0, 2]
    if qx <= PI {
        let integrand = |s: f64| s * one_minus_sinc(qx * s) * g(s);
        return Ok(2.0 * PI * Integrator::new(angle_tol()).finite(integrand, 0.0, 2.0)?.value);
    }
    // smooth part minus the oscillating sinc part
    let base = Integrator::new(angle_tol()).finite(|s| s * g(s), 0.0, 2.0)?.value;
    let osc = if qx > ASYMPTOTIC_QX {
        sinc_part_asymptotic(qx, g)
    } else {
        sinc_part_quadrature(qx, g, angle_tol().relative * base.abs())?
    };
    Ok(2.0 * PI * (base - osc))
}

/// `∫₀² ds s sinc(κs) g(s)` by quadrature over half-waves.
fn sinc_part_quadrature<G: Fn(f64) -> f64>(qx: f64, g: G, abs_tol: f64) -> Result<f64> {
    let breaks: Vec<f64> = half_wave_breaks(2.0 * qx, |phase| phase / qx, 100_000)
        .into_iter()
        .filter(|&b| b < 2.0)
        .collect();
    Ok(Integrator::new(Tolerance::new(angle_tol().relative, abs_tol))
        .with_max_intervals(breaks.len() + 2000)
        .finite_with_breaks(|s| s * sinc(qx * s) * g(s), 0.0, 2.0, &breaks)?
        .value)
}

/// Leading terms of the same integral from two integrations by parts.
fn sinc_part_asymptotic<G: Fn(f64) -> f64>(qx: f64, g: G) -> f64 {
    (g(0.0) - g(2.0) * (2.0 * qx).cos()) / (qx * qx)
}

/// `∫ dq ν(q) v(q) h(q)` for the model's density.
fn density_integral<H: FnMut(f64) -> Result<f64>>(model: &ScatteringModel, tol: Tolerance, mut h: H) -> Result<f64> {
    match &model.density {
        Density::Delta { q0, n_g } => Ok(n_g * model.flux.speed(*q0) * h(*q0)?),
        Density::Continuous { nu, q_scale } => {
            let mut failure = None;
            let integrand = |z: f64| {
                let q = q_scale * z;
                if q == 0.0 {
                    return 0.0;
                }
                let weight = nu(q);
                if weight == 0.0 {
                    return 0.0;
                }
                match h(q) {
                    Ok(v) => weight * model.flux.speed(q) * v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            };
            let r = Integrator::new(tol).semi_infinite(integrand)?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(q_scale * r.value)
        }
    }
}

/// Decoherence function `F(x)` in 1/s; depends on `|x|` only.
pub fn decoherence_function_f(x: f64, model: &ScatteringModel) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::param("x", "must be finite"));
    }
    let x = x.abs();
    if x == 0.0 {
        return Ok(0.0);
    }
    density_integral(model, Tolerance::new(1e-10, 0.0), |q| angular_average(q, x, model))
}

/// `Λ = ∫ dq ν(q) v(q) q² σ_eff(q)`, the small-x curvature `F(x) ≈ Λ x²`.
pub fn lambda_coefficient(model: &ScatteringModel) -> Result<f64> {
    let h = |q: f64| Ok(q * q * effective_cross_section(q, model)?);
    if let Density::Continuous { nu, q_scale } = &model.density {
        // power-law check of the tail: q·integrand must fall off
        let tail = |q: f64| -> Result<f64> { Ok(q * nu(q) * model.flux.speed(q) * h(q)?) };
        let t1 = tail(1e3 * q_scale)?;
        let t2 = tail(1e4 * q_scale)?;
        if !t1.is_finite() || !t2.is_finite() || (t1 > 0.0 && t2 >= t1) {
            return Err(Error::LambdaDivergent);
        }
    }
    match density_integral(model, Tolerance::new(1e-10, 0.0), h) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::NotConverged { .. }) => Err(Error::LambdaDivergent),
        Err(e) => Err(e),
    }
}

/// Saturated minimal decoherence time `1 / ∫ dq ν v σ_tot`.
pub fn min_decoherence_time(model: &ScatteringModel) -> Result<f64> {
    let rate = density_integral(model, Tolerance::new(1e-10, 0.0), |q| total_cross_section(q, model))?;
    if !(rate.is_finite()) {
        return Err(Error::LambdaDivergent);
    }
    Ok(1.0 / rate)
}

/// `8!`.
const FACTORIAL_8: f64 = 40_320.0;

/// Closed form `(8π/9) 8! ζ(9) a⁶ c ((ε-1)/(ε+2))² (k_BT/ħc)⁹`.
pub fn rayleigh_lambda(sphere: &DielectricSphere, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::param("temperature", "must be positive"));
    }
    let k = sphere.polarizability_factor();
    let zeta9 = riemann_zeta_int(9)?;
    Ok(8.0 * PI / 9.0
        * FACTORIAL_8
        * zeta9
        * sphere.radius.powi(6)
        * C
        * k
        * k
        * (K_B * temperature / (HBAR * C)).powi(9))
}

/// Ratio of the Planck-density quadrature of Λ to [`rayleigh_lambda`].
///
/// The printed closed form corresponds to a density `q²/(e^{ħcq/k_BT} - 1)`;
/// with the two-polarization Planck density of [`planck_density`] the
/// quadrature is smaller by `π²`.
pub const PLANCK_LAMBDA_CONSTANT: f64 = 1.0 / (PI * PI);

// ---------------------------------------------------------------------------
// applicability audit

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditInput {
    pub tau_sd: f64,
    pub temperature: f64,
    /// Mean separation of environment particles `r₀`.
    pub mean_separation: f64,
    /// Speed of environment particles `v_e`.
    pub env_speed: f64,
    /// Range of the test-particle/environment interaction `r_sc`.
    pub interaction_range: f64,
    /// Mean free path `ℓ₀`.
    pub mean_free_path: f64,
    /// Size of the test object `a`.
    pub object_size: f64,
    /// Phonon speed in the object `v_ph`.
    pub sound_speed: f64,
    /// `|ẋ^d|`.
    pub offset_velocity: f64,
}

impl AuditInput {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_sd", self.tau_sd),
            ("temperature", self.temperature),
            ("mean_separation", self.mean_separation),
            ("env_speed", self.env_speed),
            ("sound_speed", self.sound_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        let non_negative = [
            ("interaction_range", self.interaction_range),
            ("mean_free_path", self.mean_free_path),
            ("object_size", self.object_size),
            ("offset_velocity", self.offset_velocity),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// One inequality `lhs < rhs`; `margin = lhs / rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCondition {
    pub name: &'static str,
    pub inequality: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl AuditCondition {
    fn new(name: &'static str, inequality: &'static str, lhs: f64, rhs: f64) -> Self {
        let margin = lhs / rhs;
        Self {
            name,
            inequality,
            lhs,
            rhs,
            margin,
            pass: margin < 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub conditions: Vec<AuditCondition>,
    pub all_pass: bool,
}

impl AuditReport {
    pub fn get(&self, name: &str) -> Option<&AuditCondition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Checks the applicability conditions of the perturbative and collisional treatments.
pub fn applicability_audit(inp: &AuditInput) -> Result<AuditReport> {
    inp.validate()?;
    let collision_time = inp.mean_separation / inp.env_speed;
    let resolution = inp.mean_separation.max(inp.interaction_range) / inp.env_speed;
    let conditions = vec![
        AuditCondition::new(
            "perturbative",
            "hbar/(k_B T) < tau_sd",
            HBAR / (K_B * inp.temperature),
            inp.tau_sd,
        ),
        AuditCondition::new("collision_spacing", "r0/v_e < tau_sd", collision_time, inp.tau_sd),
        AuditCondition::new("time_resolution", "max(r0, r_sc)/v_e < tau_sd", resolution, inp.tau_sd),
        AuditCondition::new("single_scattering", "l0 < r0", inp.mean_free_path, inp.mean_separation),
        AuditCondition::new("rigid_object", "a/v_ph < tau_sd", inp.object_size / inp.sound_speed, inp.tau_sd),
        AuditCondition::new("static_offset", "|dx^d/dt| < v_e", inp.offset_velocity, inp.env_speed),
    ];
    let all_pass = conditions.iter().all(|c| c.pass);
    Ok(AuditReport { conditions, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    const M: f64 = 4.65e-26;

    fn delta_iso(a: f64, q0: f64, n_g: f64) -> ScatteringModel {
        ScatteringModel::isotropic(a, Density::Delta { q0, n_g }, Flux::Massive(M)).unwrap()
    }

    fn sphere() -> DielectricSphere {
        DielectricSphere::new(1e-7, 3.0).unwrap()
    }

    #[test]
    fn isotropic_cross_sections() {
        let a = 2e-10;
        let m = delta_iso(a, 1e10, 1e25);
        let se = effective_cross_section(1e10, &m).unwrap();
        let st = total_cross_section(1e10, &m).unwrap();
        assert!(rel(se, 4.0 * PI / 3.0 * a * a) < 1e-12);
        assert!(rel(st, 4.0 * PI * a * a) < 1e-12);
        assert!(rel(se / st, 1.0 / 3.0) < 1e-12);
        assert!(effective_cross_section(0.0, &m).is_err());
    }

    #[test]
    fn rayleigh_cross_sections() {
        let s = sphere();
        let m = ScatteringModel::rayleigh(s, Density::Delta { q0: 1e6, n_g: 1.0 }).unwrap();
        let k = s.polarizability_factor();
        for q in [1e5f64, 1e6, 3e6] {
            let base = q.powi(4) * s.radius.powi(6) * k * k;
            assert!(rel(effective_cross_section(q, &m).unwrap(), 8.0 * PI / 9.0 * base) < 1e-10);
            assert!(rel(total_cross_section(q, &m).unwrap(), 8.0 * PI / 3.0 * base) < 1e-10);
        }
    }

    #[test]
    fn forward_peaked_has_small_effective_section() {
        let width: f64 = 1e-4;
        let m = ScatteringModel::new(
            Arc::new(move |_, c: f64| (-(1.0 - c) / width).exp()),
            Density::Delta { q0: 1.0, n_g: 1.0 },
            Flux::Massless,
        )
        .unwrap();
        let se = effective_cross_section(1.0, &m).unwrap();
        let st = total_cross_section(1.0, &m).unwrap();
        assert!(se / st < 1e-3);
    }

    proptest! {
        #[test]
        fn effective_bounded_by_total(p in 0.0f64..6.0, b in 0.0f64..3.0) {
            let m = ScatteringModel::new(
                Arc::new(move |_, c: f64| (1.0 + c).powf(p) + b * (1.0 - c) * (1.0 - c)),
                Density::Delta { q0: 1.0, n_g: 1.0 },
                Flux::Massless,
            ).unwrap();
            let amp = m.amplitude_sq.clone();
            let tol = Tolerance::new(1e-12, 0.0);
            let weighted = Integrator::new(tol).finite(|c| (1.0 - c) * amp(1.0, c), -1.0, 1.0).unwrap().value;
            let plain = Integrator::new(tol).finite(|c| amp(1.0, c), -1.0, 1.0).unwrap().value;
            prop_assert!(weighted <= 2.0 * plain * (1.0 + 1e-12));
        }
    }

    #[test]
    fn delta_collapse_identities() {
        let (a, q0, n_g) = (3e-10, 2e10, 2.5e25);
        let m = delta_iso(a, q0, n_g);
        let v = HBAR * q0 / M;
        let lam = lambda_coefficient(&m).unwrap();
        assert!(rel(lam, n_g * v * q0 * q0 * 4.0 * PI / 3.0 * a * a) < 1e-10);
        let tau = min_decoherence_time(&m).unwrap();
        assert!(rel(tau, M / (n_g * HBAR * q0 * 4.0 * PI * a * a)) < 1e-10);
        let doubled = delta_iso(a, q0, 2.0 * n_g);
        assert!(rel(min_decoherence_time(&doubled).unwrap(), tau / 2.0) < 1e-14);
    }

    #[test]
    fn decoherence_function_limits() {
        let (a, q0) = (3e-10, 2e10);
        let m = delta_iso(a, q0, 1e25);
        assert_eq!(decoherence_function_f(0.0, &m).unwrap(), 0.0);
        let lam = lambda_coefficient(&m).unwrap();
        let x = 0.01 / q0;
        assert!(rel(decoherence_function_f(x, &m).unwrap() / (x * x), lam) < 0.01);
        let sat = decoherence_function_f(100.0 / q0, &m).unwrap();
        assert!(rel(sat * min_decoherence_time(&m).unwrap(), 1.0) < 0.02);
        let neg = decoherence_function_f(-3.0 / q0, &m).unwrap();
        assert_eq!(neg, decoherence_function_f(3.0 / q0, &m).unwrap());
    }

    #[test]
    fn decoherence_function_monotone() {
        let q0 = 1e6;
        let models = [
            delta_iso(1e-9, q0, 1.0),
            ScatteringModel::rayleigh(sphere(), Density::Delta { q0, n_g: 1.0 }).unwrap(),
        ];
        for m in &models {
            let mut prev = 0.0f64;
            // up to the first saturation of 1 - sinc(2 q x)
            for k in 1..=60 {
                let x = k as f64 * 0.05 / q0;
                let f = decoherence_function_f(x, m).unwrap();
                assert!(f >= prev - 1e-9 * prev.abs(), "x q = {}", x * q0);
                prev = f;
            }
        }
    }

    #[test]
    fn planck_lambda_matches_closed_form() {
        let s = sphere();
        let t = 300.0;
        let m = ScatteringModel::rayleigh(s, planck_density(t)).unwrap();
        let quad = lambda_coefficient(&m).unwrap();
        let closed = rayleigh_lambda(&s, t).unwrap();
        assert!(rel(quad / closed, PLANCK_LAMBDA_CONSTANT) < 1e-8);
    }

    #[test]
    fn lambda_scales_with_radius() {
        let t = 10.0;
        let small = DielectricSphere::new(1e-8, 5.0).unwrap();
        let big = DielectricSphere::new(2e-8, 5.0).unwrap();
        let l1 = lambda_coefficient(&ScatteringModel::rayleigh(small, planck_density(t)).unwrap()).unwrap();
        let l2 = lambda_coefficient(&ScatteringModel::rayleigh(big, planck_density(t)).unwrap()).unwrap();
        assert!(rel(l2 / l1, 64.0) < 1e-9);
    }

    #[test]
    fn divergent_lambda_is_reported() {
        let m = ScatteringModel::rayleigh(
            sphere(),
            Density::Continuous {
                nu: Arc::new(|q: f64| 1.0 / (1.0 + q.powi(4))),
                q_scale: 1.0,
            },
        )
        .unwrap();
        let err = lambda_coefficient(&m).unwrap_err();
        assert!(err.to_string().contains("Λ integral diverges"));
    }

    #[test]
    fn rayleigh_closed_form() {
        let s = sphere();
        let l1 = rayleigh_lambda(&s, 10.0).unwrap();
        let l2 = rayleigh_lambda(&s, 20.0).unwrap();
        assert!(rel(l2 / l1, 512.0) < 1e-14);
        let vacuum = DielectricSphere::new(1e-7, 1.0).unwrap();
        assert_eq!(rayleigh_lambda(&vacuum, 10.0).unwrap(), 0.0);
        let z9 = riemann_zeta_int(9).unwrap();
        assert!((z9 - 1.002_008).abs() < 1e-6);
        assert!((FACTORIAL_8 * z9 - 40_401.0).abs() < 0.1);
        assert!(DielectricSphere::new(1e-7, -2.0).is_err());
    }

    fn slack() -> AuditInput {
        AuditInput {
            tau_sd: 1.0,
            temperature: 300.0,
            mean_separation: 1e-9,
            env_speed: 1e3,
            interaction_range: 1e-10,
            mean_free_path: 1e-10,
            object_size: 1e-9,
            sound_speed: 1e3,
            offset_velocity: 1e-3,
        }
    }

    #[test]
    fn audit_all_slack() {
        let r = applicability_audit(&slack()).unwrap();
        assert!(r.all_pass);
        assert_eq!(r.conditions.len(), 6);
    }

    #[test]
    fn audit_air_and_photon_bounds() {
        let air = AuditInput {
            mean_separation: 3e-9,
            env_speed: 1e3,
            ..slack()
        };
        let r = applicability_audit(&air).unwrap();
        assert!(rel(r.get("collision_spacing").unwrap().lhs, 3e-12) < 1e-12);

        let t = 1.0;
        let photon = AuditInput {
            temperature: t,
            mean_separation: HBAR * C / (K_B * t),
            env_speed: C,
            ..slack()
        };
        let r = applicability_audit(&photon).unwrap();
        let pert = r.get("perturbative").unwrap().lhs;
        assert!(pert > 0.5e-11 && pert < 2e-11);
        assert!(rel(r.get("collision_spacing").unwrap().lhs, pert) < 1e-14);

        let tight = AuditInput { tau_sd: 1e-13, ..air };
        let r = applicability_audit(&tight).unwrap();
        assert!(!r.all_pass);
        assert!(r.get("collision_spacing").unwrap().margin > 1.0);
    }

    #[test]
    fn sinc_part_asymptotic_matches_quadrature() {
        let g = |s: f64| 0.5 * (1.0 + (1.0 - 0.5 * s * s).powi(2));
        for qx in [1.2e4, 3.7e4] {
            let direct = sinc_part_quadrature(qx, g, 1e-15).unwrap();
            let asym = sinc_part_asymptotic(qx, g);
            // both are O(1/κ²); agreement to O(1/κ³)
            assert!((direct - asym).abs() < 10.0 / qx.powi(3), "{qx}: {direct} vs {asym}");
        }
    }
}
