//! One-dimensional density matrix `ρ(x, x^d)` under the effective master equation
//!
//! ```text
//! ∂_t ρ = [ iħ/m_eff ∂∂_d - (i/ħ)(U(x⁺) - U(x⁻)) - U_deff(x^d)/ħ
//!           + i f x^d ∂ - f_d x^d ∂_d + g ∂² + g_d ∂_d² ] ρ
//! ```
//!
//! with `x^± = x ± x^d/2`. The effective parameters are frozen at their
//! `x^d = 0` values. The friction drift `-f_d x^d ∂_d` is real, which is the
//! coordinate form of `-(ik/2mħ)[x, {p, ρ}]` and keeps `ρ` Hermitian.
//!
//! Only the `x^d >= 0` half of the grid is evolved; the other half is its
//! conjugate mirror. Values outside the grid are zero.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::HBAR;
use crate::error::{Error, Result};

pub type Potential = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Edge amplitudes above this fraction of the peak invalidate a run.
pub const EDGE_LIMIT: f64 = 1e-8;

/// Density matrix on a uniform `(x, x^d)` grid; `x^d` is symmetric about zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixGrid {
    x: Vec<f64>,
    xd: Vec<f64>,
    dx: f64,
    dd: f64,
    /// Row-major, `x^d` fastest.
    values: Vec<Complex64>,
    pub time: f64,
}

impl DensityMatrixGrid {
    /// Zero matrix on `x ∈ [x_min, x_max]` (`nx` points) and `x^d ∈ [-xd_max, xd_max]` (`nd` points, odd).
    pub fn zeros(x_min: f64, x_max: f64, nx: usize, xd_max: f64, nd: usize) -> Result<Self> {
        if nx < 3 || !(x_max > x_min) {
            return Err(Error::param("x grid", "need at least 3 points on a non-empty interval"));
        }
        if nd < 3 || nd.is_multiple_of(2) || !(xd_max > 0.0) {
            return Err(Error::param("xd grid", "need an odd number (>= 3) of points on a symmetric interval"));
        }
        let dx = (x_max - x_min) / (nx - 1) as f64;
        let dd = 2.0 * xd_max / (nd - 1) as f64;
        let half = (nd / 2) as isize;
        Ok(Self {
            x: (0..nx).map(|i| x_min + i as f64 * dx).collect(),
            xd: (0..nd).map(|j| (j as isize - half) as f64 * dd).collect(),
            dx,
            dd,
            values: vec![Complex64::new(0.0, 0.0); nx * nd],
            time: 0.0,
        })
    }

    /// Fills `ρ(x, x^d)` from `f` on `x^d >= 0` and mirrors the rest.
    pub fn from_fn<F: Fn(f64, f64) -> Complex64>(
        x_min: f64,
        x_max: f64,
        nx: usize,
        xd_max: f64,
        nd: usize,
        f: F,
    ) -> Result<Self> {
        let mut g = Self::zeros(x_min, x_max, nx, xd_max, nd)?;
        let c = g.center();
        for i in 0..nx {
            for j in c..nd {
                let mut v = f(g.x[i], g.xd[j]);
                if j == c {
                    v.im = 0.0;
                }
                g.values[i * nd + j] = v;
                g.values[i * nd + 2 * c - j] = v.conj();
            }
        }
        Ok(g)
    }

    #[allow(clippy::too_many_arguments)]
    /// Pure Gaussian wave packet `ψ(x⁺) ψ*(x⁻)` with `|ψ|²` of width `sigma`,
    /// centre `x0` and mean wavenumber `k0`, normalised to unit trace.
    pub fn gaussian(
        x_min: f64,
        x_max: f64,
        nx: usize,
        xd_max: f64,
        nd: usize,
        x0: f64,
        sigma: f64,
        k0: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::param("sigma", "must be positive"));
        }
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt();
        Self::from_fn(x_min, x_max, nx, xd_max, nd, |x, xd| {
            let xp = x + 0.5 * xd - x0;
            let xm = x - 0.5 * xd - x0;
            let amp = norm * (-(xp * xp + xm * xm) / (4.0 * sigma * sigma)).exp();
            Complex64::from_polar(amp, k0 * xd)
        })
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nd(&self) -> usize {
        self.xd.len()
    }

    pub fn x_axis(&self) -> &[f64] {
        &self.x
    }

    pub fn xd_axis(&self) -> &[f64] {
        &self.xd
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dd(&self) -> f64 {
        self.dd
    }

    /// Index of `x^d = 0`.
    pub fn center(&self) -> usize {
        self.xd.len() / 2
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.nd() + j]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Diagonal `ρ(x, 0)`.
    pub fn diagonal(&self) -> Vec<f64> {
        let c = self.center();
        (0..self.nx()).map(|i| self.get(i, c).re).collect()
    }

    /// `Δx Σ_x ρ(x, 0)`.
    pub fn trace(&self) -> Complex64 {
        let c = self.center();
        let s: Complex64 = (0..self.nx()).map(|i| self.get(i, c)).sum();
        s * self.dx
    }

    /// `max |ρ(x, -x^d) - conj ρ(x, x^d)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let (nd, c) = (self.nd(), self.center());
        let mut worst = 0.0f64;
        for i in 0..self.nx() {
            for j in c..nd {
                let d = self.get(i, 2 * c - j) - self.get(i, j).conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Largest `|ρ|` on the grid boundary relative to the peak.
    pub fn edge_ratio(&self) -> f64 {
        let (nx, nd) = (self.nx(), self.nd());
        let peak = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge = 0.0f64;
        for i in 0..nx {
            edge = edge.max(self.get(i, 0).norm()).max(self.get(i, nd - 1).norm());
        }
        for j in 0..nd {
            edge = edge.max(self.get(0, j).norm()).max(self.get(nx - 1, j).norm());
        }
        edge / peak
    }

    /// `⟨x⟩` and `⟨x²⟩ - ⟨x⟩²` from the diagonal.
    pub fn position_moments(&self) -> (f64, f64) {
        let diag = self.diagonal();
        let norm: f64 = diag.iter().sum();
        let mean = diag.iter().zip(&self.x).map(|(p, x)| p * x).sum::<f64>() / norm;
        let var = diag.iter().zip(&self.x).map(|(p, x)| p * (x - mean).powi(2)).sum::<f64>() / norm;
        (mean, var)
    }

    /// Full width at half maximum of `|ρ(x*, ·)|` along `x^d`, at the `x*` of the largest diagonal value.
    pub fn coherence_length(&self) -> f64 {
        let diag = self.diagonal();
        let i = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let row: Vec<f64> = (0..self.nd()).map(|j| self.get(i, j).norm()).collect();
        let c = self.center();
        let half = 0.5 * row[c];
        if half == 0.0 {
            return 0.0;
        }
        // walk outwards on the x^d >= 0 side; the profile is symmetric
        for j in c + 1..self.nd() {
            if row[j] <= half {
                let t = (row[j - 1] - half) / (row[j - 1] - row[j]);
                let xd = self.xd[j - 1] + t * self.dd;
                return 2.0 * xd;
            }
        }
        2.0 * self.xd[self.nd() - 1]
    }

    /// Smallest `ρ(x, 0)`; negative values flag loss of positivity.
    pub fn min_diagonal(&self) -> f64 {
        self.diagonal().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Writes `x, xd, re, im` rows and a TOML sidecar next to `path`.
    pub fn write_snapshot<M: Serialize>(&self, path: &Path, model: &M) -> Result<PathBuf> {
        let io = |e: std::io::Error| Error::param("snapshot", e.to_string());
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(w, "x,xd,re,im").map_err(io)?;
        for i in 0..self.nx() {
            for j in 0..self.nd() {
                let v = self.get(i, j);
                writeln!(w, "{:.11e},{:.11e},{:.11e},{:.11e}", self.x[i], self.xd[j], v.re, v.im).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        let meta = SnapshotMeta {
            nx: self.nx(),
            nd: self.nd(),
            x_min: self.x[0],
            dx: self.dx,
            xd_max: self.xd[self.nd() - 1],
            dd: self.dd,
            time: self.time,
            model,
        };
        let sidecar = path.with_extension("toml");
        let text = toml::to_string(&meta).map_err(|e| Error::param("snapshot", e.to_string()))?;
        fs::write(&sidecar, text).map_err(io)?;
        Ok(sidecar)
    }
}

#[derive(Serialize)]
struct SnapshotMeta<'a, M: Serialize> {
    nx: usize,
    nd: usize,
    x_min: f64,
    dx: f64,
    xd_max: f64,
    dd: f64,
    time: f64,
    model: &'a M,
}

/// Physical parameters of the frozen-coefficient model.
#[derive(Clone)]
pub struct EffectiveModel {
    pub mass: f64,
    pub friction: f64,
    pub q_coeff: f64,
    pub r_coeff: f64,
    pub decoherence_potential: Potential,
    pub external_potential: Potential,
}

impl fmt::Debug for EffectiveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EffectiveModel")
            .field("mass", &self.mass)
            .field("friction", &self.friction)
            .field("q_coeff", &self.q_coeff)
            .field("r_coeff", &self.r_coeff)
            .finish_non_exhaustive()
    }
}

impl EffectiveModel {
    /// Free particle: no environment, no external potential.
    pub fn free(mass: f64) -> Self {
        Self {
            mass,
            friction: 0.0,
            q_coeff: 0.0,
            r_coeff: 0.0,
            decoherence_potential: Arc::new(|_| 0.0),
            external_potential: Arc::new(|_| 0.0),
        }
    }
}

/// Coefficients of the master equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MasterCoefficients {
    /// Bare mass, used by the energy observable.
    pub mass: f64,
    pub mass_eff: f64,
    /// `1/m_eff`; zero disables the kinetic term.
    pub inv_mass_eff: f64,
    pub f: f64,
    pub f_d: f64,
    pub g: f64,
    pub g_d: f64,
    /// `k² q / 2(m² + qr)`, subtracted as `· x^{d2}` from `U_d`.
    pub quadratic_correction: f64,
}

/// `m_eff = m + rq/m`, `f = kq/(m m_eff)`, `f_d = k/m_eff`,
/// `g = ħq/(2m m_eff)`, `g_d = ħr/(2m m_eff)`.
pub fn coefficients_from_couplings(m: f64, k: f64, q: f64, r: f64) -> Result<MasterCoefficients> {
    if !(m > 0.0) {
        return Err(Error::UnphysicalMass(m));
    }
    let mass_eff = m + r * q / m;
    if !(mass_eff > 0.0) {
        return Err(Error::UnphysicalMass(mass_eff));
    }
    let denom = m * m + q * r;
    Ok(MasterCoefficients {
        mass: m,
        mass_eff,
        inv_mass_eff: 1.0 / mass_eff,
        f: k * q / (m * mass_eff),
        f_d: k / mass_eff,
        g: HBAR * q / (2.0 * m * mass_eff),
        g_d: HBAR * r / (2.0 * m * mass_eff),
        quadratic_correction: if q == 0.0 { 0.0 } else { k * k * q / (2.0 * denom) },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Explicit midpoint on the full right-hand side.
    ExplicitRk2,
    /// Strang splitting: exact pointwise potential factor around a midpoint step of the differential part.
    OperatorSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolveConfig {
    pub dt: f64,
    pub steps: usize,
    pub scheme: Scheme,
}

/// Master equation with coefficients and potentials fixed.
#[derive(Clone)]
pub struct MasterEquation {
    pub coefficients: MasterCoefficients,
    pub external_potential: Potential,
    pub decoherence_potential: Potential,
}

impl fmt::Debug for MasterEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterEquation")
            .field("coefficients", &self.coefficients)
            .finish_non_exhaustive()
    }
}

impl MasterEquation {
    pub fn from_model(model: &EffectiveModel) -> Result<Self> {
        Ok(Self {
            coefficients: coefficients_from_couplings(model.mass, model.friction, model.q_coeff, model.r_coeff)?,
            external_potential: model.external_potential.clone(),
            decoherence_potential: model.decoherence_potential.clone(),
        })
    }

    /// `U_deff(x^d) = U_d(|x^d|) - k²q x^{d2} / 2(m² + qr)`.
    pub fn effective_decoherence_potential(&self, xd: f64) -> f64 {
        (self.decoherence_potential)(xd.abs()) - self.coefficients.quadratic_correction * xd * xd
    }

    /// Pointwise rate `-(i/ħ)(U(x⁺) - U(x⁻)) - U_deff(x^d)/ħ` on the `x^d >= 0` half.
    fn potential_rates(&self, grid: &DensityMatrixGrid) -> Vec<Complex64> {
        let (nx, nd, c) = (grid.nx(), grid.nd(), grid.center());
        let half = nd - c;
        let mut out = vec![Complex64::new(0.0, 0.0); nx * half];
        for i in 0..nx {
            for jj in 0..half {
                let x = grid.x[i];
                let xd = grid.xd[c + jj];
                let du = (self.external_potential)(x + 0.5 * xd) - (self.external_potential)(x - 0.5 * xd);
                let ud = if jj == 0 { 0.0 } else { self.effective_decoherence_potential(xd) };
                out[i * half + jj] = Complex64::new(-ud / HBAR, -du / HBAR);
            }
        }
        out
    }

    /// Largest stable step for `scheme` on `grid`.
    pub fn stability_bound(&self, grid: &DensityMatrixGrid, scheme: Scheme) -> f64 {
        let co = &self.coefficients;
        let (dx, dd) = (grid.dx, grid.dd);
        let xd_max = grid.xd[grid.nd() - 1];
        let mut bound = f64::INFINITY;
        if co.inv_mass_eff > 0.0 {
            bound = bound.min(0.25 * dx.min(dd).powi(2) / (HBAR * co.inv_mass_eff));
        }
        if co.g > 0.0 {
            bound = bound.min(0.25 * dx * dx / co.g);
        }
        if co.g_d > 0.0 {
            bound = bound.min(0.25 * dd * dd / co.g_d);
        }
        let advection = co.f.abs() * xd_max / dx + co.f_d.abs() * xd_max / dd;
        if advection > 0.0 {
            bound = bound.min(0.5 / advection);
        }
        if scheme == Scheme::ExplicitRk2 {
            let rate = self.potential_rates(grid).iter().map(|r| r.norm()).fold(0.0, f64::max);
            if rate > 0.0 {
                bound = bound.min(1.0 / rate);
            }
        }
        bound
    }

    /// Differential part of the right-hand side on the `x^d >= 0` half, mirrored.
    fn differential(&self, rho: &[Complex64], grid: &DensityMatrixGrid, pot: Option<&[Complex64]>, out: &mut [Complex64]) {
        let co = self.coefficients;
        let (nx, nd, c) = (grid.nx(), grid.nd(), grid.center());
        let half = nd - c;
        let (dx, dd) = (grid.dx, grid.dd);
        let i_unit = Complex64::new(0.0, 1.0);
        let kin = i_unit * (HBAR * co.inv_mass_eff / (4.0 * dx * dd));
        let at = |i: isize, j: isize| -> Complex64 {
            if i < 0 || j < 0 || i >= nx as isize || j >= nd as isize {
                Complex64::new(0.0, 0.0)
            } else {
                rho[i as usize * nd + j as usize]
            }
        };
        out.par_chunks_mut(nd).enumerate().for_each(|(i, row)| {
            let ii = i as isize;
            for jj in 0..half {
                let j = (c + jj) as isize;
                let xd = grid.xd[c + jj];
                let v = at(ii, j);
                let mixed = at(ii + 1, j + 1) - at(ii + 1, j - 1) - at(ii - 1, j + 1) + at(ii - 1, j - 1);
                let d_x = (at(ii + 1, j) - at(ii - 1, j)) / (2.0 * dx);
                let d_d = (at(ii, j + 1) - at(ii, j - 1)) / (2.0 * dd);
                let dxx = (at(ii + 1, j) - 2.0 * v + at(ii - 1, j)) / (dx * dx);
                let ddd = (at(ii, j + 1) - 2.0 * v + at(ii, j - 1)) / (dd * dd);
                let mut r = kin * mixed + i_unit * (co.f * xd) * d_x - co.f_d * xd * d_d + co.g * dxx + co.g_d * ddd;
                if let Some(p) = pot {
                    r += p[i * half + jj] * v;
                }
                if jj == 0 {
                    r.im = 0.0;
                }
                row[c + jj] = r;
                row[c - jj] = r.conj();
            }
        });
    }

    fn check_step(&self, grid: &DensityMatrixGrid, dt: f64, scheme: Scheme) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        let bound = self.stability_bound(grid, scheme);
        if dt > bound {
            return Err(Error::StabilityViolation { dt, bound });
        }
        Ok(())
    }

    /// One step of length `dt`.
    pub fn step(&self, grid: &DensityMatrixGrid, dt: f64, scheme: Scheme) -> Result<DensityMatrixGrid> {
        self.check_step(grid, dt, scheme)?;
        let pot = self.potential_rates(grid);
        Ok(self.step_unchecked(grid, dt, scheme, &pot))
    }

    fn step_unchecked(&self, grid: &DensityMatrixGrid, dt: f64, scheme: Scheme, pot: &[Complex64]) -> DensityMatrixGrid {
        let n = grid.values.len();
        let mut k = vec![Complex64::new(0.0, 0.0); n];
        let mut next = grid.clone();
        match scheme {
            Scheme::ExplicitRk2 => {
                self.midpoint(&mut next.values, grid, dt, Some(pot), &mut k);
            }
            Scheme::OperatorSplit => {
                self.apply_potential(&mut next.values, grid, pot, 0.5 * dt);
                self.midpoint(&mut next.values, grid, dt, None, &mut k);
                self.apply_potential(&mut next.values, grid, pot, 0.5 * dt);
            }
        }
        next.time = grid.time + dt;
        next
    }

    fn midpoint(&self, values: &mut [Complex64], grid: &DensityMatrixGrid, dt: f64, pot: Option<&[Complex64]>, k: &mut [Complex64]) {
        self.differential(values, grid, pot, k);
        let mid: Vec<Complex64> = values.iter().zip(k.iter()).map(|(v, d)| v + d * (0.5 * dt)).collect();
        self.differential(&mid, grid, pot, k);
        for (v, d) in values.iter_mut().zip(k.iter()) {
            *v += d * dt;
        }
    }

    fn apply_potential(&self, values: &mut [Complex64], grid: &DensityMatrixGrid, pot: &[Complex64], tau: f64) {
        let (nx, nd, c) = (grid.nx(), grid.nd(), grid.center());
        let half = nd - c;
        for i in 0..nx {
            for jj in 0..half {
                let factor = (pot[i * half + jj] * tau).exp();
                let v = values[i * nd + c + jj] * factor;
                values[i * nd + c + jj] = v;
                values[i * nd + c - jj] = v.conj();
            }
        }
    }

    /// `-(ħ²/2m) Δx Σ ∂_d²ρ(x, 0) + Δx Σ U(x) ρ(x, 0)`.
    pub fn energy(&self, grid: &DensityMatrixGrid) -> f64 {
        let (c, dd) = (grid.center(), grid.dd);
        let m = self.coefficients.mass;
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for i in 0..grid.nx() {
            let curv = (grid.get(i, c + 1) - 2.0 * grid.get(i, c) + grid.get(i, c - 1)).re / (dd * dd);
            kinetic += -HBAR * HBAR / (2.0 * m) * curv;
            potential += (self.external_potential)(grid.x[i]) * grid.get(i, c).re;
        }
        (kinetic + potential) * grid.dx
    }

    pub fn observe(&self, grid: &DensityMatrixGrid) -> Observables {
        Observables {
            time: grid.time,
            trace: grid.trace().re,
            coherence_length: grid.coherence_length(),
            energy: self.energy(grid),
            min_diagonal: grid.min_diagonal(),
        }
    }

    /// Runs `cfg.steps` steps, recording observables after each one.
    pub fn evolve(&self, grid: &DensityMatrixGrid, cfg: &EvolveConfig) -> Result<Evolution> {
        self.evolve_with(grid, cfg, |_| {})
    }

    /// As [`evolve`](Self::evolve), calling `on_step` with each new state.
    pub fn evolve_with<F: FnMut(&DensityMatrixGrid)>(
        &self,
        grid: &DensityMatrixGrid,
        cfg: &EvolveConfig,
        mut on_step: F,
    ) -> Result<Evolution> {
        let mut observables = Vec::with_capacity(cfg.steps);
        if cfg.steps == 0 {
            return Ok(Evolution {
                grid: grid.clone(),
                observables,
            });
        }
        self.check_step(grid, cfg.dt, cfg.scheme)?;
        let pot = self.potential_rates(grid);
        let mut current = grid.clone();
        for _ in 0..cfg.steps {
            current = self.step_unchecked(&current, cfg.dt, cfg.scheme, &pot);
            let ratio = current.edge_ratio();
            if ratio > EDGE_LIMIT {
                return Err(Error::EdgeAmplitude { ratio, limit: EDGE_LIMIT });
            }
            on_step(&current);
            observables.push(self.observe(&current));
        }
        Ok(Evolution {
            grid: current,
            observables,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub time: f64,
    pub trace: f64,
    pub coherence_length: f64,
    pub energy: f64,
    pub min_diagonal: f64,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub grid: DensityMatrixGrid,
    pub observables: Vec<Observables>,
}

/// One explicit midpoint step of the model.
pub fn step(grid: &DensityMatrixGrid, model: &EffectiveModel, dt: f64) -> Result<DensityMatrixGrid> {
    MasterEquation::from_model(model)?.step(grid, dt, Scheme::ExplicitRk2)
}

pub fn evolve(grid: &DensityMatrixGrid, model: &EffectiveModel, cfg: &EvolveConfig) -> Result<Evolution> {
    MasterEquation::from_model(model)?.evolve(grid, cfg)
}

/// `ρ(x, x^d; t) = ρ₀(x, x^d) e^{-F(x^d) t}`.
pub fn stationary_decay<F: Fn(f64) -> f64>(rho0: &DensityMatrixGrid, rate: F, t: f64) -> Result<DensityMatrixGrid> {
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be non-negative"));
    }
    let at_zero = rate(0.0);
    if at_zero != 0.0 {
        return Err(Error::DiagonalDecoherence(at_zero));
    }
    let mut out = rho0.clone();
    let nd = out.nd();
    for (idx, v) in out.values.iter_mut().enumerate() {
        let xd = out.xd[idx % nd];
        *v *= (-rate(xd) * t).exp();
    }
    out.time = rho0.time + t;
    Ok(out)
}

/// Second moments of the short-time Gaussian kernel
/// `exp[(2i m y y^d - q y^{d2} - r y²) / 2ħΔt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelVariances {
    pub y2: f64,
    pub yd2: f64,
    /// Purely imaginary: `i m ħΔt / (m² + qr)`.
    pub y_yd: Complex64,
}

impl KernelVariances {
    /// `|⟨y y^d⟩| = m ħΔt / (m² + qr)`.
    pub fn cross_magnitude(&self) -> f64 {
        self.y_yd.norm()
    }
}

pub fn kernel_variances(m: f64, q: f64, r: f64, dt: f64) -> Result<KernelVariances> {
    if !(m > 0.0) {
        return Err(Error::UnphysicalMass(m));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidStep(dt));
    }
    let scale = HBAR * dt / (m * m + q * r);
    Ok(KernelVariances {
        y2: q * scale,
        yd2: r * scale,
        y_yd: Complex64::new(0.0, m * scale),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadcore::{Integrator, Tolerance};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Mass with `ħ/m = 1`, so lengths and times can be chosen O(1).
    const M: f64 = HBAR;

    fn free_eq() -> MasterEquation {
        MasterEquation::from_model(&EffectiveModel::free(M)).unwrap()
    }

    /// Repeated steps without the edge check, for grids narrow along one axis.
    fn run(eq: &MasterEquation, g: &DensityMatrixGrid, dt: f64, n: usize, scheme: Scheme) -> DensityMatrixGrid {
        (0..n).fold(g.clone(), |cur, _| eq.step(&cur, dt, scheme).unwrap())
    }

    fn packet() -> DensityMatrixGrid {
        DensityMatrixGrid::gaussian(-12.0, 12.0, 241, 20.0, 401, 0.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let c = coefficients_from_couplings(2.0, 0.3, 0.5, 0.0).unwrap();
        assert_eq!(c.mass_eff, 2.0);
        assert_eq!(c.g_d, 0.0);
        let c = coefficients_from_couplings(2.0, 0.3, 0.0, 0.0).unwrap();
        assert_eq!((c.f, c.g, c.g_d, c.quadratic_correction), (0.0, 0.0, 0.0, 0.0));
        let c = coefficients_from_couplings(2.0, 0.3, 0.7, 0.7).unwrap();
        assert!(rel(c.g, c.g_d) < 1e-15);
        let err = coefficients_from_couplings(1.0, 0.0, 2.0, -1.0).unwrap_err();
        assert!(err.to_string().contains("unphysical effective mass"));
    }

    #[test]
    fn gaussian_is_hermitian_and_normalised() {
        let g = packet();
        assert_eq!(g.hermiticity_error(), 0.0);
        assert!((g.trace().re - 1.0).abs() < 1e-10);
        assert_eq!(g.trace().im, 0.0);
        assert!(g.edge_ratio() < EDGE_LIMIT);
    }

    #[test]
    fn free_spreading_law() {
        let eq = free_eq();
        let g = packet();
        let dt = 2e-3;
        let steps = 1000;
        let out = eq
            .evolve(&g, &EvolveConfig { dt, steps, scheme: Scheme::ExplicitRk2 })
            .unwrap();
        let t = dt * steps as f64;
        let (_, var) = out.grid.position_moments();
        // σ² (1 + (ħt / 2mσ²)²) with σ = 1, ħ/m = 1
        let expected = 1.0 + (t / 2.0).powi(2);
        assert!(rel(var, expected) < 0.005, "{var} vs {expected}");
        assert!(out.grid.hermiticity_error() < 1e-12);
    }

    #[test]
    fn rk2_order() {
        let eq = free_eq();
        let g = DensityMatrixGrid::gaussian(-10.0, 10.0, 101, 14.0, 141, 0.0, 1.0, 0.5).unwrap();
        let t = 0.2;
        let run = |n: usize| {
            eq.evolve(&g, &EvolveConfig { dt: t / n as f64, steps: n, scheme: Scheme::ExplicitRk2 })
                .unwrap()
                .grid
        };
        let reference = run(640);
        let err = |a: &DensityMatrixGrid| {
            a.values().iter().zip(reference.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
        };
        let e1 = err(&run(20));
        let e2 = err(&run(40));
        let factor = e1 / e2;
        assert!((factor - 4.0).abs() <= 0.8, "factor {factor}");
    }

    #[test]
    fn trace_is_preserved() {
        let model = EffectiveModel {
            mass: M,
            friction: 0.05 * M,
            q_coeff: 0.2 * M,
            r_coeff: 0.0,
            decoherence_potential: Arc::new(|xd| 0.02 * HBAR * xd * xd),
            external_potential: Arc::new(|_| 0.0),
        };
        let eq = MasterEquation::from_model(&model).unwrap();
        let g = DensityMatrixGrid::gaussian(-10.0, 10.0, 201, 16.0, 321, 0.0, 1.0, 0.3).unwrap();
        let t0 = g.trace().re;
        for scheme in [Scheme::ExplicitRk2, Scheme::OperatorSplit] {
            let out = eq.evolve(&g, &EvolveConfig { dt: 1e-3, steps: 1000, scheme }).unwrap();
            assert!((out.grid.trace().re - t0).abs() < 1e-8);
            assert!(out.grid.hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn pure_decoherence_is_pointwise() {
        let d0 = 0.3 * HBAR;
        let mut eq = free_eq();
        eq.coefficients.inv_mass_eff = 0.0;
        eq.decoherence_potential = Arc::new(move |xd| 0.5 * d0 * xd * xd);
        let g = packet();
        let t = 0.5;
        for scheme in [Scheme::OperatorSplit, Scheme::ExplicitRk2] {
            let n = 500;
            let out = eq.evolve(&g, &EvolveConfig { dt: t / n as f64, steps: n, scheme }).unwrap().grid;
            let exact = stationary_decay(&g, |xd| 0.5 * d0 * xd * xd / HBAR, t).unwrap();
            let worst = out.values().iter().zip(exact.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let peak = exact.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(worst / peak < 1e-6, "{scheme:?}: {}", worst / peak);
        }
    }

    #[test]
    fn friction_drift_follows_characteristics() {
        // -f_d x^d ∂_d ρ: ρ(x^d, t) = ρ₀(x^d e^{-f_d t}); a bump at x^d = a moves to a e^{f_d t}
        let mut eq = free_eq();
        eq.coefficients.inv_mass_eff = 0.0;
        eq.coefficients.f_d = 0.5;
        let a = 4.0;
        let w = 0.5;
        let g = DensityMatrixGrid::from_fn(-1.0, 1.0, 5, 20.0, 801, |_, xd| {
            Complex64::new((-(xd - a).powi(2) / (2.0 * w * w)).exp() + (-(xd + a).powi(2) / (2.0 * w * w)).exp(), 0.0)
        })
        .unwrap();
        let t = 0.6;
        let n = 600;
        let out = run(&eq, &g, t / n as f64, n, Scheme::ExplicitRk2);
        let c = out.center();
        let (mut num, mut den) = (0.0, 0.0);
        for j in c..out.nd() {
            let v = out.get(2, j).re;
            num += v * out.xd_axis()[j];
            den += v;
        }
        let centroid = num / den;
        // centroid of the stretched bump: a e^{f_d t}
        assert!(rel(centroid, a * (0.5 * t).exp()) < 0.01, "{centroid}");
    }

    #[test]
    fn diffusion_widens() {
        let g = packet();
        let mut eq = free_eq();
        eq.coefficients.inv_mass_eff = 0.0;
        eq.coefficients.g_d = 0.5;
        let out = eq.evolve(&g, &EvolveConfig { dt: 2e-3, steps: 200, scheme: Scheme::ExplicitRk2 }).unwrap();
        let widths: Vec<f64> = out.observables.iter().map(|o| o.coherence_length).collect();
        assert!(widths.windows(2).all(|p| p[1] >= p[0]));
        assert!(widths[widths.len() - 1] > g.coherence_length());

        let mut eq = free_eq();
        eq.coefficients.inv_mass_eff = 0.0;
        eq.coefficients.g = 0.5;
        let mut prev = g.position_moments().1;
        let mut cur = g.clone();
        for _ in 0..50 {
            cur = eq.step(&cur, 4e-3, Scheme::ExplicitRk2).unwrap();
            let v = cur.position_moments().1;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn evolve_composes_and_zero_steps() {
        let eq = free_eq();
        let g = DensityMatrixGrid::gaussian(-10.0, 10.0, 101, 14.0, 141, 0.0, 1.0, 0.0).unwrap();
        let cfg = |steps| EvolveConfig { dt: 5e-3, steps, scheme: Scheme::ExplicitRk2 };
        let same = eq.evolve(&g, &cfg(0)).unwrap();
        assert_eq!(same.grid, g);
        assert!(same.observables.is_empty());
        let full = eq.evolve(&g, &cfg(40)).unwrap().grid;
        let half = eq.evolve(&g, &cfg(20)).unwrap().grid;
        let twice = eq.evolve(&half, &cfg(20)).unwrap().grid;
        assert_eq!(full.values(), twice.values());
    }

    #[test]
    fn stability_violation_is_reported() {
        let eq = free_eq();
        let g = packet();
        let err = eq.step(&g, 1.0, Scheme::ExplicitRk2).unwrap_err();
        assert!(err.to_string().contains("time step exceeds stability bound"));
    }

    #[test]
    fn edge_amplitude_is_reported() {
        let eq = free_eq();
        let g = DensityMatrixGrid::gaussian(-4.0, 4.0, 81, 6.0, 121, 0.0, 1.0, 0.0).unwrap();
        let err = eq.evolve(&g, &EvolveConfig { dt: 1e-3, steps: 10, scheme: Scheme::ExplicitRk2 }).unwrap_err();
        assert!(matches!(err, Error::EdgeAmplitude { .. }));
    }

    #[test]
    fn stationary_decay_examples() {
        let g = packet();
        assert_eq!(stationary_decay(&g, |xd| xd * xd, 0.0).unwrap().values(), g.values());
        let lam = 0.3;
        let d = 2.0;
        let out = stationary_decay(&g, |xd| lam * xd * xd, 1.0 / (lam * d * d)).unwrap();
        let c = g.center();
        let j = c + 20; // x^d = 2
        assert!((g.xd_axis()[j] - d).abs() < 1e-12);
        assert!(rel(out.get(120, j).norm(), g.get(120, j).norm() * (-1.0f64).exp()) < 1e-12);
        assert_eq!(out.get(120, c), g.get(120, c));
        let halves = stationary_decay(&stationary_decay(&g, |xd| lam * xd * xd, 0.5).unwrap(), |xd| lam * xd * xd, 0.5).unwrap();
        let once = stationary_decay(&g, |xd| lam * xd * xd, 1.0).unwrap();
        for (a, b) in halves.values().iter().zip(once.values()) {
            assert!((a - b).norm() <= 1e-15 * b.norm().max(1e-300));
        }
        let err = stationary_decay(&g, |_| 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("decoherence function must vanish on the diagonal"));
    }

    #[test]
    fn superposition_decay() {
        let d0 = 0.2 * HBAR;
        let d = 6.0;
        let mut eq = free_eq();
        eq.coefficients.inv_mass_eff = 0.0;
        eq.decoherence_potential = Arc::new(move |xd| 0.5 * d0 * xd * xd);
        let bump = |xd: f64, c: f64| (-(xd - c).powi(2) / 0.5).exp();
        let g = DensityMatrixGrid::from_fn(-1.0, 1.0, 3, 12.0, 481, |_, xd| {
            Complex64::new(bump(xd, 0.5 * d) + bump(xd, -0.5 * d), 0.0)
        })
        .unwrap();
        let t = 0.3;
        let out = run(&eq, &g, t / 300.0, 300, Scheme::OperatorSplit);
        let j = g.center() + 60; // x^d = d/2
        assert!((g.xd_axis()[j] - 0.5 * d).abs() < 1e-12);
        let ratio = out.get(1, j).re / g.get(1, j).re;
        let expected = (-d0 * (0.5 * d).powi(2) * t / (2.0 * HBAR)).exp();
        assert!(rel(ratio, expected) < 1e-6);
    }

    #[test]
    fn kernel_variance_examples() {
        let v = kernel_variances(1.0, 0.0, 0.4, 1.0).unwrap();
        assert_eq!(v.y2, 0.0);
        let v = kernel_variances(1.0, 0.3, 0.3, 1.0).unwrap();
        assert_eq!(v.y2, v.yd2);
    }

    #[test]
    fn kernel_variances_match_quadrature() {
        let (m, q, r) = (1.0, 0.8, 1.7);
        let dt = 1.0 / HBAR; // ħΔt = 1
        let v = kernel_variances(m, q, r, dt).unwrap();
        let weight = |y: f64, yd: f64| (Complex64::new(-(q * yd * yd + r * y * y), 2.0 * m * y * yd) / 2.0).exp();
        let tol = Tolerance::new(1e-11, 1e-14);
        let moment = |p: i32, s: i32| -> Complex64 {
            let part = |re: bool| {
                Integrator::new(tol)
                    .finite(
                        |y| {
                            Integrator::new(tol)
                                .finite(
                                    |yd| {
                                        let w = weight(y, yd) * y.powi(p) * yd.powi(s);
                                        if re {
                                            w.re
                                        } else {
                                            w.im
                                        }
                                    },
                                    -14.0,
                                    14.0,
                                )
                                .unwrap()
                                .value
                        },
                        -14.0,
                        14.0,
                    )
                    .unwrap()
                    .value
            };
            Complex64::new(part(true), part(false))
        };
        let z = moment(0, 0);
        let y2 = moment(2, 0) / z;
        let yd2 = moment(0, 2) / z;
        let cross = moment(1, 1) / z;
        assert!((y2.re - v.y2).abs() < 1e-8 && y2.im.abs() < 1e-8);
        assert!((yd2.re - v.yd2).abs() < 1e-8 && yd2.im.abs() < 1e-8);
        assert!((cross - v.y_yd).norm() < 1e-8);
        assert!(rel(v.cross_magnitude(), m / (m * m + q * r)) < 1e-14);
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = DensityMatrixGrid::gaussian(-2.0, 2.0, 5, 1.0, 3, 0.0, 1.0, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.csv");
        let sidecar = g.write_snapshot(&path, &coefficients_from_couplings(1.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x,xd,re,im");
        assert_eq!(text.lines().count(), 1 + 15);
        let meta: toml::Value = toml::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(meta["nx"].as_integer(), Some(5));
        assert!(meta.get("model").is_some());
    }
}
