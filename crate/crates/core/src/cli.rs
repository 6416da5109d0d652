//! `decolab` command-line frontend.
//!
//! Every command resolves its parameters from the command's `[section]` of the
//! `--config` TOML file, overridden by command-line flags, then falls back to
//! built-in defaults. Output is a table (CSV or JSON) headed by a metadata
//! block with the tool version, the command and the full parameter set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::collisional::{
    applicability_audit, decoherence_function_f, lambda_coefficient, min_decoherence_time, planck_density,
    AuditInput, Density, DielectricSphere, Flux, ScatteringModel,
};
use crate::constants::{C, HBAR, K_B};
use crate::fermigas::{
    self, buildup_potential, effective_couplings, ratio_r, BuildupSpec, GasEnvironment, ReducedPoint,
    TestParticleCoupling,
};
use crate::mastereq::{DensityMatrixGrid, EffectiveModel, EvolveConfig, MasterEquation, Scheme};
use crate::photon;
use crate::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const HE3_MASS: f64 = 5.008e-27;

#[derive(Debug, Parser)]
#[command(name = "decolab", version, allow_negative_numbers = true, about = "Decoherence and dissipation timescales of a test particle")]
pub struct Cli {
    /// TOML file with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "DECOLAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// R(u, v) on a (u, v) grid.
    RatioSurface(RatioSurfaceArgs),
    /// R(u, v_large) against u with the degenerate asymptote 3/(2u).
    RatioCurve(RatioCurveArgs),
    /// Photon decoherence kernel on the (ct/λ_T, |x^d|/λ_T) plane.
    PhotonIntegrand(PhotonIntegrandArgs),
    /// Effective couplings Δm, k, d₀, d₂ of a test particle in a Fermi gas.
    Couplings(CouplingsArgs),
    /// IR-regulated build-up of the decoherence potential against offset.
    Buildup(BuildupArgs),
    /// Collisional decoherence function F(x) with Λ and τ_dmin.
    Collisional(CollisionalArgs),
    /// Applicability inequalities of the perturbative and collisional treatments.
    Audit(AuditArgs),
    /// Master-equation evolution of a Gaussian packet.
    Evolve(EvolveArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RatioSurface(_) => "ratio-surface",
            Command::RatioCurve(_) => "ratio-curve",
            Command::PhotonIntegrand(_) => "photon-integrand",
            Command::Couplings(_) => "couplings",
            Command::Buildup(_) => "buildup",
            Command::Collisional(_) => "collisional",
            Command::Audit(_) => "audit",
            Command::Evolve(_) => "evolve",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSurfaceArgs {
    /// u = ε_F/k_BT as start:stop:count [0:30:31]
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<String>,
    /// v = |x^d|/λ_T as start:stop:count [0:5:51]
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioCurveArgs {
    /// u as start:stop:count [0:30:31]
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<String>,
    /// Offset standing in for |x^d| ≫ λ_T [50]
    #[arg(long)]
    pub v_large: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonIntegrandArgs {
    /// r = ct/λ_T as start:stop:count [-10:10:81]
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<String>,
    /// s = |x^d|/λ_T as start:stop:count [0:10:41]
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasArgs {
    /// Degeneracy u = ε_F/k_BT [1]
    #[arg(long)]
    pub u: Option<f64>,
    /// Kelvin [1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// [2]
    #[arg(long)]
    pub spin_degeneracy: Option<f64>,
    /// Gas particle mass, kg [helium-3]
    #[arg(long)]
    pub gas_mass: Option<f64>,
    /// Contact coupling g, J·m³ [1e-50]
    #[arg(long)]
    pub coupling: Option<f64>,
    /// Test particle mass, kg [1e-25]
    #[arg(long)]
    pub bare_mass: Option<f64>,
}

impl GasArgs {
    fn resolve(&self, p: &mut Params) -> Result<(GasEnvironment, TestParticleCoupling), CliError> {
        let u = p.num("u", self.u, 1.0);
        let t = p.num("temperature", self.temperature, 1.0);
        let ns = p.num("spin_degeneracy", self.spin_degeneracy, 2.0);
        let m = p.num("gas_mass", self.gas_mass, HE3_MASS);
        let g = p.num("coupling", self.coupling, 1e-50);
        let mb = p.num("bare_mass", self.bare_mass, 1e-25);
        Ok((GasEnvironment::with_degeneracy(u, t, ns, m)?, TestParticleCoupling::new(g, mb)?))
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub gas: GasArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildupArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub gas: GasArgs,
    /// Offsets |x^d|/λ_T as start:stop:count [1:10:10]
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<String>,
    /// IR cutoff τ_IR in units of ħ/k_BT [10]
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionalModel {
    /// Hard-sphere-like constant amplitude, monochromatic massive gas.
    Isotropic,
    /// Dielectric sphere in black-body radiation.
    Rayleigh,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionalArgs {
    /// [isotropic]
    #[arg(long, value_enum)]
    pub model: Option<CollisionalModel>,
    /// Separations x in metres as start:stop:count [1e-12:1e-8:41]
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// Isotropic: scattering length, m [3e-10]
    #[arg(long)]
    pub length: Option<f64>,
    /// Isotropic: wavenumber of the gas particles, 1/m [2e10]
    #[arg(long)]
    pub q0: Option<f64>,
    /// Isotropic: number density, 1/m³ [2.5e25]
    #[arg(long)]
    pub density: Option<f64>,
    /// Isotropic: gas particle mass, kg [4.8e-26]
    #[arg(long)]
    pub gas_mass: Option<f64>,
    /// Rayleigh: sphere radius, m [1e-7]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Rayleigh: relative permittivity [2]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Rayleigh: radiation temperature, K [300]
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditPreset {
    /// Air at normal temperature and pressure.
    Air,
    /// Photon gas at the given temperature.
    Photon,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditArgs {
    /// Fills unset inputs [air]
    #[arg(long, value_enum)]
    pub preset: Option<AuditPreset>,
    /// Decoherence time under test, s
    #[arg(long)]
    pub tau_sd: Option<f64>,
    /// Environment temperature, K
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Mean separation r₀ of environment particles, m
    #[arg(long)]
    pub mean_separation: Option<f64>,
    /// Speed v_e of environment particles, m/s
    #[arg(long)]
    pub env_speed: Option<f64>,
    /// Interaction range r_sc, m
    #[arg(long)]
    pub interaction_range: Option<f64>,
    /// Mean free path ℓ₀, m
    #[arg(long)]
    pub mean_free_path: Option<f64>,
    /// Size a of the test object, m
    #[arg(long)]
    pub object_size: Option<f64>,
    /// Phonon speed v_ph in the object, m/s
    #[arg(long)]
    pub sound_speed: Option<f64>,
    /// |ẋ^d|, m/s
    #[arg(long)]
    pub offset_velocity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Decoherence potential only: pointwise decay of the off-diagonal.
    Decoherence,
    /// Kinetic term only.
    Free,
    /// All terms.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Rk2,
    Split,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveArgs {
    /// [decoherence]
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    /// Bare mass, kg [ħ numerically, so ħ/m = 1 m²/s]
    #[arg(long)]
    pub mass: Option<f64>,
    /// Friction constant k, kg/s [0]
    #[arg(long)]
    pub friction: Option<f64>,
    /// Kernel coefficient q, kg [0]
    #[arg(long)]
    pub q: Option<f64>,
    /// Kernel coefficient r, kg [0]
    #[arg(long)]
    pub r: Option<f64>,
    /// U_d = d0 x^{d2}/2, J/m² [0.2 ħ]
    #[arg(long)]
    pub d0: Option<f64>,
    /// Harmonic frequency of the external potential, 1/s [0]
    #[arg(long)]
    pub omega: Option<f64>,
    /// x grid half-width, m [10]
    #[arg(long)]
    pub x_max: Option<f64>,
    /// [201]
    #[arg(long)]
    pub nx: Option<usize>,
    /// x^d grid half-width, m [16]
    #[arg(long)]
    pub xd_max: Option<f64>,
    /// Odd [321]
    #[arg(long)]
    pub nd: Option<usize>,
    /// Initial packet width, m [1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Initial mean wavenumber, 1/m [0]
    #[arg(long)]
    pub k0: Option<f64>,
    /// s [1e-3]
    #[arg(long)]
    pub dt: Option<f64>,
    /// [1000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// [rk2]
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Offset at which the coherence decay is probed, m [2]
    #[arg(long)]
    pub probe: Option<f64>,
    /// Emit every n-th step [10]
    #[arg(long)]
    pub every: Option<usize>,
    /// Writes the final ρ as CSV with a TOML sidecar
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// errors

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Compute(#[from] Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 for usage errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(Error::InvalidParameter { .. }) => 2,
            CliError::Compute(e) if e.is_numerical() => 3,
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// parameters

/// Resolved parameter set, in insertion order, for the metadata block.
#[derive(Debug, Default)]
struct Params(Vec<(String, String)>);

impl Params {
    fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn num<T: Copy + std::fmt::Debug>(&mut self, key: &str, value: Option<T>, default: T) -> T {
        let v = value.unwrap_or(default);
        self.push(key, format!("{v:?}"));
        v
    }

    fn range(&mut self, key: &str, value: &Option<String>, default: &str) -> Result<Vec<f64>, CliError> {
        let text = value.as_deref().unwrap_or(default);
        self.push(key, text);
        parse_range(key, text)
    }
}

/// `start:stop:count` (inclusive, evenly spaced) or a single number.
pub fn parse_range(key: &str, text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Usage(format!("invalid range for `{key}`: `{text}` ({why})"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    match parts.as_slice() {
        [single] => Ok(vec![num(single).ok_or_else(|| bad("not a number"))?]),
        [a, b, n] => {
            let (a, b) = (num(a).ok_or_else(|| bad("bad start"))?, num(b).ok_or_else(|| bad("bad stop"))?);
            let n: usize = n.parse().map_err(|_| bad("bad count"))?;
            match n {
                0 => Err(bad("empty range")),
                1 if a != b => Err(bad("count 1 needs start = stop")),
                1 => Ok(vec![a]),
                _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
            }
        }
        _ => Err(bad("expected start:stop:count")),
    }
}

/// Overlays the flags in `args` on the command's config section.
fn merge<T: Serialize + DeserializeOwned>(args: &T, section: Option<&toml::Table>) -> Result<T, CliError> {
    let mut merged = serde_json::Map::new();
    if let Some(table) = section {
        let json = serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))?;
        if let serde_json::Value::Object(map) = json {
            for (k, v) in map {
                merged.insert(k.replace('-', "_"), v);
            }
        }
    }
    let flags = serde_json::to_value(args).map_err(|e| CliError::Usage(e.to_string()))?;
    if let serde_json::Value::Object(map) = flags {
        for (k, v) in map {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn load_config(path: &Option<PathBuf>) -> Result<toml::Table, CliError> {
    match path {
        None => Ok(toml::Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

// ---------------------------------------------------------------------------
// tables

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Output table with its metadata block.
#[derive(Debug)]
pub struct Table {
    pub command: &'static str,
    params: Params,
    pub notes: Vec<(String, String)>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(command: &'static str, params: Params, columns: Vec<&'static str>) -> Self {
        Self {
            command,
            params,
            notes: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# decolab {VERSION}");
        let _ = writeln!(s, "# command: {}", self.command);
        for (k, v) in &self.params.0 {
            let _ = writeln!(s, "# param {k}: {v}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Num(v) => format_number(*v),
                    Cell::Text(t) => t.clone(),
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    fn to_json(&self) -> String {
        let params: BTreeMap<&str, &str> = self.params.0.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let notes: BTreeMap<&str, &str> = self.notes.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let rows: Vec<Vec<serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Num(v) => serde_json::json!(v),
                        Cell::Text(t) => serde_json::json!(t),
                    })
                    .collect()
            })
            .collect();
        let doc = serde_json::json!({
            "version": VERSION,
            "command": self.command,
            "parameters": params,
            "notes": notes,
            "columns": self.columns,
            "rows": rows,
        });
        let mut out = serde_json::to_string_pretty(&doc).unwrap_or_default();
        out.push('\n');
        out
    }

    /// Column `name` as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| *c == name)?;
        self.rows
            .iter()
            .map(|r| match r.get(idx) {
                Some(Cell::Num(v)) => Some(*v),
                _ => None,
            })
            .collect()
    }
}

/// Twelve significant digits in scientific notation.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

/// Evaluates `f` on every item in parallel, keeping input order.
fn sweep<T: Sync, F>(items: &[T], f: F) -> Result<Vec<Vec<Cell>>, CliError>
where
    F: Fn(&T) -> Result<Vec<Cell>, Error> + Sync + Send,
{
    let rows: Vec<Result<Vec<Cell>, Error>> = items.par_iter().map(f).collect();
    rows.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

// ---------------------------------------------------------------------------
// commands

pub fn run_ratio_surface(args: &RatioSurfaceArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let us = p.range("u", &args.u, "0:30:31")?;
    let vs = p.range("v", &args.v, "0:5:51")?;
    let points: Vec<(f64, f64)> = us.iter().flat_map(|&u| vs.iter().map(move |&v| (u, v))).collect();
    let mut t = Table::new("ratio-surface", p, vec!["u", "v", "ratio"]);
    t.note("formula", "R(u,v) = tau_diss/tau_sd = (3/4) I(u,v) / F_1(u)");
    t.rows = sweep(&points, |&(u, v)| Ok(vec![u.into(), v.into(), ratio_r(ReducedPoint::new(u, v)?)?.into()]))?;
    Ok(t)
}

pub fn run_ratio_curve(args: &RatioCurveArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let us = p.range("u", &args.u, "0:30:31")?;
    let v = p.num("v_large", args.v_large, 50.0);
    let mut t = Table::new("ratio-curve", p, vec!["u", "ratio", "asymptote"]);
    t.note("formula", "asymptote = 3 k_B T / (2 eps_F) = 3/(2u)");
    t.rows = sweep(&us, |&u| {
        Ok(vec![u.into(), ratio_r(ReducedPoint::new(u, v)?)?.into(), fermigas::degenerate_asymptote(u).into()])
    })?;
    Ok(t)
}

pub fn run_photon_integrand(args: &PhotonIntegrandArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let rs = p.range("r", &args.r, "-10:10:81")?;
    let ss = p.range("s", &args.s, "0:10:41")?;
    let skipped_s = ss.iter().filter(|&&s| s <= 0.0).count();
    let points: Vec<(f64, f64)> = rs
        .iter()
        .flat_map(|&r| ss.iter().filter(|&&s| s > 0.0).map(move |&s| (r, s)))
        .collect();
    let mut t = Table::new("photon-integrand", p, vec!["r", "s", "kernel", "normalised", "odd_sum"]);
    t.note("formula", "kernel = Gamma^i / (e^2 c / lambda_T^2) = [f(s-r) + f(s+r)] / (4 pi^2 s)");
    t.note("normalised", "kernel * 2 pi, integrates to 1 over r");
    t.note("odd_sum", "f(s-r) + f(s+r), vanishes as s -> 0 since f is odd");
    if skipped_s > 0 {
        t.note("skipped", format!("{} rows with s <= 0 (kernel defined for offset > 0)", skipped_s * rs.len()));
    }
    t.rows = sweep(&points, |&(r, s)| {
        let n = photon::photon_integrand(r, s)?;
        let odd = photon::thermal_kernel_f(s - r)? + photon::thermal_kernel_f(s + r)?;
        Ok(vec![r.into(), s.into(), (n / (2.0 * std::f64::consts::PI)).into(), n.into(), odd.into()])
    })?;
    Ok(t)
}

pub fn run_couplings(args: &CouplingsArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let (env, cpl) = args.gas.resolve(&mut p)?;
    let c = effective_couplings(&env, &cpl)?;
    let mut t = Table::new("couplings", p, vec!["quantity", "value", "unit"]);
    t.note("formula", "k from G^f slope, d0 = G^i(0), d2 and delta_m from second derivatives at omega = 0");
    let rows: [(&str, f64, &str); 9] = [
        ("delta_mass", c.delta_mass, "kg"),
        ("friction", c.friction, "kg/s"),
        ("d0", c.d0, "J/m^2"),
        ("d2", c.d2, "J s^2/m^2"),
        ("hbar_d0_over_2k_over_kT", c.hbar_d0_over_2k() / env.kt(), "1"),
        ("tau_diss_gas_mass", c.dissipation_time(env.gas_mass), "s"),
        ("tau_diss_rate_formula", 1.0 / fermigas::dissipation_rate(&env, &cpl), "s"),
        ("tau_diss_test_particle", c.test_particle_dissipation_time(&cpl), "s"),
        ("thermal_wavelength", env.thermal_wavelength(), "m"),
    ];
    t.rows = rows.iter().map(|&(k, v, u)| vec![k.into(), v.into(), u.into()]).collect();
    Ok(t)
}

pub fn run_buildup(args: &BuildupArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let (env, cpl) = args.gas.resolve(&mut p)?;
    let vs = p.range("v", &args.v, "1:10:10")?;
    let tau_r = p.num("tau", args.tau, 10.0);
    let tau_ir = tau_r * HBAR / env.kt();
    let lt = env.thermal_wavelength();
    let mut t = Table::new(
        "buildup",
        p,
        vec!["v", "offset", "u_buildup", "u_stationary", "ratio", "tau_ir_v_t_over_offset"],
    );
    t.note("formula", "U_d(tau_IR) with normalised Gaussian window; stationary U_d = hbar/tau_sd");
    t.note("tau_ir_seconds", format_number(tau_ir));
    let g = cpl.coupling_strength;
    t.rows = sweep(&vs, |&v| {
        let offset = v * lt;
        let ub = buildup_potential(&BuildupSpec::new(tau_ir, offset)?, &env, &cpl)?;
        let us = fermigas::decoherence_potential(offset, &env, |_| g)?;
        let flat = tau_ir * env.thermal_velocity() / offset;
        Ok(vec![v.into(), offset.into(), ub.into(), us.into(), (ub / us).into(), flat.into()])
    })?;
    Ok(t)
}

pub fn run_collisional(args: &CollisionalArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let model_kind = args.model.unwrap_or(CollisionalModel::Isotropic);
    p.push("model", format!("{model_kind:?}").to_lowercase());
    let xs = p.range("x", &args.x, "1e-12:1e-8:41")?;
    let model = match model_kind {
        CollisionalModel::Isotropic => {
            let a = p.num("length", args.length, 3e-10);
            let q0 = p.num("q0", args.q0, 2e10);
            let n = p.num("density", args.density, 2.5e25);
            let m = p.num("gas_mass", args.gas_mass, 4.8e-26);
            ScatteringModel::isotropic(a, Density::Delta { q0, n_g: n }, Flux::Massive(m))?
        }
        CollisionalModel::Rayleigh => {
            let a = p.num("radius", args.radius, 1e-7);
            let eps = p.num("epsilon", args.epsilon, 2.0);
            let temp = p.num("temperature", args.temperature, 300.0);
            ScatteringModel::rayleigh(DielectricSphere::new(a, eps)?, planck_density(temp))?
        }
    };
    let lambda = lambda_coefficient(&model)?;
    let tau_min = min_decoherence_time(&model)?;
    let mut t = Table::new("collisional", p, vec!["x", "f", "f_over_x2", "f_times_tau_dmin"]);
    t.note("formula", "F(x) = int dq nu(q) v(q) int dOmega |f|^2 (1 - sinc(|q - q'| x))");
    t.note("lambda", format_number(lambda));
    t.note("tau_dmin", format_number(tau_min));
    t.rows = sweep(&xs, |&x| {
        let f = decoherence_function_f(x, &model)?;
        Ok(vec![x.into(), f.into(), (f / (x * x)).into(), (f * tau_min).into()])
    })?;
    Ok(t)
}

/// Preset inputs. Air at NTP: `r₀ = 3·10⁻⁹ m`, `v_e = 10³ m/s`. Photon gas: `r₀ = ħc/k_BT`, `v_e = c`.
pub fn audit_preset(preset: AuditPreset, temperature: f64) -> AuditInput {
    let (r0, ve) = match preset {
        AuditPreset::Air => (3e-9, 1e3),
        AuditPreset::Photon => (HBAR * C / (K_B * temperature), C),
    };
    AuditInput {
        tau_sd: 1e-9,
        temperature,
        mean_separation: r0,
        env_speed: ve,
        interaction_range: 0.0,
        mean_free_path: 0.0,
        object_size: 0.0,
        sound_speed: 1e3,
        offset_velocity: 0.0,
    }
}

pub fn run_audit(args: &AuditArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let preset = args.preset.unwrap_or(AuditPreset::Air);
    p.push("preset", format!("{preset:?}").to_lowercase());
    let default_t = if preset == AuditPreset::Air { 293.15 } else { 1.0 };
    let temperature = p.num("temperature", args.temperature, default_t);
    let base = audit_preset(preset, temperature);
    let inp = AuditInput {
        tau_sd: p.num("tau_sd", args.tau_sd, base.tau_sd),
        temperature,
        mean_separation: p.num("mean_separation", args.mean_separation, base.mean_separation),
        env_speed: p.num("env_speed", args.env_speed, base.env_speed),
        interaction_range: p.num("interaction_range", args.interaction_range, base.interaction_range),
        mean_free_path: p.num("mean_free_path", args.mean_free_path, base.mean_free_path),
        object_size: p.num("object_size", args.object_size, base.object_size),
        sound_speed: p.num("sound_speed", args.sound_speed, base.sound_speed),
        offset_velocity: p.num("offset_velocity", args.offset_velocity, base.offset_velocity),
    };
    let report = applicability_audit(&inp)?;
    let mut t = Table::new("audit", p, vec!["condition", "inequality", "lhs", "rhs", "margin", "pass"]);
    t.note("all_pass", report.all_pass);
    t.rows = report
        .conditions
        .iter()
        .map(|c| {
            vec![
                c.name.into(),
                c.inequality.into(),
                c.lhs.into(),
                c.rhs.into(),
                c.margin.into(),
                if c.pass { "true" } else { "false" }.into(),
            ]
        })
        .collect();
    Ok(t)
}

pub fn run_evolve(args: &EvolveArgs) -> Result<Table, CliError> {
    let mut p = Params::default();
    let scenario = args.scenario.unwrap_or(Scenario::Decoherence);
    p.push("scenario", format!("{scenario:?}").to_lowercase());
    let mass = p.num("mass", args.mass, HBAR);
    let (k, q, r, d0, omega) = match scenario {
        Scenario::Free => (0.0, 0.0, 0.0, 0.0, 0.0),
        _ => (
            p.num("friction", args.friction, 0.0),
            p.num("q", args.q, 0.0),
            p.num("r", args.r, 0.0),
            p.num("d0", args.d0, 0.2 * HBAR),
            p.num("omega", args.omega, 0.0),
        ),
    };
    let x_max = p.num("x_max", args.x_max, 10.0);
    let nx = p.num("nx", args.nx, 201);
    let xd_max = p.num("xd_max", args.xd_max, 16.0);
    let nd = p.num("nd", args.nd, 321);
    let sigma = p.num("sigma", args.sigma, 1.0);
    let k0 = p.num("k0", args.k0, 0.0);
    let dt = p.num("dt", args.dt, 1e-3);
    let steps = p.num("steps", args.steps, 1000);
    let scheme_arg = args.scheme.unwrap_or(SchemeArg::Rk2);
    p.push("scheme", format!("{scheme_arg:?}").to_lowercase());
    let probe = p.num("probe", args.probe, 2.0);
    let every = p.num("every", args.every, 10).max(1);
    if let Some(path) = &args.snapshot {
        p.push("snapshot", path.display());
    }

    let model = EffectiveModel {
        mass,
        friction: k,
        q_coeff: q,
        r_coeff: r,
        decoherence_potential: Arc::new(move |xd| 0.5 * d0 * xd * xd),
        external_potential: Arc::new(move |x| 0.5 * mass * omega * omega * x * x),
    };
    let mut eq = MasterEquation::from_model(&model)?;
    if scenario == Scenario::Decoherence {
        eq.coefficients.inv_mass_eff = 0.0;
    }
    let grid = DensityMatrixGrid::gaussian(-x_max, x_max, nx, xd_max, nd, 0.0, sigma, k0)?;
    let scheme = match scheme_arg {
        SchemeArg::Rk2 => Scheme::ExplicitRk2,
        SchemeArg::Split => Scheme::OperatorSplit,
    };

    let i_star = grid
        .diagonal()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let j_probe = grid
        .xd_axis()
        .iter()
        .enumerate()
        .filter(|(_, &xd)| xd >= 0.0)
        .min_by(|a, b| (a.1 - probe).abs().total_cmp(&(b.1 - probe).abs()))
        .map(|(j, _)| j)
        .unwrap_or(grid.center());
    let probe_xd = grid.xd_axis()[j_probe];
    let initial = grid.get(i_star, j_probe).norm();
    let decay_rate = eq.effective_decoherence_potential(probe_xd) / HBAR;

    let mut probes = Vec::with_capacity(steps);
    let run = eq.evolve_with(&grid, &EvolveConfig { dt, steps, scheme }, |g| {
        probes.push(g.get(i_star, j_probe).norm() / initial);
    })?;
    if let Some(path) = &args.snapshot {
        run.grid
            .write_snapshot(path, &eq.coefficients)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }

    let mut t = Table::new(
        "evolve",
        p,
        vec!["time", "trace", "coherence_length", "energy", "min_diagonal", "probe", "probe_reference"],
    );
    t.note("formula", "probe = |rho(x*, x^d_p, t)| / |rho(x*, x^d_p, 0)|; reference = exp(-U_deff(x^d_p) t / hbar)");
    t.note("probe_offset", format_number(probe_xd));
    t.note("tau", format_number(1.0 / decay_rate));
    t.note("stability_bound", format_number(eq.stability_bound(&grid, scheme)));
    for (n, (o, pr)) in run.observables.iter().zip(&probes).enumerate() {
        if (n + 1) % every == 0 || n + 1 == steps {
            let reference = (-decay_rate * o.time).exp();
            t.rows.push(vec![
                o.time.into(),
                o.trace.into(),
                o.coherence_length.into(),
                o.energy.into(),
                o.min_diagonal.into(),
                (*pr).into(),
                reference.into(),
            ]);
        }
    }
    Ok(t)
}

/// Resolves parameters against the config file and runs the command.
pub fn execute(cli: &Cli) -> Result<Table, CliError> {
    let config = load_config(&cli.config)?;
    let name = cli.command.name();
    let section = match config.get(name) {
        None => None,
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => return Err(CliError::Usage(format!("config: `{name}` must be a table"))),
    };
    match &cli.command {
        Command::RatioSurface(a) => run_ratio_surface(&merge(a, section)?),
        Command::RatioCurve(a) => run_ratio_curve(&merge(a, section)?),
        Command::PhotonIntegrand(a) => run_photon_integrand(&merge(a, section)?),
        Command::Couplings(a) => run_couplings(&merge(a, section)?),
        Command::Buildup(a) => run_buildup(&merge(a, section)?),
        Command::Collisional(a) => run_collisional(&merge(a, section)?),
        Command::Audit(a) => run_audit(&merge(a, section)?),
        Command::Evolve(a) => run_evolve(&merge(a, section)?),
    }
}

/// Runs the command on the configured thread pool and writes the output.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let table = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(|| execute(cli))?,
        None => execute(cli)?,
    };
    let text = table.render(cli.format);
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Entry point: parses `args`, runs, and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("decolab: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("u", "0:30:31").unwrap().len(), 31);
        assert_eq!(parse_range("u", "0:30:31").unwrap()[30], 30.0);
        assert_eq!(parse_range("v", "50").unwrap(), vec![50.0]);
        assert_eq!(parse_range("v", "2:2:1").unwrap(), vec![2.0]);
        for bad in ["", "1:2", "a:1:3", "0:1:0", "0:1:x", "1:2:1", "1:2:3:4"] {
            let e = parse_range("v", bad).unwrap_err();
            assert!(e.to_string().contains("`v`"), "{bad}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn flags_override_config() {
        let table: toml::Table = "u = \"0:1:2\"\nv = \"1:2:2\"".parse().unwrap();
        let args = RatioSurfaceArgs {
            u: None,
            v: Some("3".into()),
        };
        let m = merge(&args, Some(&table)).unwrap();
        assert_eq!(m.u.as_deref(), Some("0:1:2"));
        assert_eq!(m.v.as_deref(), Some("3"));
        let bad: toml::Table = "w = 1".parse().unwrap();
        let e = merge(&RatioSurfaceArgs::default(), Some(&bad)).unwrap_err();
        assert!(e.to_string().contains('w'));
    }

    #[test]
    fn kebab_config_keys() {
        let table: toml::Table = "v-large = 20.0\n".parse().unwrap();
        let m = merge(&RatioCurveArgs::default(), Some(&table)).unwrap();
        assert_eq!(m.v_large, Some(20.0));
        let table: toml::Table = "gas-mass = 1e-26\nv = \"2\"".parse().unwrap();
        let m = merge(&BuildupArgs::default(), Some(&table)).unwrap();
        assert_eq!(m.gas.gas_mass, Some(1e-26));
    }

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(format_number(0.632), "6.32000000000e-1");
        assert_eq!(format_number(-1.5e-20), "-1.50000000000e-20");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn ratio_curve_columns() {
        let t = run_ratio_curve(&RatioCurveArgs {
            u: Some("0:2:2".into()),
            v_large: None,
        })
        .unwrap();
        let r = t.column("ratio").unwrap();
        let asym = t.column("asymptote").unwrap();
        assert!((r[0] - 0.632).abs() < 0.01);
        assert_eq!(asym[1], 0.75);
    }

    #[test]
    fn photon_kernel_units() {
        let t = run_photon_integrand(&PhotonIntegrandArgs {
            r: Some("0.5".into()),
            s: Some("0:2:3".into()),
        })
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.notes.iter().any(|(k, _)| k == "skipped"));
        // Γ^i(t, x^d) / (e² c / λ²) from the photon module directly
        let bath = photon::PhotonBath::new(1.0).unwrap();
        let chg = photon::ChargedParticle::electron();
        let lt = bath.thermal_length();
        let gamma = photon::gamma_i_thermal(0.5 * lt / C, 1.0 * lt, &bath, &chg).unwrap();
        let unit = chg.charge_squared() * C / (lt * lt);
        let kernel = t.column("kernel").unwrap()[0];
        assert!(((gamma / unit) / kernel - 1.0).abs() < 1e-9, "{} vs {kernel}", gamma / unit);
    }

    #[test]
    fn audit_air_preset() {
        let t = run_audit(&AuditArgs::default()).unwrap();
        assert_eq!(t.column("lhs").unwrap().len(), 6);
        let row = t.rows.iter().find(|r| r[0] == Cell::from("collision_spacing")).unwrap();
        assert_eq!(row[2], Cell::Num(3e-9 / 1e3));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Compute(Error::LambdaDivergent).exit_code(), 3);
        assert_eq!(CliError::Compute(Error::param("u", "bad")).exit_code(), 2);
        assert_eq!(CliError::Compute(Error::UnphysicalMass(-1.0)).exit_code(), 1);
        assert_eq!(main_with(["decolab", "ratio-surface", "--u", "0:1"]), 2);
        assert_eq!(main_with(["decolab", "no-such-command"]), 2);
    }
}
