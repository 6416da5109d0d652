//! Numerical kernels shared by every environment model.
//!
//! Integration uses a globally adaptive 10/21-point Gauss–Kronrod scheme.
//! Semi-infinite ranges are mapped onto a finite one with `z = t / (1 - t)`;
//! oscillatory integrands can be pre-partitioned at known break points so the
//! adaptive loop starts from half-wave sized pieces.

#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Outcome of a quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

/// Requested accuracy: converged when `err <= max(absolute, relative * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Tolerance {
    pub fn new(relative: f64, absolute: f64) -> Self {
        assert!(relative > 0.0, "relative tolerance must be positive");
        assert!(absolute >= 0.0, "absolute tolerance must be non-negative");
        Self { relative, absolute }
    }

    pub fn relative(relative: f64) -> Self {
        Self::new(relative, 0.0)
    }

    fn target(&self, value: f64) -> f64 {
        self.absolute.max(self.relative * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            relative: 1e-10,
            absolute: 1e-14,
        }
    }
}

// QUADPACK qk21 abscissae and weights.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_615_759,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
enum Segment {
    /// Plain `[a, b]` in the integration variable.
    Finite,
    /// `[a, b] ⊂ [0, 1)` in the mapped variable `t`, with `z = origin + t / (1 - t)`.
    Tail { origin: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    kind: Segment,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, kind: Segment) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut eval = |t: f64| -> f64 {
        match kind {
            Segment::Finite => f(t),
            Segment::Tail { origin } => {
                let s = 1.0 - t;
                let y = f(origin + t / s);
                if y == 0.0 {
                    0.0
                } else {
                    y / (s * s)
                }
            }
        }
    };

    let fc = eval(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx);
        let f2 = eval(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (1.0f64).min((200.0 * err / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

/// Adaptive integrator with a configurable subdivision budget.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub tol: Tolerance,
    pub max_intervals: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self::new(Tolerance::default())
    }
}

impl Integrator {
    pub fn new(tol: Tolerance) -> Self {
        Self {
            tol,
            max_intervals: 4000,
        }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n.max(1);
        self
    }

    fn run<F: FnMut(f64) -> f64>(&self, f: &mut F, initial: Vec<(f64, f64, Segment)>) -> Result<QuadratureResult> {
        let mut heap = BinaryHeap::with_capacity(initial.len() + 64);
        let mut evaluations = 0usize;
        for (a, b, kind) in initial {
            let (value, error) = gauss_kronrod(f, a, b, kind);
            evaluations += 21;
            heap.push(Piece { a, b, kind, value, error });
        }
        let mut count = heap.len();

        loop {
            let (value, error) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            let result = QuadratureResult {
                value,
                error_estimate: error,
                evaluations,
            };
            if !value.is_finite() || !error.is_finite() {
                return Err(Error::NotConverged { partial: result });
            }
            if error <= self.tol.target(value) {
                return Ok(result);
            }
            if count >= self.max_intervals {
                return Err(Error::NotConverged { partial: result });
            }
            let worst = heap.pop().expect("heap is never empty");
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                // interval collapsed to adjacent floats
                heap.push(worst);
                return Err(Error::NotConverged { partial: result });
            }
            for (a, b) in [(worst.a, mid), (mid, worst.b)] {
                let (value, error) = gauss_kronrod(f, a, b, worst.kind);
                evaluations += 21;
                heap.push(Piece {
                    a,
                    b,
                    kind: worst.kind,
                    value,
                    error,
                });
            }
            count += 1;
        }
    }

    pub fn finite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<QuadratureResult> {
        if !(a < b) {
            return Err(Error::EmptyInterval { a, b });
        }
        self.run(&mut f, vec![(a, b, Segment::Finite)])
    }

    /// `∫_a^b f` with interior break points (sorted, strictly inside `(a, b)`).
    pub fn finite_with_breaks<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<QuadratureResult> {
        if !(a < b) {
            return Err(Error::EmptyInterval { a, b });
        }
        let mut pieces = Vec::with_capacity(breaks.len() + 1);
        let mut lo = a;
        for &p in breaks.iter().filter(|&&p| p > a && p < b) {
            if p > lo {
                pieces.push((lo, p, Segment::Finite));
                lo = p;
            }
        }
        pieces.push((lo, b, Segment::Finite));
        self.run(&mut f, pieces)
    }

    pub fn semi_infinite<F: FnMut(f64) -> f64>(&self, f: F) -> Result<QuadratureResult> {
        self.semi_infinite_with_breaks(f, &[])
    }

    /// `∫_0^∞ f` where `[0, ∞)` is first cut at the given break points.
    ///
    /// Every finite piece becomes its own starting interval; the last break
    /// point is the origin of the mapped tail.
    pub fn semi_infinite_with_breaks<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        breaks: &[f64],
    ) -> Result<QuadratureResult> {
        let mut pieces = Vec::with_capacity(breaks.len() + 1);
        let mut lo = 0.0;
        for &p in breaks {
            if p > lo {
                pieces.push((lo, p, Segment::Finite));
                lo = p;
            }
        }
        pieces.push((0.0, 1.0, Segment::Tail { origin: lo }));
        self.run(&mut f, pieces)
    }
}

/// `∫_0^∞ f(z) dz` with the default subdivision budget.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(f: F, tol: Tolerance) -> Result<QuadratureResult> {
    Integrator::new(tol).semi_infinite(f)
}

/// `∫_a^b f(x) dx` with the default subdivision budget.
pub fn integrate_finite<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadratureResult> {
    Integrator::new(tol).finite(f, a, b)
}

/// Zeros of `sin(c * g(z))` for a monotone phase, as break points for oscillatory integrands.
///
/// Returns the points where `phase(z) = k π` for `k = 1, 2, ...` up to `z_max`,
/// given the inverse map `z(phase)`.
pub fn half_wave_breaks(phase_max: f64, inverse: impl Fn(f64) -> f64, limit: usize) -> Vec<f64> {
    let n = ((phase_max / PI).floor() as usize).min(limit);
    (1..=n).map(|k| inverse(k as f64 * PI)).collect()
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `Σ x^k / k²` for `|x| <= 1/2`.
fn li2_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = 0.0f64;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
        sum += term / (k * k);
        k += 1.0;
        term *= x;
        if k > 200.0 {
            break;
        }
    }
    sum
}

/// `Li₂(-e^u)` for any finite `u`.
fn li2_neg_exp(u: f64) -> f64 {
    if u > 0.0 {
        // inversion: Li₂(-y) = -π²/6 - ln²(y)/2 - Li₂(-1/y)
        return -PI * PI / 6.0 - 0.5 * u * u - li2_neg_exp(-u);
    }
    let y = u.exp();
    if y <= 0.5 {
        li2_series(-y)
    } else {
        // Landen: Li₂(-y) = -Li₂(y / (1 + y)) - ln²(1 + y) / 2
        let l = y.ln_1p();
        -li2_series(y / (1.0 + y)) - 0.5 * l * l
    }
}

/// Complete Fermi–Dirac integral `F_j(u) = ∫_0^∞ z^j / (1 + e^{z-u}) dz` for `j ∈ {0, 1}`.
///
/// `F₀(u) = ln(1 + e^u)`, `F₁(u) = -Li₂(-e^u)`.
pub fn fermi_dirac_complete(order: u32, u: f64) -> f64 {
    match order {
        0 => softplus(u),
        1 => -li2_neg_exp(u),
        _ => panic!("fermi_dirac_complete: order must be 0 or 1, got {order}"),
    }
}

/// Riemann ζ(n) for integer `n >= 2` via Euler–Maclaurin summation.
pub fn riemann_zeta_int(n: i64) -> Result<f64> {
    if n < 2 {
        return Err(Error::DivergentArgument(n));
    }
    if n > 60 {
        // ζ(n) - 1 < 2^-60
        return Ok(1.0 + 2f64.powi(-(n as i32)) + 3f64.powi(-(n as i32)));
    }
    // B_2, B_4, ..., B_14
    const BERNOULLI: [f64; 7] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let s = n as f64;
    let big_n: f64 = 12.0;
    let mut sum: f64 = (1..12).rev().map(|k| (k as f64).powf(-s)).sum();
    sum += big_n.powf(1.0 - s) / (s - 1.0) + 0.5 * big_n.powf(-s);
    // Σ B_{2j}/(2j)! · s(s+1)…(s+2j-2) · N^{-s-2j+1}
    let mut rising = s;
    let mut factorial = 2.0;
    for (j, b) in BERNOULLI.iter().enumerate() {
        let order = 2 * j as i32 + 2;
        sum += b / factorial * rising * big_n.powf(-s - order as f64 + 1.0);
        rising *= (s + order as f64 - 1.0) * (s + order as f64);
        factorial *= (order as f64 + 1.0) * (order as f64 + 2.0);
    }
    Ok(sum)
}

/// Central difference with one Richardson level; error `O(step⁴)`.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, order: u32, step: f64) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidStep(step));
    }
    let central = |h: f64| match order {
        1 => (f(x + h) - f(x - h)) / (2.0 * h),
        2 => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
        _ => f64::NAN,
    };
    if order != 1 && order != 2 {
        return Err(Error::param("order", format!("derivative order must be 1 or 2, got {order}")));
    }
    Ok((4.0 * central(0.5 * step) - central(step)) / 3.0)
}

/// `1 - sin(x)/x`, accurate near zero.
pub fn one_minus_sinc(x: f64) -> f64 {
    let x2 = x * x;
    if x2 < 1e-3 {
        x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        1.0 - x.sin() / x
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    1.0 - one_minus_sinc(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Dirichlet η(2) by pairing alternate terms; independent of the dilogarithm.
    fn eta2_series() -> f64 {
        let mut s = 0.0;
        for k in (1..2_000_000u64).rev() {
            let k = k as f64;
            s += if k as u64 % 2 == 1 { 1.0 } else { -1.0 } / (k * k);
        }
        s
    }

    #[test]
    fn exponential_and_fermi_weight() {
        let r = integrate_semi_infinite(|z| (-z).exp(), Tolerance::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "{r:?}");
        assert!(r.error_estimate >= 0.0 && r.evaluations > 0);

        let eta2 = eta2_series();
        assert!(rel(eta2, PI * PI / 12.0) < 1e-12);
        let r = integrate_semi_infinite(|z| z / (1.0 + z.exp()), Tolerance::default()).unwrap();
        assert!(rel(r.value, eta2) < 1e-10, "{}", r.value);
    }

    #[test]
    fn oscillatory_bose_sine() {
        let exact = 0.5 * PI / (PI).tanh() - 0.5;
        assert!((exact - 1.076_674_0).abs() < 1e-7);
        let r = integrate_semi_infinite(|z| z.sin() / z.exp_m1(), Tolerance::default()).unwrap();
        assert!(rel(r.value, exact) < 1e-10);
    }

    #[test]
    fn finite_examples() {
        let tol = Tolerance::default();
        assert!((integrate_finite(|x| x * x, 0.0, 1.0, tol).unwrap().value - 1.0 / 3.0).abs() < 1e-14);
        let r = integrate_finite(|c| (1.0 - c) * (1.0 + c * c) / 2.0, -1.0, 1.0, tol).unwrap();
        assert!((r.value - 4.0 / 3.0).abs() < 1e-14);
        assert!((integrate_finite(f64::sin, 0.0, PI, tol).unwrap().value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn inverted_interval_is_rejected() {
        let err = integrate_finite(|x| x, 1.0, 1.0, Tolerance::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInterval { .. }));
        assert!(err.to_string().contains("empty or inverted interval"));
    }

    #[test]
    fn budget_exhaustion_reports_partial() {
        let err = Integrator::new(Tolerance::relative(1e-14))
            .with_max_intervals(3)
            .finite(|x| (1.0 / x).sin(), 1e-4, 1.0)
            .unwrap_err();
        match err {
            Error::NotConverged { partial } => assert!(partial.evaluations > 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn breaks_split_the_range() {
        let breaks: Vec<f64> = (1..40).map(|k| k as f64 * PI).collect();
        let r = Integrator::default()
            .semi_infinite_with_breaks(|z| z.sin() * (-0.1 * z).exp(), &breaks)
            .unwrap();
        assert!(rel(r.value, 1.0 / 1.01) < 1e-10);
    }

    #[test]
    fn fermi_dirac_values() {
        assert!(rel(fermi_dirac_complete(1, 0.0), eta2_series()) < 1e-12);
        assert!(rel(fermi_dirac_complete(0, 0.0), 2f64.ln()) < 1e-15);
        // reflection with the tail evaluated as an alternating series
        let u = 10.0f64;
        let tail: f64 = (1..60).map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-k * u).exp() / (k * k)
        }).sum();
        let oracle = u * u / 2.0 + PI * PI / 6.0 - tail;
        assert!(rel(fermi_dirac_complete(1, u), oracle) < 1e-13);
        assert!((fermi_dirac_complete(1, 10.0) - 51.644_888).abs() < 1e-5);
    }

    #[test]
    fn fermi_dirac_matches_quadrature() {
        for u in [-5.0, 0.0, 1.0, 10.0, 30.0] {
            let q0 = integrate_semi_infinite(|z| 1.0 / (1.0 + (z - u).exp()), Tolerance::relative(1e-12)).unwrap();
            let q1 = integrate_semi_infinite(|z| z / (1.0 + (z - u).exp()), Tolerance::relative(1e-12)).unwrap();
            assert!(rel(fermi_dirac_complete(0, u), q0.value) < 1e-9, "u={u}");
            assert!(rel(fermi_dirac_complete(1, u), q1.value) < 1e-9, "u={u}");
        }
    }

    #[test]
    fn fermi_dirac_derivative_relation() {
        for u in [-3.0, -0.5, 0.0, 0.4, 2.0, 12.0] {
            let d = derivative(|x| fermi_dirac_complete(1, x), u, 1, 1e-2).unwrap();
            assert!(rel(d, fermi_dirac_complete(0, u)) < 1e-6, "u={u}");
        }
    }

    #[test]
    fn zeta_values() {
        assert!(rel(riemann_zeta_int(2).unwrap(), PI * PI / 6.0) < 1e-13);
        assert!(rel(riemann_zeta_int(4).unwrap(), PI.powi(4) / 90.0) < 1e-13);
        assert!(rel(riemann_zeta_int(6).unwrap(), PI.powi(6) / 945.0) < 1e-13);
        let direct: f64 = (1..200).map(|k| (k as f64).powi(-9)).sum();
        assert!(rel(riemann_zeta_int(9).unwrap(), direct) < 1e-13);
        assert!((riemann_zeta_int(9).unwrap() - 1.002_008).abs() < 1e-6);
        assert!(matches!(riemann_zeta_int(1), Err(Error::DivergentArgument(1))));
    }

    #[test]
    fn derivative_examples() {
        assert!((derivative(|x| x * x, 3.0, 1, 0.1).unwrap() - 6.0).abs() < 1e-12);
        assert!((derivative(|x| (-x * x).exp(), 0.0, 2, 1e-2).unwrap() + 2.0).abs() < 1e-8);
        assert!((derivative(f64::sin, 0.0, 1, 1e-2).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(derivative(f64::sin, 0.0, 1, 0.0), Err(Error::InvalidStep(_))));
        assert!(matches!(derivative(f64::sin, 0.0, 1, -1.0), Err(Error::InvalidStep(_))));
    }

    #[test]
    fn sinc_small_argument() {
        for x in [1e-8f64, 1e-4, 0.01, 0.03, 0.5, 3.0] {
            let direct = 1.0 - x.sin() / x;
            if x > 1e-2 {
                assert!(rel(one_minus_sinc(x), direct) < 1e-10);
            }
            assert!(rel(one_minus_sinc(x), x * x / 6.0) < x * x / 10.0 + 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn integration_is_linear(
                c in proptest::collection::vec(-2.0f64..2.0, 3),
                d in proptest::collection::vec(-2.0f64..2.0, 3),
                alpha in -3.0f64..3.0,
                beta in -3.0f64..3.0,
            ) {
                let p = |x: f64, k: &[f64]| (k[0] + k[1] * x + k[2] * x * x) * (-x * x).exp();
                let tol = Tolerance::default();
                let f = integrate_semi_infinite(|x| p(x, &c), tol).unwrap();
                let g = integrate_semi_infinite(|x| p(x, &d), tol).unwrap();
                let h = integrate_semi_infinite(|x| alpha * p(x, &c) + beta * p(x, &d), tol).unwrap();
                let combined = alpha.abs() * f.error_estimate + beta.abs() * g.error_estimate + h.error_estimate;
                let scale = alpha.abs() * f.value.abs() + beta.abs() * g.value.abs();
                prop_assert!((h.value - alpha * f.value - beta * g.value).abs() <= combined + 1e-12 * scale + 1e-14);
            }
        }
    }
}
