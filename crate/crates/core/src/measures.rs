//! Test-function banks, empirical and reference measures, weak-* neighbourhoods and
//! quasi-generic filtering.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{finite_time_lyapunov, iterate_backward, iterate_into, splitting, MapSystem, OrbitSegment};
use crate::error::{Error, Result};
use crate::linalg::{line_angle, norm, normalize, Point, Vec2};
use crate::potential::Potential;

/// Observables of the built-in banks. All have sup norm 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    CosX,
    SinX,
    CosY,
    SinY,
    CosXCosY,
    SinXSinY,
    Cos2X,
    Cos2Y,
}

impl TestFunction {
    #[inline]
    pub fn eval(self, p: Point) -> f64 {
        match self {
            TestFunction::CosX => (TAU * p[0]).cos(),
            TestFunction::SinX => (TAU * p[0]).sin(),
            TestFunction::CosY => (TAU * p[1]).cos(),
            TestFunction::SinY => (TAU * p[1]).sin(),
            TestFunction::CosXCosY => (TAU * p[0]).cos() * (TAU * p[1]).cos(),
            TestFunction::SinXSinY => (TAU * p[0]).sin() * (TAU * p[1]).sin(),
            TestFunction::Cos2X => (2.0 * TAU * p[0]).cos(),
            TestFunction::Cos2Y => (2.0 * TAU * p[1]).cos(),
        }
    }

    /// Lipschitz constant for the max metric.
    pub fn lipschitz(self) -> f64 {
        match self {
            TestFunction::Cos2X | TestFunction::Cos2Y => 4.0 * PI,
            _ => TAU,
        }
    }
}

/// Ordered list `psi_1..psi_S`; the index of each function is part of the contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionBank {
    pub id: String,
    pub functions: Vec<TestFunction>,
}

impl TestFunctionBank {
    pub fn new(id: impl Into<String>, functions: Vec<TestFunction>) -> Self {
        Self {
            id: id.into(),
            functions,
        }
    }

    /// `cos 2πx, sin 2πx, cos 2πy, sin 2πy, cos 2πx cos 2πy, sin 2πx sin 2πy, cos 4πx, cos 4πy`.
    pub fn trig8() -> Self {
        use TestFunction::*;
        Self::new("trig8", vec![CosX, SinX, CosY, SinY, CosXCosY, SinXSinY, Cos2X, Cos2Y])
    }

    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "trig8" => Ok(Self::trig8()),
            other => Err(Error::InvalidParameter(format!("unknown bank `{other}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Largest Lipschitz constant among the first `s` functions.
    pub fn max_lipschitz(&self, s: usize) -> f64 {
        self.functions[..s.min(self.len())]
            .iter()
            .map(|f| f.lipschitz())
            .fold(0.0, f64::max)
    }

    /// Adds `psi_i(p)` to `acc[i]` for `i < acc.len()`.
    #[inline]
    pub fn accumulate(&self, p: Point, acc: &mut [f64]) {
        for (a, f) in acc.iter_mut().zip(&self.functions) {
            *a += f.eval(p);
        }
    }

    /// Averages of every bank function along `points`.
    pub fn averages(&self, points: &[Point]) -> Vec<f64> {
        let mut acc = vec![0.0; self.len()];
        for &p in points {
            self.accumulate(p, &mut acc);
        }
        let n = points.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Anything with bank moments `∫psi_i dν`.
pub trait HasMoments {
    fn bank_id(&self) -> &str;
    fn moments(&self) -> &[f64];
}

/// A bare moment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub bank_id: String,
    pub values: Vec<f64>,
}

impl HasMoments for MomentVector {
    fn bank_id(&self) -> &str {
        &self.bank_id
    }

    fn moments(&self) -> &[f64] {
        &self.values
    }
}

/// `E_{x,n} = (1/n) sum_{k<n} delta_{f^k x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Point>,
    bank_id: String,
    moments: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_points(points: Vec<Point>, bank: &TestFunctionBank) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        let moments = bank.averages(&points);
        Ok(Self {
            points,
            bank_id: bank.id.clone(),
            moments,
        })
    }

    pub fn from_orbit(orbit: &OrbitSegment, bank: &TestFunctionBank) -> Result<Self> {
        Self::from_points(orbit.points().to_vec(), bank)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points.iter().map(|&p| f(p)).sum::<f64>() / self.points.len() as f64
    }
}

impl HasMoments for EmpiricalMeasure {
    fn bank_id(&self) -> &str {
        &self.bank_id
    }

    fn moments(&self) -> &[f64] {
        &self.moments
    }
}

/// Configuration-level description of `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Haar measure on the torus (cat map).
    Lebesgue,
    /// Bernoulli `(p, 1 - p)` on the horseshoe coding; `p` is the weight of the left strip.
    Bernoulli { p: f64 },
    /// Time average along one long orbit.
    LongOrbit { base: Point, length: usize },
}

impl MeasureSpec {
    pub fn id(&self) -> String {
        match self {
            MeasureSpec::Lebesgue => "lebesgue".into(),
            MeasureSpec::Bernoulli { p } => format!("bernoulli({p:?})"),
            MeasureSpec::LongOrbit { base, length } => format!("long-orbit({:?},{:?},{length})", base[0], base[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ReferenceKind {
    Lebesgue,
    Bernoulli { p: f64 },
    LongOrbit { points: Vec<Point> },
}

/// The target measure `mu` with moments frozen at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeasure {
    spec: MeasureSpec,
    kind: ReferenceKind,
    bank_id: String,
    moments: Vec<f64>,
}

const CHARACTERISTIC_DEPTH: usize = 40;

/// `E exp(i t X)` for the horseshoe x-marginal of Bernoulli(p): X = U/3 with probability p,
/// 1 - U/3 otherwise, U distributed as X.
fn bernoulli_characteristic(p: f64, t: f64, depth: usize) -> Complex64 {
    if depth == 0 {
        // X is within 3^-depth of the limiting cylinder point; the residual phase is negligible.
        return Complex64::new(1.0, 0.0);
    }
    // X is real, so E exp(-i t X / 3) is the conjugate.
    let inner = bernoulli_characteristic(p, t / 3.0, depth - 1);
    inner * p + Complex64::from_polar(1.0, t) * inner.conj() * (1.0 - p)
}

impl ReferenceMeasure {
    pub fn build(spec: &MeasureSpec, system: &dyn MapSystem, bank: &TestFunctionBank) -> Result<Self> {
        let (kind, moments) = match spec {
            MeasureSpec::Lebesgue => {
                if system.name() != "cat-map" {
                    return Err(Error::InvalidParameter("lebesgue reference requires the cat map".into()));
                }
                (ReferenceKind::Lebesgue, vec![0.0; bank.len()])
            }
            &MeasureSpec::Bernoulli { p } => {
                if system.name() != "affine-horseshoe" {
                    return Err(Error::InvalidParameter("bernoulli reference requires the affine horseshoe".into()));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!("bernoulli weight {p} outside [0, 1]")));
                }
                (ReferenceKind::Bernoulli { p }, bernoulli_moments(p, bank))
            }
            &MeasureSpec::LongOrbit { base, length } => {
                if length == 0 {
                    return Err(Error::InvalidParameter("long orbit length must be positive".into()));
                }
                let mut points = Vec::with_capacity(length);
                iterate_into(system, base, length, &mut points)?;
                let moments = bank.averages(&points);
                (ReferenceKind::LongOrbit { points }, moments)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
            bank_id: bank.id.clone(),
            moments,
        })
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn id(&self) -> String {
        self.spec.id()
    }

    /// Metric entropy when known in closed form.
    pub fn entropy(&self) -> Option<f64> {
        match &self.kind {
            ReferenceKind::Lebesgue => Some(((3.0 + 5f64.sqrt()) / 2.0).ln()),
            ReferenceKind::Bernoulli { p } => {
                let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
                Some(h(*p) + h(1.0 - p))
            }
            ReferenceKind::LongOrbit { .. } => None,
        }
    }

    /// `∫phi dmu`.
    pub fn integrate_potential(&self, phi: &Potential) -> f64 {
        match (&self.kind, phi) {
            (_, Potential::Constant { value }) => *value,
            (ReferenceKind::Lebesgue, Potential::Affine { cx, cy, c0 }) => 0.5 * cx + 0.5 * cy + c0,
            (ReferenceKind::Lebesgue, Potential::StripWeights { left, right }) => 0.5 * left + 0.5 * right,
            (ReferenceKind::Bernoulli { p }, Potential::Affine { cx, cy, c0 }) => {
                let mean = 3.0 * (1.0 - p) / (4.0 - 2.0 * p);
                cx * mean + cy * mean + c0
            }
            (ReferenceKind::Bernoulli { p }, Potential::StripWeights { left, right }) => p * left + (1.0 - p) * right,
            (ReferenceKind::LongOrbit { points }, phi) => {
                points.iter().map(|&q| phi.eval(q)).sum::<f64>() / points.len() as f64
            }
        }
    }

    /// `count` independent mu-distributed points.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Point> {
        match &self.kind {
            ReferenceKind::Lebesgue => (0..count).map(|_| [rng.gen(), rng.gen()]).collect(),
            ReferenceKind::Bernoulli { p } => (0..count)
                .map(|_| {
                    let mut future = [0u8; CHARACTERISTIC_DEPTH];
                    let mut past = [0u8; CHARACTERISTIC_DEPTH];
                    for s in future.iter_mut().chain(past.iter_mut()) {
                        *s = u8::from(rng.gen::<f64>() >= *p);
                    }
                    crate::dynamics::AffineHorseshoe::point_from_symbols(&future, &past)
                })
                .collect(),
            ReferenceKind::LongOrbit { points } => {
                (0..count).map(|_| points[rng.gen_range(0..points.len())]).collect()
            }
        }
    }
}

impl HasMoments for ReferenceMeasure {
    fn bank_id(&self) -> &str {
        &self.bank_id
    }

    fn moments(&self) -> &[f64] {
        &self.moments
    }
}

fn bernoulli_moments(p: f64, bank: &TestFunctionBank) -> Vec<f64> {
    // x and y are independent with the same marginal.
    let c1 = bernoulli_characteristic(p, TAU, CHARACTERISTIC_DEPTH);
    let c2 = bernoulli_characteristic(p, 2.0 * TAU, CHARACTERISTIC_DEPTH);
    bank.functions
        .iter()
        .map(|f| match f {
            TestFunction::CosX | TestFunction::CosY => c1.re,
            TestFunction::SinX | TestFunction::SinY => c1.im,
            TestFunction::CosXCosY => c1.re * c1.re,
            TestFunction::SinXSinY => c1.im * c1.im,
            TestFunction::Cos2X | TestFunction::Cos2Y => c2.re,
        })
        .collect()
}

/// The `(rho, s)` weak-* neighbourhood parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub rho: f64,
    pub s: usize,
}

impl NeighborhoodSpec {
    pub fn new(rho: f64, s: usize, bank: &TestFunctionBank) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        if s == 0 || s > bank.len() {
            return Err(Error::InvalidParameter(format!("s = {s} outside 1..={}", bank.len())));
        }
        Ok(Self { rho, s })
    }

    pub fn halved(self) -> Self {
        Self {
            rho: self.rho / 2.0,
            s: self.s,
        }
    }
}

fn check_bank(a: &str, b: &str, bank: &TestFunctionBank) -> Result<()> {
    if a != b {
        return Err(Error::BankMismatch(a.into(), b.into()));
    }
    if a != bank.id {
        return Err(Error::BankMismatch(a.into(), bank.id.clone()));
    }
    Ok(())
}

/// Largest discrepancy `max_{i<s} |nu(psi_i) - mu(psi_i)|`.
pub fn moment_discrepancy(nu: &dyn HasMoments, mu: &dyn HasMoments, s: usize) -> f64 {
    nu.moments()[..s]
        .iter()
        .zip(&mu.moments()[..s])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Strict membership in `O(mu, rho, s)`.
pub fn in_weak_star_neighborhood(
    nu: &dyn HasMoments,
    mu: &ReferenceMeasure,
    spec: NeighborhoodSpec,
    bank: &TestFunctionBank,
) -> Result<bool> {
    check_bank(nu.bank_id(), mu.bank_id(), bank)?;
    if spec.s > bank.len() {
        return Err(Error::InvalidParameter(format!("s = {} exceeds bank size", spec.s)));
    }
    Ok(nu.moments()[..spec.s]
        .iter()
        .zip(&mu.moments()[..spec.s])
        .all(|(a, b)| (a - b).abs() < spec.rho))
}

/// Whether the averages over the first `n` iterates are within `rho` (closed) of `mu`.
pub fn is_quasi_generic(
    x: Point,
    n: usize,
    spec: NeighborhoodSpec,
    mu: &ReferenceMeasure,
    system: &dyn MapSystem,
    bank: &TestFunctionBank,
) -> Result<bool> {
    check_bank(mu.bank_id(), &bank.id, bank)?;
    let mut orbit = Vec::with_capacity(n);
    iterate_into(system, x, n, &mut orbit)?;
    Ok(quasi_generic_on_window(&orbit, n, n, spec, mu.moments(), bank))
}

/// Quasi-genericity of `orbit[0]` for every `n` in `n0..=n1`, using prefix sums of
/// the first `spec.s` bank functions. `orbit` must hold at least `n1` points.
pub fn quasi_generic_on_window(
    orbit: &[Point],
    n0: usize,
    n1: usize,
    spec: NeighborhoodSpec,
    target: &[f64],
    bank: &TestFunctionBank,
) -> bool {
    let s = spec.s;
    let mut acc = vec![0.0; s];
    for (k, &p) in orbit[..n1].iter().enumerate() {
        bank.accumulate(p, &mut acc);
        let len = k + 1;
        if len >= n0 {
            let inv = 1.0 / len as f64;
            if acc.iter().zip(target).any(|(a, t)| (a * inv - t).abs() > spec.rho) {
                return false;
            }
        }
    }
    true
}

/// Result of [`filter_quasi_generic_set`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuasiGenericFilter {
    pub survivors: Vec<Point>,
    /// Input positions of the survivors.
    pub survivor_indices: Vec<usize>,
    /// `(input position, escape iterate)` for candidates whose orbit left the domain.
    pub escaped: Vec<(usize, usize)>,
}

impl QuasiGenericFilter {
    pub fn survivor_fraction(&self, total: usize) -> f64 {
        if total == 0 {
            0.0
        } else {
            self.survivors.len() as f64 / total as f64
        }
    }
}

/// Keeps candidates that are quasi-generic for every horizon in `[n0, nmax]`.
/// `spec` is used as given; callers pass the halved precision.
pub fn filter_quasi_generic_set(
    candidates: &[Point],
    n0: usize,
    nmax: usize,
    spec: NeighborhoodSpec,
    mu: &ReferenceMeasure,
    system: &dyn MapSystem,
    bank: &TestFunctionBank,
) -> Result<QuasiGenericFilter> {
    if n0 == 0 || n0 > nmax {
        return Err(Error::InvalidParameter(format!("window [{n0}, {nmax}] is empty")));
    }
    check_bank(mu.bank_id(), &bank.id, bank)?;
    let verdicts: Vec<std::result::Result<bool, usize>> = candidates
        .par_iter()
        .map_init(Vec::new, |buf, &x| match iterate_into(system, x, nmax, buf) {
            Ok(()) => Ok(quasi_generic_on_window(buf, n0, nmax, spec, mu.moments(), bank)),
            Err(Error::OrbitEscaped(k)) => Err(k),
            Err(_) => Err(0),
        })
        .collect();
    let mut out = QuasiGenericFilter::default();
    for (i, v) in verdicts.into_iter().enumerate() {
        match v {
            Ok(true) => {
                out.survivors.push(candidates[i]);
                out.survivor_indices.push(i);
            }
            Ok(false) => {}
            Err(k) => out.escaped.push((i, k)),
        }
    }
    Ok(out)
}

/// One-step growth factors `|Df(f^k x) e_k|` along the orbit where `e_k` is the
/// finite-time direction at `f^k x` picked by `pick`.
fn step_norms(
    orbit: &[Point],
    jac: impl Fn(Point) -> crate::linalg::Mat2,
    pick: impl Fn(Point) -> Result<Vec2>,
) -> Result<Vec<f64>> {
    orbit
        .iter()
        .map(|&p| {
            let e = pick(p)?;
            Ok(norm(jac(p).apply(e)))
        })
        .collect()
}

/// Finite-horizon membership of `x` in the Pesin set `Lambda_{chi, ell}`:
/// `|Df^n|E^s| <= ell e^{-n chi}`, `|Df^{-n}|E^u| <= ell e^{-n chi}` for `n <= horizon`,
/// and `angle(E^s, E^u) >= 1/ell`. Norms are products of one-step factors along the
/// finite-time splitting at each orbit point, so rounding in a single direction is not
/// amplified.
pub fn pesin_window_check(system: &dyn MapSystem, x: Point, ell: f64, chi: f64, horizon: usize) -> Result<bool> {
    if !(ell >= 1.0) || !(chi > 0.0) || horizon == 0 {
        return Err(Error::InvalidParameter("need ell >= 1, chi > 0, horizon >= 1".into()));
    }
    let report = finite_time_lyapunov(system, x, horizon)?;
    if report.min_abs < 1e-3 {
        return Err(Error::DegenerateSplitting(report.min_abs));
    }
    let here = splitting(system, x, horizon)?;
    let unstable = here.unstable.ok_or(Error::OrbitEscaped(0))?;
    if line_angle(here.stable, unstable) < 1.0 / ell {
        return Ok(false);
    }

    let mut forward = Vec::with_capacity(horizon);
    iterate_into(system, x, horizon, &mut forward)?;
    let stable_steps = step_norms(&forward, |p| system.jacobian(p), |p| {
        Ok(normalize(splitting(system, p, horizon)?.stable))
    })?;
    let backward = iterate_backward(system, x, horizon)?;
    let unstable_steps = step_norms(&backward, |p| system.inverse_jacobian(p), |p| {
        splitting(system, p, horizon)?.unstable.ok_or(Error::OrbitEscaped(0))
    })?;

    let log_ell = ell.ln();
    let (mut ls, mut lu) = (0.0, 0.0);
    for k in 0..horizon {
        ls += stable_steps[k].ln();
        lu += unstable_steps[k].ln();
        let bound = log_ell - (k + 1) as f64 * chi;
        if ls > bound || lu > bound {
            return Ok(false);
        }
    }
    Ok(true)
}
