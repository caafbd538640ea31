//! Full-shift coding of a horseshoe with variable return times: admissible periods,
//! periodic-orbit sums, the Bowen root and the two-sided pressure bounds.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::horseshoe::{AlekseevModel, ModelDocument};
use crate::linalg::Point;
use crate::logsum::{log_add_exp, log_sum_exp};
use crate::potential::Potential;
use crate::pressure_metric::{EstimateMethod, PressureEstimate};

/// Access to the true periodic orbits coded by words of a run-derived model.
pub trait OrbitContext: Sync {
    fn branch_count(&self) -> usize;

    /// Orbit (one full period) of the periodic point coded by the concatenated branches.
    fn periodic_orbit(&self, word: &[usize]) -> Result<Vec<Point>>;
}

/// Alphabet with return times `n_i` and weights `w_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub return_times: Vec<usize>,
    pub weights: Vec<f64>,
    /// Weights are exact by construction (no orbits behind them).
    pub synthetic: bool,
    /// `(n, rho)` of the run the model came from.
    pub window: Option<(usize, f64)>,
}

impl SymbolicModel {
    pub fn new(return_times: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if return_times.is_empty() {
            return Err(Error::EmptySet);
        }
        if return_times.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} return times but {} weights",
                return_times.len(),
                weights.len()
            )));
        }
        if return_times.contains(&0) {
            return Err(Error::InvalidParameter("return times must be positive".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(Self {
            return_times,
            weights,
            synthetic: true,
            window: None,
        })
    }

    pub fn with_window(mut self, n: usize, rho: f64) -> Self {
        self.window = Some((n, rho));
        self
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut model = Self::new(
            doc.branches.iter().map(|b| b.return_time).collect(),
            doc.branches.iter().map(|b| b.weight).collect(),
        )?;
        model.synthetic = false;
        model.window = Some((doc.n, doc.rho));
        Ok(model)
    }

    pub fn from_alekseev(model: &AlekseevModel) -> Result<Self> {
        Self::from_document(&model.document())
    }

    pub fn alphabet_size(&self) -> usize {
        self.return_times.len()
    }

    pub fn max_return_time(&self) -> usize {
        self.return_times.iter().copied().max().unwrap_or(0)
    }

    /// `w_i + c n_i`: the model of `phi + c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .zip(&self.return_times)
                .map(|(w, &n)| w + c * n as f64)
                .collect(),
            ..self.clone()
        }
    }

    /// Log of the summed `exp w_i` per return time.
    fn grouped(&self) -> BTreeMap<usize, f64> {
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&n, &w) in self.return_times.iter().zip(&self.weights) {
            groups.entry(n).or_default().push(w);
        }
        groups.into_iter().map(|(n, ws)| (n, log_sum_exp(&ws))).collect()
    }

    /// Multiplicity of each return time.
    fn time_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &n in &self.return_times {
            *counts.entry(n).or_insert(0) += 1;
        }
        counts
    }
}

/// Total lengths of words of length `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissiblePeriodSet {
    pub p: usize,
    pub periods: Vec<usize>,
}

pub fn admissible_periods(model: &SymbolicModel, p: usize) -> Result<AdmissiblePeriodSet> {
    if p == 0 {
        return Err(Error::InvalidParameter("word length must be positive".into()));
    }
    let times: Vec<usize> = model.time_counts().into_keys().collect();
    let top = model.max_return_time() * p;
    let mut reach = vec![false; top + 1];
    reach[0] = true;
    for _ in 0..p {
        let mut next = vec![false; top + 1];
        for (total, _) in reach.iter().enumerate().filter(|(_, &r)| r) {
            for &t in &times {
                if total + t <= top {
                    next[total + t] = true;
                }
            }
        }
        reach = next;
    }
    Ok(AdmissiblePeriodSet {
        p,
        periods: reach.iter().enumerate().filter(|(_, &r)| r).map(|(n, _)| n).collect(),
    })
}

/// Structural check of an admissible period set against the run window `[n, (1+rho) n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodBoundsCheck {
    pub p: usize,
    pub min_period: usize,
    pub max_period: usize,
    pub count: usize,
    /// `n p <= N <= n (1 + rho) p` for every period.
    pub range_ok: bool,
    /// `n p rho`.
    pub count_bound: f64,
    /// `count <= n p rho`.
    pub count_ok: bool,
}

pub fn check_period_bounds(set: &AdmissiblePeriodSet, n: usize, rho: f64) -> PeriodBoundsCheck {
    let p = set.p as f64;
    let lo = (n * set.p) as f64;
    let hi = n as f64 * (1.0 + rho) * p;
    let count_bound = n as f64 * p * rho;
    let tol = 1e-9;
    PeriodBoundsCheck {
        p: set.p,
        min_period: set.periods.first().copied().unwrap_or(0),
        max_period: set.periods.last().copied().unwrap_or(0),
        count: set.periods.len(),
        range_ok: set
            .periods
            .iter()
            .all(|&m| m as f64 >= lo && m as f64 <= hi * (1.0 + tol)),
        count_bound,
        count_ok: set.periods.len() as f64 <= count_bound * (1.0 + tol),
    }
}

/// `(ceil(N / (n (1 + rho))), floor(N / n))`: the possible word lengths of a period `N`.
pub fn word_count_bounds(total: usize, n: usize, rho: f64) -> Result<(usize, usize)> {
    if n == 0 || total < n || !(rho >= 0.0) {
        return Err(Error::InvalidParameter(format!("need N >= n >= 1 and rho >= 0 (N={total}, n={n}, rho={rho})")));
    }
    let ratio = total as f64 / (n as f64 * (1.0 + rho));
    let p_min = (ratio * (1.0 - 1e-12)).ceil() as usize;
    let p_max = total / n;
    if p_min > p_max {
        return Err(Error::InfeasiblePeriod(format!("N={total}: {p_min} > {p_max}")));
    }
    Ok((p_min, p_max))
}

/// `log C[N]` for `N = 0..=n_max`, where `C[N]` sums `exp(sum of weights)` over words
/// whose return times add up to `N`. Inadmissible lengths hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSumTable {
    pub log_c: Vec<f64>,
    pub n_max: usize,
}

impl PeriodicSumTable {
    pub fn admissible(&self, total: usize) -> bool {
        self.log_c.get(total).is_some_and(|v| v.is_finite())
    }
}

/// `C[0] = 1`, `C[N] = sum_i exp(w_i) C[N - n_i]`, with the symbols sharing a return time
/// merged first.
pub fn periodic_sum_table(model: &SymbolicModel, n_max: usize) -> Result<PeriodicSumTable> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("table horizon must be positive".into()));
    }
    let groups = model.grouped();
    let mut log_c = vec![f64::NEG_INFINITY; n_max + 1];
    log_c[0] = 0.0;
    let mut terms = Vec::with_capacity(groups.len());
    for total in 1..=n_max {
        terms.clear();
        for (&t, &g) in &groups {
            if t > total {
                break;
            }
            terms.push(g + log_c[total - t]);
        }
        log_c[total] = log_sum_exp(&terms);
    }
    Ok(PeriodicSumTable { log_c, n_max })
}

/// Largest `(1/N) log C[N]` over admissible `N` in `[n_max/2, n_max]`; the bracket holds
/// the values at the two largest admissible `N`.
pub fn pressure_periodic(model: &SymbolicModel, n_max: usize) -> Result<PressureEstimate> {
    if n_max < 4 * model.max_return_time() {
        return Err(Error::InvalidParameter(format!(
            "N_max = {n_max} is below 4 x the largest return time {}",
            model.max_return_time()
        )));
    }
    let table = periodic_sum_table(model, n_max)?;
    let start = n_max.div_ceil(2).max(1);
    let rates: Vec<(usize, f64)> = (start..=n_max)
        .filter(|&m| table.admissible(m))
        .map(|m| (m, table.log_c[m] / m as f64))
        .collect();
    if rates.is_empty() {
        return Err(Error::InfeasiblePeriod(format!("no admissible period in [{start}, {n_max}]")));
    }
    let value = rates.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
    let last = rates[rates.len() - 1].1;
    let prev = if rates.len() > 1 { rates[rates.len() - 2].1 } else { last };
    Ok(PressureEstimate {
        value,
        n: n_max,
        method: EstimateMethod::PeriodicSum,
        lower: last.min(prev),
        upper: last.max(prev),
    })
}

/// Unique `s` with `sum_i exp(w_i - s n_i) = 1`, by bisection to `1e-12`.
pub fn bowen_root(model: &SymbolicModel) -> f64 {
    let rates = model.weights.iter().zip(&model.return_times).map(|(w, &n)| w / n as f64);
    let lo_rate = rates.clone().fold(f64::INFINITY, f64::min);
    let hi_rate = rates.fold(f64::NEG_INFINITY, f64::max);
    let mut lo = lo_rate - 1.0;
    let mut hi = hi_rate + (model.alphabet_size() as f64).ln() + 1.0;
    let mut terms = vec![0.0; model.alphabet_size()];
    let mut log_sum = |s: f64| {
        for ((t, w), &n) in terms.iter_mut().zip(&model.weights).zip(&model.return_times) {
            *t = w - s * n as f64;
        }
        log_sum_exp(&terms)
    };
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_sum(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Margins of `S_N(phi + rho) >= sum w` and `S_N(phi - rho) <= sum w` over sampled words
/// of total length `N`, both reported as nonnegative-when-satisfied numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub total_length: usize,
    pub rho: f64,
    pub words: usize,
    /// `min [S_N(phi + rho) - sum w]`.
    pub lower_margin: f64,
    /// `min [sum w - S_N(phi - rho)]`.
    pub upper_margin: f64,
    pub passed: bool,
}

/// Log counts (unweighted) of words per total length.
fn log_word_counts(model: &SymbolicModel, n_max: usize) -> Vec<f64> {
    let counts = model.time_counts();
    let mut log_c = vec![f64::NEG_INFINITY; n_max + 1];
    log_c[0] = 0.0;
    for total in 1..=n_max {
        let mut acc = f64::NEG_INFINITY;
        for (&t, &m) in &counts {
            if t > total {
                break;
            }
            acc = log_add_exp(acc, (m as f64).ln() + log_c[total - t]);
        }
        log_c[total] = acc;
    }
    log_c
}

/// A uniformly random word of total length exactly `total`.
pub fn sample_word<R: Rng + ?Sized>(model: &SymbolicModel, total: usize, rng: &mut R) -> Result<Vec<usize>> {
    let log_c = log_word_counts(model, total);
    if !log_c[total].is_finite() {
        return Err(Error::InfeasiblePeriod(format!("no word of total length {total}")));
    }
    let mut by_time: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &t) in model.return_times.iter().enumerate() {
        by_time.entry(t).or_default().push(i);
    }
    let mut word = Vec::new();
    let mut left = total;
    while left > 0 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = None;
        for (&t, symbols) in &by_time {
            if t > left {
                break;
            }
            let weight = ((symbols.len() as f64).ln() + log_c[left - t] - log_c[left]).exp();
            acc += weight;
            chosen = Some((t, symbols));
            if u < acc {
                break;
            }
        }
        let (t, symbols) = chosen.ok_or_else(|| Error::InfeasiblePeriod(format!("stuck at {left}")))?;
        word.push(symbols[rng.gen_range(0..symbols.len())]);
        left -= t;
    }
    Ok(word)
}

/// Compares the weight of sampled words of total length `total` with the Birkhoff sum of
/// `phi + phi_shift` along the true periodic orbit they code. Synthetic models carry exact
/// weights, so both margins equal `N rho`.
#[allow(clippy::too_many_arguments)]
pub fn verify_balance<R: Rng + ?Sized>(
    model: &SymbolicModel,
    context: Option<&dyn OrbitContext>,
    phi: &Potential,
    total: usize,
    rho: f64,
    phi_shift: f64,
    words: usize,
    rng: &mut R,
) -> Result<BalanceReport> {
    if words == 0 {
        return Err(Error::InvalidParameter("need at least one word".into()));
    }
    let nr = total as f64 * rho;
    let mut lower_margin = f64::INFINITY;
    let mut upper_margin = f64::INFINITY;
    if model.synthetic {
        sample_word(model, total, rng)?;
        lower_margin = nr;
        upper_margin = nr;
    } else {
        let context = context.ok_or(Error::MissingOrbitContext)?;
        if context.branch_count() != model.alphabet_size() {
            return Err(Error::InvalidParameter("orbit context does not match the model".into()));
        }
        for _ in 0..words {
            let word = sample_word(model, total, rng)?;
            let orbit = context.periodic_orbit(&word)?;
            let birkhoff: f64 = orbit.iter().map(|&p| phi.eval(p)).sum::<f64>() + phi_shift * total as f64;
            let weight: f64 = word
                .iter()
                .map(|&i| model.weights[i] + phi_shift * model.return_times[i] as f64)
                .sum();
            lower_margin = lower_margin.min(birkhoff + nr - weight);
            upper_margin = upper_margin.min(weight - (birkhoff - nr));
        }
    }
    Ok(BalanceReport {
        total_length: total,
        rho,
        words: if model.synthetic { 1 } else { words },
        lower_margin,
        upper_margin,
        passed: lower_margin >= 0.0 && upper_margin >= 0.0,
    })
}

/// The two-sided bound on the model pressure in terms of the free energy of `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub pressure: f64,
    pub p_mu_hat: f64,
    pub phi_sup: f64,
    pub phi_inf: f64,
    pub rho: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `3 log(sum R_i) / N_max`, added on both sides.
    pub slack: f64,
    pub passed: bool,
}

/// `rho inf phi / (1 + rho) + (P_mu - 3 rho) / (1 + rho) <= P <= P_mu + 2 rho + rho sup phi`,
/// each side widened by the finite-size slack.
pub fn sandwich_check(
    model: &SymbolicModel,
    phi_sup: f64,
    phi_inf: f64,
    p_mu_hat: f64,
    rho: f64,
    n_max: usize,
) -> Result<SandwichReport> {
    let pressure = pressure_periodic(model, n_max)?.value;
    let saturate: usize = model.return_times.iter().sum();
    let slack = 3.0 * (saturate as f64).ln() / n_max as f64;
    let lower_bound = rho * phi_inf / (1.0 + rho) + (p_mu_hat - 3.0 * rho) / (1.0 + rho) - slack;
    let upper_bound = p_mu_hat + 2.0 * rho + rho * phi_sup + slack;
    Ok(SandwichReport {
        pressure,
        p_mu_hat,
        phi_sup,
        phi_inf,
        rho,
        lower_bound,
        upper_bound,
        slack,
        passed: lower_bound <= pressure && pressure <= upper_bound,
    })
}

/// A model in a family together with the free energy of the measure it approximates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub label: String,
    pub model: SymbolicModel,
    pub free_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCertificate {
    /// Largest Bowen root over the family.
    pub pressure: f64,
    /// Largest cycle average `max_i w_i / n_i`, the supremum of `∫phi` over the family.
    pub sup_integral: f64,
    pub gap: f64,
    pub positive: bool,
    pub free_energies: Vec<f64>,
    /// Running maximum of the free energies.
    pub running_max: Vec<f64>,
    pub best: usize,
}

/// Gaps at or below this are treated as zero.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

pub fn hyperbolic_potential_certificate(family: &[FamilyMember]) -> Result<PotentialCertificate> {
    if family.is_empty() {
        return Err(Error::EmptySet);
    }
    let pressure = family.iter().map(|m| bowen_root(&m.model)).fold(f64::NEG_INFINITY, f64::max);
    let sup_integral = family
        .iter()
        .flat_map(|m| m.model.weights.iter().zip(&m.model.return_times).map(|(w, &n)| w / n as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = pressure - sup_integral;
    let free_energies: Vec<f64> = family.iter().map(|m| m.free_energy).collect();
    let mut running_max = Vec::with_capacity(family.len());
    let mut best = 0;
    for (i, &f) in free_energies.iter().enumerate() {
        if f > free_energies[best] {
            best = i;
        }
        running_max.push(free_energies[best]);
    }
    Ok(PotentialCertificate {
        pressure,
        sup_integral,
        gap,
        positive: gap > CERTIFICATE_TOLERANCE,
        free_energies,
        running_max,
        best,
    })
}

/// Brute-force `log C[N]` by walking every word with total length at most `n_max`.
/// Exponential in `n_max`; meant for cross-checks on small models.
pub fn enumerate_word_sums(model: &SymbolicModel, n_max: usize) -> Vec<f64> {
    // Compensated sums per total length.
    let mut sum = vec![0.0; n_max + 1];
    let mut comp = vec![0.0; n_max + 1];
    let shift = model.weights.iter().copied().fold(0.0_f64, |a, w| a.max(w.abs()));
    fn walk(model: &SymbolicModel, total: usize, acc: f64, shift: f64, n_max: usize, sum: &mut [f64], comp: &mut [f64]) {
        // Stored as exp(acc - shift * total) to keep magnitudes near 1.
        let v = (acc - shift * total as f64).exp();
        let t = sum[total] + v;
        if sum[total].abs() >= v.abs() {
            comp[total] += (sum[total] - t) + v;
        } else {
            comp[total] += (v - t) + sum[total];
        }
        sum[total] = t;
        for (&n, &w) in model.return_times.iter().zip(&model.weights) {
            if total + n <= n_max {
                walk(model, total + n, acc + w, shift, n_max, sum, comp);
            }
        }
    }
    walk(model, 0, 0.0, shift, n_max, &mut sum, &mut comp);
    sum.iter()
        .zip(&comp)
        .enumerate()
        .map(|(total, (s, c))| {
            let v = s + c;
            if v > 0.0 {
                v.ln() + shift * total as f64
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// One row of the brute-force comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    #[serde(rename = "N")]
    pub total: usize,
    pub log_c_exact: f64,
    pub log_c_table: f64,
    pub diff: f64,
}

pub fn oracle_rows(model: &SymbolicModel, n_max: usize) -> Result<Vec<OracleRow>> {
    let exact = enumerate_word_sums(model, n_max);
    let table = periodic_sum_table(model, n_max)?;
    Ok(exact
        .iter()
        .zip(&table.log_c)
        .enumerate()
        .map(|(total, (&e, &t))| OracleRow {
            total,
            log_c_exact: e,
            log_c_table: t,
            diff: if e == t { 0.0 } else { (e - t).abs() },
        })
        .collect())
}

/// CSV with columns `N, log_C_exact, log_C_table, diff`.
pub fn oracle_csv(rows: &[OracleRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["N", "log_C_exact", "log_C_table", "diff"])
        .map_err(|e| Error::Document(e.to_string()))?;
    for r in rows {
        writer
            .write_record([
                r.total.to_string(),
                r.log_c_exact.to_string(),
                r.log_c_table.to_string(),
                r.diff.to_string(),
            ])
            .map_err(|e| Error::Document(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Document(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Document(e.to_string()))
}
