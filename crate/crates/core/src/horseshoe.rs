//! Rectangle covers, return detection into them, selection of the branch family and
//! the resulting horseshoe with variable return times.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{certified_horizon, iterate_into, AffineHorseshoe, ConePair, MapSystem, Topology};
use crate::error::{Error, Result};
use crate::index::{CellGrid, Closeness, TrajectoryIndex};
use crate::linalg::{CocycleAccumulator, Point};
use crate::logsum::log_sum_exp;
use crate::measures::{quasi_generic_on_window, HasMoments, NeighborhoodSpec, ReferenceMeasure, TestFunctionBank};
use crate::potential::Potential;
use crate::pressure_metric::{is_separated, BowenBallSpec, Trajectories};
use crate::symbolic::OrbitContext;

/// Axis-aligned box of diameter `delta` (max metric) around a centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub center: Point,
    pub half_width: [f64; 2],
}

/// Greedy covering of a sample by rectangles; `kappa` is the inner ball radius.
#[derive(Debug, Clone)]
pub struct RectangleCover {
    pub rectangles: Vec<Rectangle>,
    pub delta: f64,
    pub kappa: f64,
    pub lambda: f64,
    grid: CellGrid,
}

impl RectangleCover {
    pub fn len(&self) -> usize {
        self.rectangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rectangles.is_empty()
    }

    /// Rectangles whose open `kappa`-ball contains `p`, ascending.
    pub fn balls_containing(&self, system: &dyn MapSystem, p: Point) -> Vec<usize> {
        let kappa = self.kappa;
        self.grid.neighbours(p, |_, c| system.metric(c, p) < kappa)
    }
}

/// `min(rho / (2 Lip_s), gap / 2)` where `Lip_s` is the largest Lipschitz constant among
/// the first `s` bank functions and `gap` the strip gap of the system, if any.
pub fn default_delta(rho: f64, s: usize, bank: &TestFunctionBank, system: &dyn MapSystem) -> f64 {
    let moduli = rho / (2.0 * bank.max_lipschitz(s));
    match system.strip_gap() {
        Some(gap) => moduli.min(gap / 2.0),
        None => moduli,
    }
}

/// Walks the sample in order and opens a rectangle at every point not yet within
/// `kappa` of an existing centre.
pub fn build_rectangle_cover(
    system: &dyn MapSystem,
    sample: &[Point],
    delta: f64,
    kappa: f64,
    lambda: f64,
) -> Result<RectangleCover> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(kappa > 0.0 && kappa < delta / 2.0) {
        return Err(Error::InvalidParameter(format!("need 0 < kappa < delta/2, got kappa={kappa}, delta={delta}")));
    }
    if !(lambda > 1.0) {
        return Err(Error::InvalidParameter(format!("expansion floor must exceed 1, got {lambda}")));
    }
    let mut cover = RectangleCover {
        rectangles: Vec::new(),
        delta,
        kappa,
        lambda,
        grid: CellGrid::new(kappa, system.topology() == Topology::Torus),
    };
    for &p in sample {
        if cover.balls_containing(system, p).is_empty() {
            cover.grid.insert(p);
            cover.rectangles.push(Rectangle {
                center: p,
                half_width: [delta / 2.0; 2],
            });
        }
    }
    Ok(cover)
}

/// A return `f^R: S_x -> U_x` from the `kappa`-ball of a rectangle to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicBranch {
    pub base_point: Point,
    /// Position of the base point in the return-detection input.
    pub point_index: usize,
    pub rect_in: usize,
    pub rect_out: usize,
    pub return_time: usize,
    /// `S_R phi(x)`.
    pub birkhoff_weight: f64,
    /// `S_n phi(x)` over the base window.
    pub window_weight: f64,
    pub quasi_generic: bool,
    /// Precision at which quasi-genericity was tested.
    pub qg_spec: NeighborhoodSpec,
    pub cone_certified: bool,
    /// Birkhoff sums of the first `qg_spec.s` bank functions over `R` iterates.
    pub bank_sums: Vec<f64>,
}

/// Counts of candidates discarded during return detection, by first failed test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionTally {
    /// Points outside every `kappa`-ball.
    pub outside_cover: usize,
    pub escaped: usize,
    /// Points in a ball with no return in the window.
    pub no_return: usize,
    /// Returns (point, rectangle, time) failing the cone check.
    pub cone: usize,
    pub quasi_generic: usize,
    pub tube: usize,
}

impl RejectionTally {
    fn add(&mut self, other: &RejectionTally) {
        self.outside_cover += other.outside_cover;
        self.escaped += other.escaped;
        self.no_return += other.no_return;
        self.cone += other.cone;
        self.quasi_generic += other.quasi_generic;
        self.tube += other.tube;
    }
}

/// Parameters of a return scan.
#[derive(Debug, Clone, Copy)]
pub struct ReturnSearch<'a> {
    pub n: usize,
    pub rho: f64,
    pub phi: &'a Potential,
    pub mu: &'a ReferenceMeasure,
    pub bank: &'a TestFunctionBank,
    /// Weak-* neighbourhood of the run; branches are tested at half its radius.
    pub spec: NeighborhoodSpec,
    pub cones: ConePair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnScan {
    pub branches: Vec<HyperbolicBranch>,
    pub rejections: RejectionTally,
}

/// `floor((1 + rho) n)`, tolerant to representation error in `rho`.
pub fn max_return_time(n: usize, rho: f64) -> usize {
    let m = (1.0 + rho) * n as f64;
    (m * (1.0 + 1e-12)).floor() as usize
}

/// Scans every window time `m in [n, (1+rho) n]` for returns of each sample point to the
/// balls containing it. A return needs `f^m x` in the same ball and within `kappa/4` of a
/// sample point. It becomes a branch after the cone check, the quasi-genericity check at
/// half precision and the `delta/4` tube check, in that order. Per (point, rectangle)
/// only the earliest accepted return is kept. Output is sorted by
/// `(point index, return time, rectangle)`.
pub fn detect_returns(
    system: &dyn MapSystem,
    lambda0: &[Point],
    cover: &RectangleCover,
    search: &ReturnSearch,
) -> Result<ReturnScan> {
    if search.n == 0 {
        return Err(Error::InvalidParameter("base window must be positive".into()));
    }
    if !(search.rho >= 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {}", search.rho)));
    }
    if search.mu.bank_id() != search.bank.id {
        return Err(Error::BankMismatch(search.mu.bank_id().into(), search.bank.id.clone()));
    }
    let torus = system.topology() == Topology::Torus;
    let mut targets = CellGrid::new(cover.kappa / 4.0, torus);
    for &p in lambda0 {
        targets.insert(p);
    }
    let top = max_return_time(search.n, search.rho);
    let scans: Vec<Result<(Vec<HyperbolicBranch>, RejectionTally)>> = lambda0
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (idx, &x)| scan_point(system, cover, &targets, search, top, idx, x, buf))
        .collect();
    let mut out = ReturnScan {
        branches: Vec::new(),
        rejections: RejectionTally::default(),
    };
    for scan in scans {
        let (branches, tally) = scan?;
        out.branches.extend(branches);
        out.rejections.add(&tally);
    }
    out.branches
        .sort_by_key(|b| (b.point_index, b.return_time, b.rect_in));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn scan_point(
    system: &dyn MapSystem,
    cover: &RectangleCover,
    targets: &CellGrid,
    search: &ReturnSearch,
    top: usize,
    idx: usize,
    x: Point,
    orbit: &mut Vec<Point>,
) -> Result<(Vec<HyperbolicBranch>, RejectionTally)> {
    let mut tally = RejectionTally::default();
    let mut found = Vec::new();
    let balls = cover.balls_containing(system, x);
    if balls.is_empty() {
        tally.outside_cover += 1;
        return Ok((found, tally));
    }
    if iterate_into(system, x, top + 1, orbit).is_err() {
        tally.escaped += 1;
        return Ok((found, tally));
    }
    let near_target = |p: Point| {
        let r = cover.kappa / 4.0;
        targets.any_neighbour(p, |_, q| system.metric(p, q) <= r)
    };
    let half = search.spec.halved();
    let mut horizon: Option<usize> = None;
    let mut any_return = false;
    for &i in &balls {
        let center = cover.rectangles[i].center;
        for m in search.n..=top {
            if !(system.metric(orbit[m], center) < cover.kappa && near_target(orbit[m])) {
                continue;
            }
            any_return = true;
            let k = match horizon {
                Some(k) => k,
                None => {
                    let k = certified_horizon(system, &orbit[..=top], &search.cones, cover.lambda).unwrap_or(0);
                    horizon = Some(k);
                    k
                }
            };
            if k < m {
                tally.cone += 1;
                continue;
            }
            if !quasi_generic_on_window(orbit, m, m, half, search.mu.moments(), search.bank) {
                tally.quasi_generic += 1;
                continue;
            }
            if !tube_ok(system, &search.cones, &orbit[..=m], cover)? {
                tally.tube += 1;
                continue;
            }
            let mut bank_sums = vec![0.0; half.s];
            for &p in &orbit[..m] {
                search.bank.accumulate(p, &mut bank_sums);
            }
            let birkhoff_weight = orbit[..m].iter().map(|&p| search.phi.eval(p)).sum();
            let window_weight = orbit[..search.n].iter().map(|&p| search.phi.eval(p)).sum();
            found.push(HyperbolicBranch {
                base_point: x,
                point_index: idx,
                rect_in: i,
                rect_out: i,
                return_time: m,
                birkhoff_weight,
                window_weight,
                quasi_generic: true,
                qg_spec: half,
                cone_certified: true,
                bank_sums,
            });
            break;
        }
    }
    if !any_return {
        tally.no_return += 1;
    }
    Ok((found, tally))
}

/// Probes displaced by `h = min(kappa, delta/8)` along the stable axis at `x` (pushed
/// forward) and along the unstable axis at `f^m x` (pulled back) must stay within
/// `delta/4` of the orbit. Probes starting outside the domain are skipped.
fn tube_ok(system: &dyn MapSystem, cones: &ConePair, orbit: &[Point], cover: &RectangleCover) -> Result<bool> {
    let m = orbit.len() - 1;
    let h = cover.kappa.min(cover.delta / 8.0);
    let radius = cover.delta / 4.0;
    let es = cones.stable_axis(system, orbit[0])?;
    let eu = cones.unstable_axis(system, orbit[m])?;
    for sign in [1.0, -1.0] {
        let mut q = [orbit[0][0] + sign * h * es[0], orbit[0][1] + sign * h * es[1]];
        if system.in_domain(q) {
            for &target in &orbit[1..] {
                if !system.in_domain(q) {
                    return Ok(false);
                }
                q = system.forward(q);
                if system.metric(q, target) > radius {
                    return Ok(false);
                }
            }
        }
        let mut q = [orbit[m][0] + sign * h * eu[0], orbit[m][1] + sign * h * eu[1]];
        if system.in_backward_domain(q) {
            for &target in orbit[..m].iter().rev() {
                if !system.in_backward_domain(q) {
                    return Ok(false);
                }
                q = system.backward(q);
                if system.metric(q, target) > radius {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Run metadata carried into the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub rho: f64,
    pub lambda: f64,
    pub bank_id: String,
    pub mu_id: String,
}

/// The branch family `E` of one rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct AlekseevModel {
    pub branches: Vec<HyperbolicBranch>,
    pub n: usize,
    pub rho: f64,
    pub lambda: f64,
    pub delta: f64,
    /// The common rectangle of every branch.
    pub rectangle: usize,
    pub bank_id: String,
    pub mu_id: String,
    /// Size of the pooled separated set before grouping by rectangle.
    pub e0_size: usize,
    /// `log sum_{x in E0} exp S_n phi(x)`.
    pub e0_log_sum: f64,
    /// `(rectangle, log sum exp S_n phi)` of every nonempty group, ascending by rectangle.
    pub rect_log_sums: Vec<(usize, f64)>,
}

impl AlekseevModel {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.birkhoff_weight).collect()
    }

    pub fn return_times(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.return_time).collect()
    }

    pub fn document(&self) -> ModelDocument {
        ModelDocument {
            branches: self
                .branches
                .iter()
                .map(|b| BranchRecord {
                    base: b.base_point,
                    return_time: b.return_time,
                    weight: b.birkhoff_weight,
                    rect: b.rect_in,
                })
                .collect(),
            n: self.n,
            rho: self.rho,
            lambda: self.lambda,
            delta: self.delta,
            bank_id: self.bank_id.clone(),
            mu_id: self.mu_id.clone(),
        }
    }
}

/// Index of the largest sum; ties go to the lowest rectangle index.
pub fn argmax_rectangle(sums: &[(usize, f64)]) -> Option<usize> {
    let mut sorted = sums.to_vec();
    sorted.sort_by_key(|&(r, _)| r);
    let mut best: Option<(usize, f64)> = None;
    for (r, v) in sorted {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((r, v)),
        }
    }
    best.map(|(r, _)| r)
}

/// Pools the candidate base points, keeps a maximal `(delta, n)`-separated subset `E0`
/// (descending `S_n phi`, ties in normalized candidate order), groups `E0` by the
/// rectangles each point returns to and returns the group with the largest
/// `sum exp S_n phi`. A point returning to a rectangle at several times keeps the earliest.
pub fn select_branch_family(
    system: &dyn MapSystem,
    candidates: &[HyperbolicBranch],
    n: usize,
    delta: f64,
    meta: &ModelMeta,
) -> Result<AlekseevModel> {
    if candidates.is_empty() {
        return Err(Error::NoViableRectangle);
    }
    let spec = BowenBallSpec::new(delta, n)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&c| {
        let b = &candidates[c];
        (b.point_index, b.return_time, b.rect_in)
    });

    // Candidates grouped by base point, in normalized order.
    let mut by_point: Vec<Vec<usize>> = Vec::new();
    for &c in &order {
        match by_point.last_mut() {
            Some(group) if candidates[group[0]].point_index == candidates[c].point_index => group.push(c),
            _ => by_point.push(vec![c]),
        }
    }
    let mut point_order: Vec<usize> = (0..by_point.len()).collect();
    point_order.sort_by(|&a, &b| {
        let wa = candidates[by_point[a][0]].window_weight;
        let wb = candidates[by_point[b][0]].window_weight;
        wb.total_cmp(&wa)
    });

    let bases: Vec<Point> = point_order.iter().map(|&g| candidates[by_point[g][0]].base_point).collect();
    let traj = Trajectories::compute(system, &bases, n);
    if let Some(&(_, k)) = traj.escaped.first() {
        return Err(Error::OrbitEscaped(k));
    }
    let (mut index, _, _) = traj.into_index(system);
    let mut e0 = Vec::new();
    for (k, &g) in point_order.iter().enumerate() {
        let q = index.vector(k).to_vec();
        if !index.any_active_within(&q, spec.epsilon, Closeness::Closed) {
            index.activate(k);
            e0.push(g);
        }
    }
    drop(index);

    let e0_weights: Vec<f64> = e0.iter().map(|&g| candidates[by_point[g][0]].window_weight).collect();
    let e0_log_sum = log_sum_exp(&e0_weights);

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &g in &e0 {
        let mut seen: Vec<usize> = Vec::new();
        for &c in &by_point[g] {
            let r = candidates[c].rect_in;
            if !seen.contains(&r) {
                seen.push(r);
                groups.entry(r).or_default().push(c);
            }
        }
    }
    let rect_log_sums: Vec<(usize, f64)> = groups
        .iter()
        .map(|(&r, members)| {
            let w: Vec<f64> = members.iter().map(|&c| candidates[c].window_weight).collect();
            (r, log_sum_exp(&w))
        })
        .collect();
    let rectangle = argmax_rectangle(&rect_log_sums).ok_or(Error::NoViableRectangle)?;
    let branches = groups[&rectangle].iter().map(|&c| candidates[c].clone()).collect();
    Ok(AlekseevModel {
        branches,
        n,
        rho: meta.rho,
        lambda: meta.lambda,
        delta,
        rectangle,
        bank_id: meta.bank_id.clone(),
        mu_id: meta.mu_id.clone(),
        e0_size: e0.len(),
        e0_log_sum,
        rect_log_sums,
    })
}

/// `sum_i R_i`: the number of (branch, phase) slots of the saturate.
pub fn saturate_size(model: &AlekseevModel) -> usize {
    model.branches.iter().map(|b| b.return_time).sum()
}

/// One branch in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub base: Point,
    #[serde(rename = "R")]
    pub return_time: usize,
    pub weight: f64,
    pub rect: usize,
}

/// Serialized form of an [`AlekseevModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub branches: Vec<BranchRecord>,
    pub n: usize,
    pub rho: f64,
    pub lambda: f64,
    pub delta: f64,
    pub bank_id: String,
    pub mu_id: String,
}

impl ModelDocument {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }
}

/// Outcome of re-checking the model invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChecks {
    pub cone_certified: bool,
    pub quasi_generic: bool,
    pub return_window: bool,
    pub common_rectangle: bool,
    pub separated: bool,
}

impl ModelChecks {
    pub fn all_passed(&self) -> bool {
        self.cone_certified && self.quasi_generic && self.return_window && self.common_rectangle && self.separated
    }
}

pub fn verify_model_invariants(system: &dyn MapSystem, model: &AlekseevModel) -> Result<ModelChecks> {
    if model.is_empty() {
        return Err(Error::EmptySet);
    }
    let top = max_return_time(model.n, model.rho);
    let bases: Vec<Point> = model.branches.iter().map(|b| b.base_point).collect();
    Ok(ModelChecks {
        cone_certified: model.branches.iter().all(|b| b.cone_certified),
        quasi_generic: model.branches.iter().all(|b| b.quasi_generic),
        return_window: model
            .branches
            .iter()
            .all(|b| (model.n..=top).contains(&b.return_time)),
        common_rectangle: model
            .branches
            .iter()
            .all(|b| b.rect_in == model.rectangle && b.rect_out == model.rectangle),
        separated: is_separated(system, &bases, BowenBallSpec::new(model.delta, model.n)?)?,
    })
}

/// Words over `k` symbols of length `1..=max_len`: all of them when there are at most
/// `budget`, otherwise every single letter followed by uniformly drawn longer words.
pub fn model_words<R: Rng + ?Sized>(k: usize, max_len: usize, budget: usize, rng: &mut R) -> (Vec<Vec<usize>>, bool) {
    let mut total = 0usize;
    let mut per = 1usize;
    let mut fits = k > 0;
    for _ in 0..max_len {
        per = per.saturating_mul(k);
        total = total.saturating_add(per);
        if total > budget {
            fits = false;
            break;
        }
    }
    if fits {
        let mut words = Vec::with_capacity(total);
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..max_len {
            layer = layer
                .iter()
                .flat_map(|w| {
                    (0..k).map(move |i| {
                        let mut v = w.clone();
                        v.push(i);
                        v
                    })
                })
                .collect();
            words.extend(layer.iter().cloned());
        }
        return (words, true);
    }
    let mut words: Vec<Vec<usize>> = (0..k.min(budget)).map(|i| vec![i]).collect();
    while words.len() < budget && max_len > 1 {
        let len = rng.gen_range(2..=max_len);
        words.push((0..len).map(|_| rng.gen_range(0..k)).collect());
    }
    (words, false)
}

/// Empirical measures of periodic pseudo-orbits against `O(mu, 3 rho, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongApproximation {
    pub words: usize,
    pub max_len: usize,
    pub exhaustive: bool,
    pub s: usize,
    pub radius: f64,
    /// Largest discrepancy over the checked words.
    pub max_discrepancy: f64,
    /// Largest single-branch discrepancy; bounds every word by convexity.
    pub branch_bound: f64,
    pub passed: bool,
}

/// The average of the bank along the concatenated branch orbits of a word is the
/// `R`-weighted mean of the branch averages.
pub fn strong_approximation_check<R: Rng + ?Sized>(
    model: &AlekseevModel,
    mu: &ReferenceMeasure,
    s: usize,
    max_len: usize,
    budget: usize,
    rng: &mut R,
) -> Result<StrongApproximation> {
    if model.is_empty() {
        return Err(Error::EmptySet);
    }
    if mu.bank_id() != model.bank_id {
        return Err(Error::BankMismatch(model.bank_id.clone(), mu.bank_id().into()));
    }
    if model.branches.iter().any(|b| b.bank_sums.len() < s) {
        return Err(Error::InvalidParameter(format!("branches carry fewer than {s} bank sums")));
    }
    let target = &mu.moments()[..s];
    let discrepancy = |sums: &[f64], len: usize| {
        sums.iter()
            .zip(target)
            .map(|(a, t)| (a / len as f64 - t).abs())
            .fold(0.0, f64::max)
    };
    let branch_bound = model
        .branches
        .iter()
        .map(|b| discrepancy(&b.bank_sums[..s], b.return_time))
        .fold(0.0, f64::max);
    let (words, exhaustive) = model_words(model.len(), max_len, budget, rng);
    let max_discrepancy = words
        .par_iter()
        .map(|w| {
            let mut sums = vec![0.0; s];
            let mut len = 0;
            for &i in w {
                let b = &model.branches[i];
                for (acc, v) in sums.iter_mut().zip(&b.bank_sums) {
                    *acc += v;
                }
                len += b.return_time;
            }
            discrepancy(&sums, len)
        })
        .reduce(|| 0.0, f64::max);
    let radius = 3.0 * model.rho;
    Ok(StrongApproximation {
        words: words.len(),
        max_len,
        exhaustive,
        s,
        radius,
        max_discrepancy,
        branch_bound,
        passed: max_discrepancy < radius && branch_bound < radius,
    })
}

/// Minimal finite-time exponents of the derivative cocycle along periodic words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFloor {
    pub cycles: usize,
    pub min_exponent: f64,
    pub floor: f64,
    pub passed: bool,
}

/// Tolerance below `log lambda` allowed for cycle exponents.
pub const RATE_TOLERANCE: f64 = 0.05;

pub fn rate_floor_check<R: Rng + ?Sized>(
    system: &dyn MapSystem,
    model: &AlekseevModel,
    max_len: usize,
    budget: usize,
    rng: &mut R,
) -> Result<RateFloor> {
    if model.is_empty() {
        return Err(Error::EmptySet);
    }
    let (words, _) = model_words(model.len(), max_len, budget, rng);
    let exponents: Vec<Result<f64>> = words
        .par_iter()
        .map_init(Vec::new, |orbit, w| {
            let mut acc = CocycleAccumulator::new();
            for &i in w {
                let b = &model.branches[i];
                iterate_into(system, b.base_point, b.return_time, orbit)?;
                for &p in orbit.iter() {
                    if !acc.push(&system.jacobian(p)) {
                        return Err(Error::DegenerateCocycle);
                    }
                }
            }
            let [l1, l2] = acc.log_singular_values();
            Ok(l1.abs().min(l2.abs()) / acc.steps() as f64)
        })
        .collect();
    let mut min_exponent = f64::INFINITY;
    for e in exponents {
        min_exponent = min_exponent.min(e?);
    }
    let floor = model.lambda.ln() - RATE_TOLERANCE;
    Ok(RateFloor {
        cycles: words.len(),
        min_exponent,
        floor,
        passed: min_exponent >= floor,
    })
}

/// Branch itineraries of a horseshoe model; periodic words are realised by the point
/// whose itinerary repeats the concatenated branch itineraries.
#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeContext {
    itineraries: Vec<Vec<u8>>,
}

impl HorseshoeContext {
    pub fn from_model(model: &AlekseevModel) -> Result<Self> {
        let system = AffineHorseshoe;
        let itineraries = model
            .branches
            .iter()
            .map(|b| system.itinerary(b.base_point, b.return_time))
            .collect::<Result<_>>()?;
        Ok(Self { itineraries })
    }

    pub fn itinerary(&self, branch: usize) -> &[u8] {
        &self.itineraries[branch]
    }
}

impl OrbitContext for HorseshoeContext {
    fn branch_count(&self) -> usize {
        self.itineraries.len()
    }

    fn periodic_orbit(&self, word: &[usize]) -> Result<Vec<Point>> {
        if word.is_empty() {
            return Err(Error::InvalidParameter("empty word".into()));
        }
        let mut symbols = Vec::new();
        for &i in word {
            let it = self.itineraries.get(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.itineraries.len(),
            })?;
            symbols.extend_from_slice(it);
        }
        Ok(AffineHorseshoe::periodic_orbit(&symbols))
    }
}

/// Brute-force `(delta, n)` separation of base points through the trajectory index;
/// exposed for callers that only hold a model document.
pub fn documents_separated(system: &dyn MapSystem, doc: &ModelDocument) -> Result<bool> {
    let bases: Vec<Point> = doc.branches.iter().map(|b| b.base).collect();
    let traj = Trajectories::compute(system, &bases, doc.n);
    if let Some(&(_, k)) = traj.escaped.first() {
        return Err(Error::OrbitEscaped(k));
    }
    let dim = 2 * doc.n;
    let mut index = TrajectoryIndex::build(traj.data, dim, system.topology().period());
    for i in 0..index.len() {
        let q = index.vector(i).to_vec();
        if index.any_active_within(&q, doc.delta, Closeness::Closed) {
            return Ok(false);
        }
        index.activate(i);
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CatMap, ConeField, Rotation};
    use crate::measures::MeasureSpec;
    use crate::symbolic::OrbitContext;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank() -> TestFunctionBank {
        TestFunctionBank::trig8()
    }

    fn bernoulli() -> ReferenceMeasure {
        ReferenceMeasure::build(&MeasureSpec::Bernoulli { p: 0.5 }, &AffineHorseshoe, &bank()).unwrap()
    }

    fn branch(point_index: usize, rect: usize, r: usize, weight: f64, base: Point) -> HyperbolicBranch {
        HyperbolicBranch {
            base_point: base,
            point_index,
            rect_in: rect,
            rect_out: rect,
            return_time: r,
            birkhoff_weight: weight,
            window_weight: weight,
            quasi_generic: true,
            qg_spec: NeighborhoodSpec { rho: 0.1, s: 1 },
            cone_certified: true,
            bank_sums: vec![0.0],
        }
    }

    fn meta() -> ModelMeta {
        ModelMeta {
            rho: 0.5,
            lambda: 2.0,
            bank_id: "trig8".into(),
            mu_id: "bernoulli".into(),
        }
    }

    #[test]
    fn cover_examples() {
        let one = build_rectangle_cover(&CatMap, &[[0.3, 0.3]], 0.1, 0.02, 2.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.rectangles[0].center, [0.3, 0.3]);
        let two = build_rectangle_cover(&CatMap, &[[0.1, 0.1], [0.5, 0.5]], 0.1, 0.02, 2.0).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(build_rectangle_cover(&CatMap, &[], 0.1, 0.02, 2.0).unwrap_err(), Error::EmptySample);
        assert!(build_rectangle_cover(&CatMap, &[[0.1, 0.1]], 0.1, 0.05, 2.0).is_err());
        assert!(build_rectangle_cover(&CatMap, &[[0.1, 0.1]], 0.1, 0.02, 1.0).is_err());
    }

    #[test]
    fn cat_cover_regression_and_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<Point> = (0..1000).map(|_| [rng.gen(), rng.gen()]).collect();
        let cover = build_rectangle_cover(&CatMap, &sample, 0.1, 0.02, 2.0).unwrap();
        // Postcondition: every sample point is within kappa of some centre (oracle: scan).
        for &p in &sample {
            assert!(cover.rectangles.iter().any(|r| CatMap.metric(r.center, p) < 0.02));
        }
        // Centres are pairwise at least kappa apart, so at most (1/kappa)^2 of them.
        for (i, a) in cover.rectangles.iter().enumerate() {
            for b in &cover.rectangles[i + 1..] {
                assert!(CatMap.metric(a.center, b.center) >= 0.02);
            }
        }
        assert!(cover.len() >= 100 && cover.len() <= 2500);
        let again = build_rectangle_cover(&CatMap, &sample, 0.1, 0.02, 2.0).unwrap();
        assert_eq!(again.rectangles, cover.rectangles);
        // Oracle: the same greedy walk with a linear scan over centres.
        let mut centres: Vec<Point> = Vec::new();
        for &p in &sample {
            if !centres.iter().any(|&c| CatMap.metric(c, p) < 0.02) {
                centres.push(p);
            }
        }
        assert_eq!(cover.rectangles.iter().map(|r| r.center).collect::<Vec<_>>(), centres);
        assert_eq!(cover.len(), 563);
    }

    fn loose_search<'a>(n: usize, rho: f64, phi: &'a Potential, mu: &'a ReferenceMeasure, bank: &'a TestFunctionBank, cones: ConePair) -> ReturnSearch<'a> {
        ReturnSearch {
            n,
            rho,
            phi,
            mu,
            bank,
            // Bank functions are bounded by 1, so radius 4 accepts every orbit.
            spec: NeighborhoodSpec { rho: 4.0, s: 1 },
            cones,
        }
    }

    #[test]
    fn fixed_point_returns_every_step() {
        let (bank, mu, phi) = (bank(), bernoulli(), Potential::zero());
        let cover = build_rectangle_cover(&AffineHorseshoe, &[[0.0, 0.0]], 0.1, 0.04, 2.0).unwrap();
        let search = loose_search(1, 0.0, &phi, &mu, &bank, AffineHorseshoe.default_cones());
        let scan = detect_returns(&AffineHorseshoe, &[[0.0, 0.0]], &cover, &search).unwrap();
        assert_eq!(scan.branches.len(), 1);
        assert_eq!(scan.branches[0].return_time, 1);
    }

    #[test]
    fn short_periodic_words_return() {
        // Oracle: periodic points of every word of length 2 and 3 return exactly.
        let mut points = Vec::new();
        for len in [2usize, 3] {
            for code in 0..(1u32 << len) {
                let word: Vec<u8> = (0..len).map(|j| ((code >> j) & 1) as u8).collect();
                points.push(AffineHorseshoe::periodic_orbit(&word)[0]);
            }
        }
        let (bank, mu, phi) = (bank(), bernoulli(), Potential::zero());
        let cover = build_rectangle_cover(&AffineHorseshoe, &points, 0.02, 0.005, 2.0).unwrap();
        let search = loose_search(2, 0.6, &phi, &mu, &bank, AffineHorseshoe.default_cones());
        let scan = detect_returns(&AffineHorseshoe, &points, &cover, &search).unwrap();
        let times: Vec<usize> = scan.branches.iter().map(|b| b.return_time).collect();
        assert!(times.contains(&2) && times.contains(&3));
        assert!(times.iter().all(|&r| (2..=3).contains(&r)));
    }

    #[test]
    fn rotation_has_no_branches() {
        let rotation = Rotation::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample: Vec<Point> = (0..400)
            .map(|_| [0.5 + 0.3 * (rng.gen::<f64>() - 0.5), 0.5 + 0.3 * (rng.gen::<f64>() - 0.5)])
            .collect();
        let orbit: Vec<Point> = crate::dynamics::iterate(&rotation, [0.6, 0.5], 2000).unwrap().points().to_vec();
        let bank = bank();
        let mu = ReferenceMeasure::build(
            &MeasureSpec::LongOrbit { base: [0.6, 0.5], length: 2000 },
            &rotation,
            &bank,
        )
        .unwrap();
        assert_eq!(orbit.len(), 2000);
        let phi = Potential::zero();
        let cover = build_rectangle_cover(&rotation, &sample, 0.1, 0.04, 2.0).unwrap();
        let cones = ConePair::new(ConeField::fixed([1.0, 0.0], 0.3), ConeField::fixed([0.0, 1.0], 0.3)).unwrap();
        let search = loose_search(3, 2.0, &phi, &mu, &bank, cones);
        let scan = detect_returns(&rotation, &sample, &cover, &search).unwrap();
        assert!(scan.branches.is_empty());
        assert!(scan.rejections.cone > 0);
        assert_eq!(scan.rejections.quasi_generic + scan.rejections.tube, 0);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_rectangle(&[(0, 1.0), (1, 2.5)]), Some(1));
        assert_eq!(argmax_rectangle(&[(7, 2.0), (3, 2.0)]), Some(3));
        assert_eq!(argmax_rectangle(&[]), None);
    }

    #[test]
    fn separated_single_rectangle_keeps_everything() {
        let words: [&[u8]; 3] = [&[0, 0, 1], &[0, 1, 0], &[0, 1, 1]];
        let cands: Vec<_> = words
            .iter()
            .enumerate()
            .map(|(i, w)| branch(i, 0, 3, 0.0, AffineHorseshoe::point_from_symbols(w, &[0])))
            .collect();
        let model = select_branch_family(&AffineHorseshoe, &cands, 3, 0.3, &meta()).unwrap();
        assert_eq!(model.len(), 3);
        assert_eq!(model.rectangle, 0);
        assert_eq!(saturate_size(&model), 9);
    }

    #[test]
    fn heavier_rectangle_wins_and_ties_go_low() {
        let p = |w: &[u8]| AffineHorseshoe::point_from_symbols(w, &[0]);
        let cands = vec![
            branch(0, 7, 2, 1.0, p(&[0, 0])),
            branch(1, 3, 2, 1.0, p(&[1, 1])),
        ];
        let model = select_branch_family(&AffineHorseshoe, &cands, 2, 0.3, &meta()).unwrap();
        assert_eq!(model.rectangle, 3);
        let cands = vec![
            branch(0, 0, 2, 1.0, p(&[0, 0])),
            branch(1, 1, 2, 2.5, p(&[1, 1])),
        ];
        let model = select_branch_family(&AffineHorseshoe, &cands, 2, 0.3, &meta()).unwrap();
        assert_eq!(model.rectangle, 1);
        assert_eq!(select_branch_family(&AffineHorseshoe, &[], 2, 0.3, &meta()).unwrap_err(), Error::NoViableRectangle);
    }

    #[test]
    fn duplicate_points_collapse() {
        let x = AffineHorseshoe::point_from_symbols(&[0, 1, 0], &[1]);
        let cands = vec![branch(0, 0, 3, 0.0, x), branch(0, 0, 4, 0.0, x), branch(1, 0, 3, 0.0, x)];
        let model = select_branch_family(&AffineHorseshoe, &cands, 3, 0.3, &meta()).unwrap();
        assert_eq!(model.len(), 1);
        assert_eq!(model.branches[0].return_time, 3);
        assert_eq!(model.e0_size, 1);
    }

    #[test]
    fn saturate_sizes() {
        let mk = |rs: &[usize]| {
            let cands: Vec<_> = rs
                .iter()
                .enumerate()
                .map(|(i, &r)| branch(i, 0, r, 0.0, [0.0, 0.0]))
                .collect();
            AlekseevModel {
                branches: cands,
                n: 1,
                rho: 0.0,
                lambda: 2.0,
                delta: 0.1,
                rectangle: 0,
                bank_id: "trig8".into(),
                mu_id: "m".into(),
                e0_size: rs.len(),
                e0_log_sum: 0.0,
                rect_log_sums: vec![],
            }
        };
        assert_eq!(saturate_size(&mk(&[1])), 1);
        assert_eq!(saturate_size(&mk(&[2, 3])), 5);
        assert_eq!(saturate_size(&mk(&[4, 4, 5])), 13);
    }

    #[test]
    fn word_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (words, exhaustive) = model_words(2, 3, 100, &mut rng);
        assert!(exhaustive);
        assert_eq!(words.len(), 2 + 4 + 8);
        let (words, exhaustive) = model_words(50, 6, 200, &mut rng);
        assert!(!exhaustive);
        assert_eq!(words.len(), 200);
        assert!(words[..50].iter().enumerate().all(|(i, w)| w == &vec![i]));
    }

    fn horseshoe_run() -> (AlekseevModel, ReferenceMeasure) {
        let (bank, mu, phi) = (bank(), bernoulli(), Potential::zero());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample = mu.sample(&mut rng, 20_000);
        let spec = NeighborhoodSpec::new(0.5, 1, &bank).unwrap();
        let cover = build_rectangle_cover(&AffineHorseshoe, &sample, 0.3, 0.14, 2.0).unwrap();
        let search = ReturnSearch {
            n: 6,
            rho: 0.5,
            phi: &phi,
            mu: &mu,
            bank: &bank,
            spec,
            cones: AffineHorseshoe.default_cones(),
        };
        let scan = detect_returns(&AffineHorseshoe, &sample, &cover, &search).unwrap();
        let meta = ModelMeta {
            rho: 0.5,
            lambda: 2.0,
            bank_id: bank.id.clone(),
            mu_id: mu.id(),
        };
        let model = select_branch_family(&AffineHorseshoe, &scan.branches, 6, 0.3, &meta).unwrap();
        (model, mu)
    }

    #[test]
    fn horseshoe_model_invariants() {
        let (model, mu) = horseshoe_run();
        assert!(model.len() > 5);
        let checks = verify_model_invariants(&AffineHorseshoe, &model).unwrap();
        assert!(checks.all_passed(), "{checks:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sa = strong_approximation_check(&model, &mu, 1, 6, 2000, &mut rng).unwrap();
        assert!(sa.passed, "{sa:?}");
        assert!(sa.max_discrepancy <= sa.branch_bound + 1e-12);
        let rate = rate_floor_check(&AffineHorseshoe, &model, 6, 300, &mut rng).unwrap();
        // Every cycle of the affine horseshoe has exponents exactly +-log 3.
        assert!((rate.min_exponent - 3f64.ln()).abs() < 1e-9);
        assert!(rate.passed);
    }

    #[test]
    fn horseshoe_context_reproduces_itineraries() {
        let (model, _) = horseshoe_run();
        let ctx = HorseshoeContext::from_model(&model).unwrap();
        assert_eq!(ctx.branch_count(), model.len());
        let word = [0usize, 1, 0];
        let orbit = ctx.periodic_orbit(&word).unwrap();
        let expected: Vec<u8> = word.iter().flat_map(|&i| ctx.itinerary(i).to_vec()).collect();
        let symbols: Vec<u8> = orbit.iter().map(|&p| AffineHorseshoe::symbol_of(p)).collect();
        assert_eq!(symbols, expected);
        // Periodicity under the map itself.
        let back = AffineHorseshoe.forward(*orbit.last().unwrap());
        assert!(AffineHorseshoe.metric(back, orbit[0]) < 1e-9);
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let (model, _) = horseshoe_run();
        let doc = model.document();
        let text = doc.to_json().unwrap();
        let back = ModelDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        for (a, b) in back.branches.iter().zip(&doc.branches) {
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
            assert_eq!(a.base[0].to_bits(), b.base[0].to_bits());
        }
        assert!(text.contains("\"R\""));
        assert!(documents_separated(&AffineHorseshoe, &doc).unwrap());
        assert!(ModelDocument::from_json("{\"branches\": [], \"extra\": 1}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn selection_ignores_candidate_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cands: Vec<_> = (0..30)
                .map(|i| {
                    let w: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2)).collect();
                    let weight = f64::from(rng.gen_range(0..3u8));
                    branch(i, rng.gen_range(0..3), 4, weight, AffineHorseshoe::point_from_symbols(&w, &[0]))
                })
                .collect();
            let mut shuffled = cands.clone();
            shuffled.reverse();
            let a = select_branch_family(&AffineHorseshoe, &cands, 4, 0.3, &meta()).unwrap();
            let b = select_branch_family(&AffineHorseshoe, &shuffled, 4, 0.3, &meta()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
