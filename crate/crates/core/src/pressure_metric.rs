//! Bowen balls, separated and spanning sets, and pressure estimators built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{iterate_into, MapSystem};
use crate::error::{Error, Result};
use crate::index::{Closeness, TrajectoryIndex};
use crate::linalg::Point;
use crate::logsum::log_sum_exp;
use crate::potential::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowenBallSpec {
    pub epsilon: f64,
    pub n: usize,
}

impl BowenBallSpec {
    pub fn new(epsilon: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0) || n == 0 {
            return Err(Error::InvalidParameter(format!("Bowen ball needs epsilon > 0 and n >= 1 (got {epsilon}, {n})")));
        }
        Ok(Self { epsilon, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    SeparatedSum,
    SpanningInf,
    PeriodicSum,
    BowenRoot,
}

/// A pressure value in nats per iterate with its horizon and bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureEstimate {
    pub value: f64,
    pub n: usize,
    pub method: EstimateMethod,
    pub lower: f64,
    pub upper: f64,
}

impl PressureEstimate {
    pub fn point(value: f64, n: usize, method: EstimateMethod) -> Self {
        Self {
            value,
            n,
            method,
            lower: value,
            upper: value,
        }
    }
}

/// An `(epsilon, n)`-separated subset of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSet {
    pub points: Vec<Point>,
    /// Sample positions of `points`.
    pub indices: Vec<usize>,
    pub spec: BowenBallSpec,
    pub maximal: bool,
    /// `(sample position, escape iterate)` of skipped points.
    pub escaped: Vec<(usize, usize)>,
}

impl SeparatedSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Flattened `n`-step trajectories of `points`, with positions of the kept points and
/// the escapes. Order follows the input.
pub struct Trajectories {
    pub data: Vec<f64>,
    pub kept: Vec<usize>,
    pub escaped: Vec<(usize, usize)>,
    pub n: usize,
}

impl Trajectories {
    pub fn compute(system: &dyn MapSystem, points: &[Point], n: usize) -> Self {
        let rows: Vec<std::result::Result<Vec<f64>, usize>> = points
            .par_iter()
            .map_init(Vec::new, |buf, &x| match iterate_into(system, x, n, buf) {
                Ok(()) => Ok(buf.iter().flat_map(|p| [p[0], p[1]]).collect()),
                Err(Error::OrbitEscaped(k)) => Err(k),
                Err(_) => Err(0),
            })
            .collect();
        let mut out = Self {
            data: Vec::with_capacity(points.len() * 2 * n),
            kept: Vec::with_capacity(points.len()),
            escaped: Vec::new(),
            n,
        };
        for (i, row) in rows.into_iter().enumerate() {
            match row {
                Ok(v) => {
                    out.data.extend_from_slice(&v);
                    out.kept.push(i);
                }
                Err(k) => out.escaped.push((i, k)),
            }
        }
        out
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * 2 * self.n..(k + 1) * 2 * self.n]
    }

    /// Birkhoff sums `S_n phi` of every kept row.
    pub fn birkhoff_sums(&self, phi: &Potential) -> Vec<f64> {
        (0..self.kept.len())
            .map(|k| self.row(k).chunks_exact(2).map(|c| phi.eval([c[0], c[1]])).sum())
            .collect()
    }

    pub fn into_index(self, system: &dyn MapSystem) -> (TrajectoryIndex, Vec<usize>, Vec<(usize, usize)>) {
        let dim = 2 * self.n;
        let index = TrajectoryIndex::build(self.data, dim, system.topology().period());
        (index, self.kept, self.escaped)
    }
}

/// Whether `y` lies in `B(x, epsilon, n)`: `dist(f^j x, f^j y) < epsilon` for `j < n`.
pub fn bowen_ball_contains(system: &dyn MapSystem, x: Point, y: Point, spec: BowenBallSpec) -> Result<bool> {
    let mut ox = Vec::with_capacity(spec.n);
    let mut oy = Vec::with_capacity(spec.n);
    iterate_into(system, x, spec.n, &mut ox)?;
    iterate_into(system, y, spec.n, &mut oy)?;
    Ok(ox.iter().zip(&oy).all(|(&a, &b)| system.metric(a, b) < spec.epsilon))
}

/// Every pair of distinct entries has some `j < n` with `dist(f^j x, f^j y) > epsilon`.
pub fn is_separated(system: &dyn MapSystem, points: &[Point], spec: BowenBallSpec) -> Result<bool> {
    let traj = Trajectories::compute(system, points, spec.n);
    if let Some(&(_, k)) = traj.escaped.first() {
        return Err(Error::OrbitEscaped(k));
    }
    let (mut index, _, _) = traj.into_index(system);
    for i in 0..index.len() {
        let q = index.vector(i).to_vec();
        if index.any_active_within(&q, spec.epsilon, Closeness::Closed) {
            return Ok(false);
        }
        index.activate(i);
    }
    Ok(true)
}

/// Greedy pass in input order: a point is kept iff it is separated from every point
/// kept before it. Escaping points are skipped and reported.
pub fn maximal_separated_set(system: &dyn MapSystem, sample: &[Point], spec: BowenBallSpec) -> Result<SeparatedSet> {
    let traj = Trajectories::compute(system, sample, spec.n);
    let (mut index, kept, escaped) = traj.into_index(system);
    let mut out = SeparatedSet {
        points: Vec::new(),
        indices: Vec::new(),
        spec,
        maximal: true,
        escaped,
    };
    for (k, &i) in kept.iter().enumerate() {
        let q = index.vector(k).to_vec();
        if !index.any_active_within(&q, spec.epsilon, Closeness::Closed) {
            index.activate(k);
            out.points.push(sample[i]);
            out.indices.push(i);
        }
    }
    Ok(out)
}

/// `(1/n) log sum_{x in E} exp S_n phi(x)`.
pub fn separated_pressure_sum(system: &dyn MapSystem, set: &SeparatedSet, phi: &Potential) -> Result<PressureEstimate> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = set.spec.n;
    let traj = Trajectories::compute(system, &set.points, n);
    if let Some(&(_, k)) = traj.escaped.first() {
        return Err(Error::OrbitEscaped(k));
    }
    let sums = traj.birkhoff_sums(phi);
    let value = log_sum_exp(&sums) / n as f64;
    Ok(PressureEstimate::point(value, n, EstimateMethod::SeparatedSum))
}

/// Outcome of the greedy spanning cover.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningCover {
    pub estimate: PressureEstimate,
    /// Sample positions of the chosen centres, in selection order.
    pub centers: Vec<usize>,
    /// Fraction of the full sample inside the chosen Bowen balls.
    pub coverage: f64,
    pub alpha: f64,
}

/// Greedy approximation of the infimum over `(epsilon, n, alpha)`-spanning sets of
/// `sum exp S_n phi`. Candidates are the sample points in ascending order of `S_n phi`
/// (stable), skipping those already covered, until a fraction `alpha` of the sample is
/// covered. `value = upper` is the sum over the chosen centres; `lower` is the sum over
/// a maximal `(2 epsilon, n)`-separated subset of them.
pub fn spanning_free_energy(
    system: &dyn MapSystem,
    mu_sample: &[Point],
    alpha: f64,
    spec: BowenBallSpec,
    phi: &Potential,
) -> Result<SpanningCover> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if mu_sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let total = mu_sample.len();
    let traj = Trajectories::compute(system, mu_sample, spec.n);
    let sums = traj.birkhoff_sums(phi);
    let (index, kept, _) = traj.into_index(system);

    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]));

    let need = alpha * total as f64;
    let mut covered = vec![false; kept.len()];
    let mut count = 0usize;
    let mut centers = Vec::new();
    for &k in &order {
        if (count as f64) >= need {
            break;
        }
        if covered[k] {
            continue;
        }
        centers.push(k);
        for j in index.within(index.vector(k), spec.epsilon, Closeness::Open) {
            if !covered[j] {
                covered[j] = true;
                count += 1;
            }
        }
    }
    let coverage = count as f64 / total as f64;
    if (count as f64) < need {
        return Err(Error::CoverageUnreachable { reached: coverage, alpha });
    }

    let n = spec.n as f64;
    let center_sums: Vec<f64> = centers.iter().map(|&k| sums[k]).collect();
    let upper = log_sum_exp(&center_sums) / n;

    // Dual: a (2 epsilon, n)-separated subset of the centres.
    let mut dual = TrajectoryIndex::build(
        centers.iter().flat_map(|&k| index.vector(k).to_vec()).collect(),
        index.dim(),
        system.topology().period(),
    );
    let mut dual_sums = Vec::new();
    for (c, &k) in centers.iter().enumerate() {
        let q = dual.vector(c).to_vec();
        if !dual.any_active_within(&q, 2.0 * spec.epsilon, Closeness::Closed) {
            dual.activate(c);
            dual_sums.push(sums[k]);
        }
    }
    let lower = log_sum_exp(&dual_sums) / n;

    Ok(SpanningCover {
        estimate: PressureEstimate {
            value: upper,
            n: spec.n,
            method: EstimateMethod::SpanningInf,
            lower,
            upper,
        },
        centers: centers.iter().map(|&k| kept[k]).collect(),
        coverage,
        alpha,
    })
}
