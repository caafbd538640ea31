//! Spatial indices for Bowen-ball queries.
//!
//! [`TrajectoryIndex`] is a static kd-tree over orbit segments flattened into
//! vectors `(x_0, y_0, ..., x_{n-1}, y_{n-1})`; two points lie in each other's Bowen
//! ball exactly when these vectors are close in the sup norm. Items start inactive
//! and can be activated one by one, which is what greedy separated-set passes need.
//! [`CellGrid`] is a uniform grid for two-dimensional radius queries.

use std::collections::HashMap;

use crate::linalg::Point;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    /// Range into `order`.
    start: usize,
    end: usize,
    /// Children; `usize::MAX` marks a leaf.
    left: usize,
    right: usize,
    parent: usize,
    active: u32,
}

/// Static kd-tree over flattened trajectories, sup-norm queries.
#[derive(Debug, Clone)]
pub struct TrajectoryIndex {
    dim: usize,
    period: Option<f64>,
    data: Vec<f64>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    /// Per node, `[lo_0, hi_0, lo_1, hi_1, ...]`.
    bounds: Vec<f64>,
    leaf_of: Vec<u32>,
    active: Vec<bool>,
}

/// Sup-norm comparison used by queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closeness {
    /// Every coordinate gap `< eps` (Bowen-ball membership).
    Open,
    /// Every coordinate gap `<= eps` (failure of separation).
    Closed,
}

impl Closeness {
    #[inline]
    fn ok(self, gap: f64, eps: f64) -> bool {
        match self {
            Closeness::Open => gap < eps,
            Closeness::Closed => gap <= eps,
        }
    }
}

#[inline]
fn gap(period: Option<f64>, a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    match period {
        None => d,
        Some(p) => {
            let d = d.rem_euclid(p);
            d.min(p - d)
        }
    }
}

impl TrajectoryIndex {
    /// `trajectories` holds one flattened vector of length `dim` per item.
    pub fn build(trajectories: Vec<f64>, dim: usize, period: Option<f64>) -> Self {
        assert!(dim > 0 && trajectories.len().is_multiple_of(dim));
        let count = trajectories.len() / dim;
        let mut index = Self {
            dim,
            period,
            data: trajectories,
            order: (0..count as u32).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
            leaf_of: vec![0; count],
            active: vec![false; count],
        };
        if count > 0 {
            index.split(0, count, usize::MAX);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, item: usize) -> &[f64] {
        &self.data[item * self.dim..(item + 1) * self.dim]
    }

    fn split(&mut self, start: usize, end: usize, parent: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            left: usize::MAX,
            right: usize::MAX,
            parent,
            active: 0,
        });
        let dim = self.dim;
        let mut bounds = vec![0.0; 2 * dim];
        for d in 0..dim {
            bounds[2 * d] = f64::INFINITY;
            bounds[2 * d + 1] = f64::NEG_INFINITY;
        }
        for &item in &self.order[start..end] {
            let v = &self.data[item as usize * dim..(item as usize + 1) * dim];
            for d in 0..dim {
                bounds[2 * d] = bounds[2 * d].min(v[d]);
                bounds[2 * d + 1] = bounds[2 * d + 1].max(v[d]);
            }
        }
        let (mut best, mut spread) = (0, -1.0);
        for d in 0..dim {
            let s = bounds[2 * d + 1] - bounds[2 * d];
            if s > spread {
                best = d;
                spread = s;
            }
        }
        self.bounds.extend_from_slice(&bounds);

        if end - start <= LEAF_SIZE || spread <= 0.0 {
            for &item in &self.order[start..end] {
                self.leaf_of[item as usize] = id as u32;
            }
            return id;
        }
        let mid = (start + end) / 2;
        let data = &self.data;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let (va, vb) = (data[a as usize * dim + best], data[b as usize * dim + best]);
            va.total_cmp(&vb).then(a.cmp(&b))
        });
        let left = self.split(start, mid, id);
        let right = self.split(mid, end, id);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    pub fn is_active(&self, item: usize) -> bool {
        self.active[item]
    }

    pub fn activate(&mut self, item: usize) {
        if self.active[item] {
            return;
        }
        self.active[item] = true;
        let mut node = self.leaf_of[item] as usize;
        while node != usize::MAX {
            self.nodes[node].active += 1;
            node = self.nodes[node].parent;
        }
    }

    #[inline]
    fn box_gap(&self, node: usize, query: &[f64], eps: f64, mode: Closeness) -> bool {
        let b = &self.bounds[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        query.iter().enumerate().all(|(d, &q)| {
            let (lo, hi) = (b[2 * d], b[2 * d + 1]);
            let g = if q >= lo && q <= hi {
                0.0
            } else {
                match self.period {
                    None => (lo - q).max(q - hi),
                    Some(_) => gap(self.period, q, lo).min(gap(self.period, q, hi)),
                }
            };
            mode.ok(g, eps)
        })
    }

    #[inline]
    fn close(&self, item: usize, query: &[f64], eps: f64, mode: Closeness) -> bool {
        self.vector(item)
            .iter()
            .zip(query)
            .all(|(&a, &b)| mode.ok(gap(self.period, a, b), eps))
    }

    /// Whether some active item is within `eps` of `query`.
    pub fn any_active_within(&self, query: &[f64], eps: f64, mode: Closeness) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let n = &self.nodes[node];
            if n.active == 0 || !self.box_gap(node, query, eps, mode) {
                continue;
            }
            if n.left == usize::MAX {
                if self.order[n.start..n.end]
                    .iter()
                    .any(|&i| self.active[i as usize] && self.close(i as usize, query, eps, mode))
                {
                    return true;
                }
            } else {
                stack.push(n.right);
                stack.push(n.left);
            }
        }
        false
    }

    /// All items (active or not) within `eps` of `query`, ascending.
    pub fn within(&self, query: &[f64], eps: f64, mode: Closeness) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if !self.box_gap(node, query, eps, mode) {
                continue;
            }
            let n = &self.nodes[node];
            if n.left == usize::MAX {
                out.extend(
                    self.order[n.start..n.end]
                        .iter()
                        .map(|&i| i as usize)
                        .filter(|&i| self.close(i, query, eps, mode)),
                );
            } else {
                stack.push(n.right);
                stack.push(n.left);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Uniform grid over the plane or the unit torus for radius queries in the max metric.
#[derive(Debug, Clone)]
pub struct CellGrid {
    cell: f64,
    /// Number of cells per side on the torus.
    wrap: Option<i64>,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point>,
}

impl CellGrid {
    /// Grid answering queries of radius up to `radius`.
    pub fn new(radius: f64, torus: bool) -> Self {
        assert!(radius > 0.0);
        let (cell, wrap) = if torus {
            let m = ((1.0 / radius).floor() as i64).max(1);
            (1.0 / m as f64, Some(m))
        } else {
            (radius, None)
        };
        Self {
            cell,
            wrap,
            cells: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        let k = |c: f64| {
            let i = (c / self.cell).floor() as i64;
            match self.wrap {
                Some(m) => i.rem_euclid(m),
                None => i,
            }
        };
        (k(p[0]), k(p[1]))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> Point {
        self.points[id]
    }

    /// Inserts `p` and returns its id (insertion rank).
    pub fn insert(&mut self, p: Point) -> usize {
        let id = self.points.len();
        self.points.push(p);
        let key = self.key(p);
        self.cells.entry(key).or_default().push(id);
        id
    }

    /// Ids of stored points passing `accept` among the 3x3 cells around `p`, ascending.
    pub fn neighbours(&self, p: Point, mut accept: impl FnMut(usize, Point) -> bool) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .cell_keys(p)
            .iter()
            .filter_map(|k| self.cells.get(k))
            .flatten()
            .copied()
            .filter(|&id| accept(id, self.points[id]))
            .collect();
        out.sort_unstable();
        out
    }

    /// Whether any point in the 3x3 block around `p` passes `accept`; stops at the first.
    pub fn any_neighbour(&self, p: Point, mut accept: impl FnMut(usize, Point) -> bool) -> bool {
        self.cell_keys(p)
            .iter()
            .filter_map(|k| self.cells.get(k))
            .flatten()
            .any(|&id| accept(id, self.points[id]))
    }

    fn cell_keys(&self, p: Point) -> Vec<(i64, i64)> {
        let (cx, cy) = self.key(p);
        let mut keys = Vec::with_capacity(9);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let k = match self.wrap {
                    Some(m) => ((cx + dx).rem_euclid(m), (cy + dy).rem_euclid(m)),
                    None => (cx + dx, cy + dy),
                };
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_within(data: &[f64], dim: usize, period: Option<f64>, q: &[f64], eps: f64, mode: Closeness) -> Vec<usize> {
        (0..data.len() / dim)
            .filter(|&i| {
                data[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(q)
                    .all(|(&a, &b)| mode.ok(gap(period, a, b), eps))
            })
            .collect()
    }

    #[test]
    fn empty_index() {
        let idx = TrajectoryIndex::build(Vec::new(), 4, None);
        assert!(idx.is_empty());
        assert!(!idx.any_active_within(&[0.0; 4], 1.0, Closeness::Closed));
        assert!(idx.within(&[0.0; 4], 1.0, Closeness::Closed).is_empty());
    }

    #[test]
    fn open_and_closed_differ_on_the_boundary() {
        let mut idx = TrajectoryIndex::build(vec![0.0, 0.0, 0.5, 0.5], 2, None);
        idx.activate(1);
        assert!(idx.any_active_within(&[0.25, 0.5], 0.25, Closeness::Closed));
        assert!(!idx.any_active_within(&[0.25, 0.5], 0.25, Closeness::Open));
        assert!(!idx.any_active_within(&[0.0, 0.0], 0.1, Closeness::Closed));
    }

    #[test]
    fn torus_wraps() {
        let idx = TrajectoryIndex::build(vec![0.02, 0.5], 2, Some(1.0));
        assert_eq!(idx.within(&[0.97, 0.5], 0.1, Closeness::Open), vec![0]);
        let flat = TrajectoryIndex::build(vec![0.02, 0.5], 2, None);
        assert!(flat.within(&[0.97, 0.5], 0.1, Closeness::Open).is_empty());
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for torus in [false, true] {
            let mut grid = CellGrid::new(0.07, torus);
            let pts: Vec<Point> = (0..2000).map(|_| [rng.gen(), rng.gen()]).collect();
            for &p in &pts {
                grid.insert(p);
            }
            let dist = |a: Point, b: Point| {
                let period = if torus { Some(1.0) } else { None };
                gap(period, a[0], b[0]).max(gap(period, a[1], b[1]))
            };
            for _ in 0..200 {
                let q = [rng.gen(), rng.gen()];
                let got = grid.neighbours(q, |_, p| dist(p, q) < 0.07);
                let want: Vec<usize> = (0..pts.len()).filter(|&i| dist(pts[i], q) < 0.07).collect();
                assert_eq!(got, want);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn kd_queries_match_brute_force(seed in 0u64..10_000, dim in 1usize..8, count in 0usize..300, eps in 0.01f64..0.5, torus in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let period = if torus { Some(1.0) } else { None };
            // Clustered data, like cylinder sets.
            let data: Vec<f64> = (0..count * dim).map(|_| (rng.gen_range(0..4) as f64) / 4.0 + 0.05 * rng.gen::<f64>()).collect();
            let mut idx = TrajectoryIndex::build(data.clone(), dim, period);
            let active: Vec<bool> = (0..count).map(|_| rng.gen_bool(0.4)).collect();
            for (i, &a) in active.iter().enumerate() {
                if a {
                    idx.activate(i);
                }
            }
            for _ in 0..20 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                for mode in [Closeness::Open, Closeness::Closed] {
                    let want = brute_within(&data, dim, period, &q, eps, mode);
                    prop_assert_eq!(idx.within(&q, eps, mode), want.clone());
                    let any = want.iter().any(|&i| active[i]);
                    prop_assert_eq!(idx.any_active_within(&q, eps, mode), any);
                }
            }
        }
    }
}
