//! Model dynamical systems, orbits and Birkhoff sums, finite-time Lyapunov
//! exponents and cone-field checks.

mod cones;
mod lyapunov;
mod systems;

use std::collections::BTreeMap;

pub use cones::{certified_horizon, cone_preservation_check, ConeCenter, ConeField, ConePair, FAN_DIRECTIONS};
pub use lyapunov::{
    finite_time_lyapunov, orbit_cocycle, rate_of_hyperbolicity_measure, rate_of_hyperbolicity_point,
    splitting, LyapunovReport, Splitting,
};
pub use systems::{AffineHorseshoe, Builtin, CatMap, Henon, Rotation};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Point};
use crate::potential::Potential;

/// How coordinates wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Plane,
    /// Unit torus `[0, 1)^2`.
    Torus,
}

impl Topology {
    pub fn period(self) -> Option<f64> {
        match self {
            Topology::Plane => None,
            Topology::Torus => Some(1.0),
        }
    }

    /// Separation of two coordinates (minimal representative on the torus).
    pub fn coordinate_gap(self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self {
            Topology::Plane => d,
            Topology::Torus => {
                let d = d.rem_euclid(1.0);
                d.min(1.0 - d)
            }
        }
    }

    /// Max metric over the two coordinates.
    pub fn distance(self, a: Point, b: Point) -> f64 {
        self.coordinate_gap(a[0], b[0]).max(self.coordinate_gap(a[1], b[1]))
    }
}

/// An invertible planar map with its derivative.
pub trait MapSystem: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize {
        2
    }

    fn forward(&self, p: Point) -> Point;

    fn backward(&self, p: Point) -> Point;

    fn jacobian(&self, p: Point) -> Mat2;

    /// Whether `forward` may be applied at `p`.
    fn in_domain(&self, p: Point) -> bool;

    /// Whether `backward` may be applied at `p`.
    fn in_backward_domain(&self, p: Point) -> bool {
        self.in_domain(p)
    }

    fn topology(&self) -> Topology;

    fn metric(&self, a: Point, b: Point) -> f64 {
        self.topology().distance(a, b)
    }

    /// `[[x_min, x_max], [y_min, y_max]]` enclosing the domain.
    fn bounding_box(&self) -> [[f64; 2]; 2];

    /// Width of the gap between disjoint pieces of the domain, if any.
    fn strip_gap(&self) -> Option<f64> {
        None
    }

    fn default_cones(&self) -> ConePair;

    /// Derivative of the inverse map at `p`.
    fn inverse_jacobian(&self, p: Point) -> Mat2 {
        let q = self.backward(p);
        self.jacobian(q).inverse().unwrap_or(Mat2([[f64::NAN; 2]; 2]))
    }
}

/// A finite forward orbit `points[k] = f^k(base_point)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegment {
    points: Vec<Point>,
    birkhoff_cache: BTreeMap<String, Vec<f64>>,
}

impl OrbitSegment {
    pub fn base_point(&self) -> Point {
        self.points[0]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Caches the prefix sums of `phi` along the orbit.
    pub fn with_potential(mut self, phi: &Potential) -> Self {
        let mut prefix = Vec::with_capacity(self.points.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &p in &self.points {
            acc += phi.eval(p);
            prefix.push(acc);
        }
        self.birkhoff_cache.insert(phi.id(), prefix);
        self
    }
}

/// Iterates `system` from `x`, returning `n` successive points.
pub fn iterate(system: &dyn MapSystem, x: Point, n: usize) -> Result<OrbitSegment> {
    if n == 0 {
        return Err(Error::InvalidParameter("orbit length must be positive".into()));
    }
    let mut points = Vec::with_capacity(n);
    iterate_into(system, x, n, &mut points)?;
    Ok(OrbitSegment {
        points,
        birkhoff_cache: BTreeMap::new(),
    })
}

/// Allocation-free variant of [`iterate`]; `buf` is cleared first.
pub fn iterate_into(system: &dyn MapSystem, x: Point, n: usize, buf: &mut Vec<Point>) -> Result<()> {
    buf.clear();
    let mut p = x;
    for k in 0..n {
        if !system.in_domain(p) {
            return Err(Error::OrbitEscaped(k));
        }
        buf.push(p);
        if k + 1 < n {
            p = system.forward(p);
        }
    }
    Ok(())
}

/// Backward orbit `out[k] = f^{-k}(x)` of `n` points.
pub fn iterate_backward(system: &dyn MapSystem, x: Point, n: usize) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(n);
    let mut p = x;
    for k in 0..n {
        out.push(p);
        if k + 1 < n {
            if !system.in_backward_domain(p) {
                return Err(Error::OrbitEscaped(k));
            }
            p = system.backward(p);
        }
    }
    Ok(out)
}

/// `S_k phi(x) = sum_{j < k} phi(f^j x)`.
pub fn birkhoff_sum(orbit: &OrbitSegment, phi: &Potential, k: usize) -> Result<f64> {
    if k == 0 || k > orbit.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: orbit.len(),
        });
    }
    if let Some(prefix) = orbit.birkhoff_cache.get(&phi.id()) {
        return Ok(prefix[k]);
    }
    Ok(orbit.points[..k].iter().map(|&p| phi.eval(p)).sum())
}

/// Birkhoff sum over a slice of orbit points.
pub fn birkhoff_sum_points(points: &[Point], phi: &Potential) -> f64 {
    points.iter().map(|&p| phi.eval(p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cat_map_origin_is_fixed() {
        let orbit = iterate(&CatMap, [0.0, 0.0], 5).unwrap();
        assert_eq!(orbit.len(), 5);
        assert!(orbit.points().iter().all(|p| *p == [0.0, 0.0]));
        let phi = Potential::Affine { cx: 1.0, cy: 0.0, c0: 0.0 };
        let orbit = iterate(&CatMap, [0.0, 0.0], 7).unwrap();
        assert_eq!(birkhoff_sum(&orbit, &phi, 7).unwrap(), 0.0);
    }

    #[test]
    fn horseshoe_branch_fixed_points() {
        // Left branch fixes (0, 0); the right branch fixes (3/4, 3/4).
        let orbit = iterate(&AffineHorseshoe, [0.0, 0.0], 3).unwrap();
        assert!(orbit.points().iter().all(|p| *p == [0.0, 0.0]));
        let orbit = iterate(&AffineHorseshoe, [0.75, 0.75], 3).unwrap();
        assert!(orbit.points().iter().all(|p| (p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15));
    }

    #[test]
    fn horseshoe_birkhoff_sum_by_hand() {
        // (0.1, 0.5) -> (0.3, 1/6) -> (0.9, 1/18): x-coordinates 0.1 + 0.3 + 0.9.
        let orbit = iterate(&AffineHorseshoe, [0.1, 0.5], 3).unwrap();
        let phi = Potential::Affine { cx: 1.0, cy: 0.0, c0: 0.0 };
        let s = birkhoff_sum(&orbit, &phi, 3).unwrap();
        assert!((s - 1.3).abs() < 1e-12);
        let cached = orbit.clone().with_potential(&phi);
        assert!((birkhoff_sum(&cached, &phi, 3).unwrap() - s).abs() < 1e-15);
    }

    #[test]
    fn constant_potential_sums_linearly() {
        let orbit = iterate(&CatMap, [0.3, 0.7], 10).unwrap();
        let phi = Potential::constant(0.25);
        for k in 1..=10 {
            assert_eq!(birkhoff_sum(&orbit, &phi, k).unwrap(), 0.25 * k as f64);
        }
        assert_eq!(
            birkhoff_sum(&orbit, &phi, 11),
            Err(Error::IndexOutOfRange { index: 11, len: 10 })
        );
    }

    #[test]
    fn henon_escape_index_regression() {
        // The start lies outside the trapping quadrilateral.
        assert_eq!(iterate(&Henon::classic(), [10.0, 10.0], 100).unwrap_err(), Error::OrbitEscaped(0));
        // Inside the bounding box but beyond the right edge of the quadrilateral.
        let err = iterate(&Henon::classic(), [1.3, 0.05], 100).unwrap_err();
        assert_eq!(err, Error::OrbitEscaped(0));
        // The quadrilateral is forward invariant, so a start inside never escapes.
        assert!(iterate(&Henon::classic(), [1.29, 0.06], 100).is_ok());
    }

    #[test]
    fn henon_attractor_orbit_stays_trapped() {
        let orbit = iterate(&Henon::classic(), [0.1, 0.1], 5000);
        assert!(orbit.is_ok());
    }

    #[test]
    fn invertibility_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let systems: Vec<Box<dyn MapSystem>> = vec![
            Builtin::AffineHorseshoe.build(),
            Builtin::CatMap.build(),
            Builtin::Henon.build(),
            Builtin::Rotation.build(),
        ];
        for system in &systems {
            let mut checked = 0;
            while checked < 10_000 {
                let p = [rng.gen::<f64>() * 3.0 - 1.5, rng.gen::<f64>() * 1.5 - 0.75];
                let p = if system.name() == "henon" { p } else { [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0)] };
                if !system.in_domain(p) {
                    continue;
                }
                let q = system.backward(system.forward(p));
                assert!(system.metric(p, q) < 1e-10, "{} at {p:?}", system.name());
                assert!(system.jacobian(p).det() != 0.0);
                checked += 1;
            }
        }
    }

    #[test]
    fn torus_metric_uses_minimal_representative() {
        let t = Topology::Torus;
        assert!((t.distance([0.05, 0.5], [0.95, 0.5]) - 0.1).abs() < 1e-12);
        assert!((Topology::Plane.distance([0.05, 0.5], [0.95, 0.5]) - 0.9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn birkhoff_additivity(x in 0.0f64..1.0, y in 0.0f64..1.0, a in 1usize..20, b in 1usize..20) {
            let phi = Potential::Affine { cx: 0.7, cy: -0.2, c0: 0.1 };
            let orbit = iterate(&CatMap, [x, y], a + b).unwrap();
            let tail = iterate(&CatMap, orbit.points()[a], b).unwrap();
            let lhs = birkhoff_sum(&orbit, &phi, a + b).unwrap();
            let rhs = birkhoff_sum(&orbit, &phi, a).unwrap() + birkhoff_sum(&tail, &phi, b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
