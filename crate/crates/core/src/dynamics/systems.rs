//! Built-in planar systems.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::cones::{ConeField, ConePair};
use super::{MapSystem, Topology};
use crate::error::{Error, Result};
use crate::linalg::{direction, Mat2, Point};

/// Identifier of a built-in system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    AffineHorseshoe,
    CatMap,
    Henon,
    Rotation,
}

impl Builtin {
    pub fn build(self) -> Box<dyn MapSystem> {
        match self {
            Builtin::AffineHorseshoe => Box::new(AffineHorseshoe),
            Builtin::CatMap => Box::new(CatMap),
            Builtin::Henon => Box::new(Henon::classic()),
            Builtin::Rotation => Box::new(Rotation::default()),
        }
    }

    /// Systems whose pipelines carry no convergence guarantee.
    pub fn experimental(self) -> bool {
        matches!(self, Builtin::Henon)
    }
}

/// Two-branch affine Smale horseshoe on the unit square.
///
/// Left strip `x <= 1/3`: `(x, y) -> (3x, y/3)`.
/// Right strip `x >= 2/3`: `(x, y) -> (3 - 3x, 1 - y/3)` (orientation reversing).
/// Points in the middle third have left the domain.
#[derive(Debug, Clone, Copy, Default)]
pub struct AffineHorseshoe;

impl AffineHorseshoe {
    pub const EXPANSION: f64 = 3.0;

    pub fn symbol_of(p: Point) -> u8 {
        u8::from(p[0] >= 0.5)
    }

    /// Point whose forward itinerary starts with `future` and whose backward
    /// itinerary (`past[0]` is the symbol at time -1) starts with `past`.
    pub fn point_from_symbols(future: &[u8], past: &[u8]) -> Point {
        let contract = |s: u8, u: f64| if s == 0 { u / 3.0 } else { 1.0 - u / 3.0 };
        let x = future.iter().rev().fold(0.5, |u, &s| contract(s, u));
        let y = past.iter().rev().fold(0.5, |u, &s| contract(s, u));
        [x, y]
    }

    /// Orbit of the periodic point with repeating itinerary `word`, computed from the
    /// coding (no forward iteration, so there is no loss of precision with the period).
    pub fn periodic_orbit(word: &[u8]) -> Vec<Point> {
        const DEPTH: usize = 48;
        let len = word.len();
        (0..len)
            .map(|k| {
                let future: Vec<u8> = (0..DEPTH).map(|j| word[(k + j) % len]).collect();
                let past: Vec<u8> = (1..=DEPTH).map(|j| word[(k + len * DEPTH - j) % len]).collect();
                Self::point_from_symbols(&future, &past)
            })
            .collect()
    }

    /// First `len` symbols of the forward itinerary of `p`.
    pub fn itinerary(&self, p: Point, len: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(len);
        let mut q = p;
        for k in 0..len {
            if !self.in_domain(q) {
                return Err(Error::OrbitEscaped(k));
            }
            out.push(Self::symbol_of(q));
            q = self.forward(q);
        }
        Ok(out)
    }
}

impl MapSystem for AffineHorseshoe {
    fn name(&self) -> &str {
        "affine-horseshoe"
    }

    fn forward(&self, p: Point) -> Point {
        if p[0] < 0.5 {
            [3.0 * p[0], p[1] / 3.0]
        } else {
            [3.0 - 3.0 * p[0], 1.0 - p[1] / 3.0]
        }
    }

    fn backward(&self, p: Point) -> Point {
        if p[1] < 0.5 {
            [p[0] / 3.0, 3.0 * p[1]]
        } else {
            [1.0 - p[0] / 3.0, 3.0 - 3.0 * p[1]]
        }
    }

    fn jacobian(&self, p: Point) -> Mat2 {
        if p[0] < 0.5 {
            Mat2::diag(3.0, 1.0 / 3.0)
        } else {
            Mat2::diag(-3.0, -1.0 / 3.0)
        }
    }

    fn in_domain(&self, p: Point) -> bool {
        let in_square = (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        in_square && (p[0] <= 1.0 / 3.0 || p[0] >= 2.0 / 3.0)
    }

    fn in_backward_domain(&self, p: Point) -> bool {
        let in_square = (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        in_square && (p[1] <= 1.0 / 3.0 || p[1] >= 2.0 / 3.0)
    }

    fn topology(&self) -> Topology {
        Topology::Plane
    }

    fn bounding_box(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [0.0, 1.0]]
    }

    fn strip_gap(&self) -> Option<f64> {
        Some(1.0 / 3.0)
    }

    fn default_cones(&self) -> ConePair {
        ConePair::new(
            ConeField::fixed(direction(0.0), 0.3),
            ConeField::fixed(direction(FRAC_PI_2), 0.3),
        )
        .expect("valid width")
    }
}

/// Arnold cat map `[[2, 1], [1, 1]]` on the flat torus.
#[derive(Debug, Clone, Copy, Default)]
pub struct CatMap;

impl CatMap {
    pub fn matrix() -> Mat2 {
        Mat2::new(2.0, 1.0, 1.0, 1.0)
    }

    /// `(unstable, stable)` unit eigenvectors.
    pub fn eigen_directions() -> ([f64; 2], [f64; 2]) {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let u = crate::linalg::normalize([1.0, phi - 1.0]);
        let s = crate::linalg::normalize([1.0, -phi]);
        (u, s)
    }
}

impl MapSystem for CatMap {
    fn name(&self) -> &str {
        "cat-map"
    }

    fn forward(&self, p: Point) -> Point {
        [
            (2.0 * p[0] + p[1]).rem_euclid(1.0),
            (p[0] + p[1]).rem_euclid(1.0),
        ]
    }

    fn backward(&self, p: Point) -> Point {
        [
            (p[0] - p[1]).rem_euclid(1.0),
            (2.0 * p[1] - p[0]).rem_euclid(1.0),
        ]
    }

    fn jacobian(&self, _p: Point) -> Mat2 {
        Self::matrix()
    }

    fn in_domain(&self, p: Point) -> bool {
        p[0].is_finite() && p[1].is_finite()
    }

    fn topology(&self) -> Topology {
        Topology::Torus
    }

    fn bounding_box(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [0.0, 1.0]]
    }

    fn default_cones(&self) -> ConePair {
        let (u, s) = Self::eigen_directions();
        ConePair::new(ConeField::fixed(u, 0.1), ConeField::fixed(s, 0.1)).expect("valid width")
    }
}

/// Hénon map `(x, y) -> (1 - a x^2 + y, b x)` restricted to its classical trapping
/// quadrilateral with vertices (-1.33, 0.42), (1.32, 0.133), (1.245, -0.14), (-1.06, -0.5).
#[derive(Debug, Clone, Copy)]
pub struct Henon {
    pub a: f64,
    pub b: f64,
}

impl Henon {
    pub const TRAPPING_REGION: [Point; 4] = [[-1.33, 0.42], [1.32, 0.133], [1.245, -0.14], [-1.06, -0.5]];

    pub fn classic() -> Self {
        Self { a: 1.4, b: 0.3 }
    }
}

impl MapSystem for Henon {
    fn name(&self) -> &str {
        "henon"
    }

    fn forward(&self, p: Point) -> Point {
        [1.0 - self.a * p[0] * p[0] + p[1], self.b * p[0]]
    }

    fn backward(&self, p: Point) -> Point {
        let x = p[1] / self.b;
        [x, p[0] - 1.0 + self.a * x * x]
    }

    fn jacobian(&self, p: Point) -> Mat2 {
        Mat2::new(-2.0 * self.a * p[0], 1.0, self.b, 0.0)
    }

    fn in_domain(&self, p: Point) -> bool {
        // Convex quadrilateral listed clockwise: inside iff on the right of every edge.
        let v = Self::TRAPPING_REGION;
        (0..4).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % 4];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            cross <= 0.0
        })
    }

    fn in_backward_domain(&self, p: Point) -> bool {
        p[0].is_finite() && p[1].is_finite() && p[0].abs() < 1e6 && p[1].abs() < 1e6
    }

    fn topology(&self) -> Topology {
        Topology::Plane
    }

    fn bounding_box(&self) -> [[f64; 2]; 2] {
        [[-1.33, 1.32], [-0.5, 0.42]]
    }

    fn default_cones(&self) -> ConePair {
        ConePair::new(ConeField::dynamic(12, 0.35), ConeField::dynamic(12, 0.35)).expect("valid width")
    }
}

/// Rigid rotation of the disk of radius 1/2 centred at (1/2, 1/2). Zero exponents;
/// used as a negative control.
#[derive(Debug, Clone, Copy)]
pub struct Rotation {
    pub angle: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Self { angle: 1.0 }
    }
}

impl Rotation {
    fn rotate(&self, p: Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
        [0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy]
    }
}

impl MapSystem for Rotation {
    fn name(&self) -> &str {
        "rotation"
    }

    fn forward(&self, p: Point) -> Point {
        self.rotate(p, self.angle)
    }

    fn backward(&self, p: Point) -> Point {
        self.rotate(p, -self.angle)
    }

    fn jacobian(&self, _p: Point) -> Mat2 {
        let (s, c) = self.angle.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    fn in_domain(&self, p: Point) -> bool {
        (p[0] - 0.5).hypot(p[1] - 0.5) <= 0.5 + 1e-12
    }

    fn topology(&self) -> Topology {
        Topology::Plane
    }

    fn bounding_box(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [0.0, 1.0]]
    }

    fn default_cones(&self) -> ConePair {
        ConePair::new(
            ConeField::fixed(direction(0.0), 0.3),
            ConeField::fixed(direction(FRAC_PI_2), 0.3),
        )
        .expect("valid width")
    }
}
