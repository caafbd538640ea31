use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::linalg::Point;

/// A real-valued observable on phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Constant { value: f64 },
    /// `cx * x + cy * y + c0`
    Affine { cx: f64, cy: f64, c0: f64 },
    /// Locally constant on the two strips of the horseshoe (`x < 1/2` is the left strip).
    StripWeights { left: f64, right: f64 },
}

impl Potential {
    pub fn zero() -> Self {
        Potential::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Potential::Constant { value }
    }

    /// Stable identifier used as a cache key.
    pub fn id(&self) -> String {
        match self {
            Potential::Constant { value } => format!("const({value:?})"),
            Potential::Affine { cx, cy, c0 } => format!("affine({cx:?},{cy:?},{c0:?})"),
            Potential::StripWeights { left, right } => format!("strips({left:?},{right:?})"),
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            Potential::Constant { value } => value,
            Potential::Affine { cx, cy, c0 } => cx * p[0] + cy * p[1] + c0,
            Potential::StripWeights { left, right } => {
                if p[0] < 0.5 {
                    left
                } else {
                    right
                }
            }
        }
    }

    /// Lipschitz constant for the max metric. Strip weights count as locally constant
    /// (their jump sits across the strip gap, which is larger than any admissible `delta`).
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Potential::Constant { .. } | Potential::StripWeights { .. } => 0.0,
            Potential::Affine { cx, cy, .. } => cx.abs() + cy.abs(),
        }
    }

    /// `(inf, sup)` over the bounding box of `system`.
    pub fn bounds(&self, system: &dyn MapSystem) -> (f64, f64) {
        match *self {
            Potential::Constant { value } => (value, value),
            Potential::StripWeights { left, right } => (left.min(right), left.max(right)),
            Potential::Affine { .. } => {
                let [[x0, x1], [y0, y1]] = system.bounding_box();
                let corners = [[x0, y0], [x0, y1], [x1, y0], [x1, y1]];
                corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                    let v = self.eval(c);
                    (lo.min(v), hi.max(v))
                })
            }
        }
    }
}
