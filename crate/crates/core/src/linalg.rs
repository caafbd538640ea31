//! Plane geometry helpers and a log-scaled accumulator for products of 2x2 matrices.

/// A point of the phase space (all built-in systems are planar).
pub type Point = [f64; 2];

/// A tangent vector.
pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2([[a, 0.0], [0.0, d]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// `self * rhs`
    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ]))
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let m = &self.0;
        let s = m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2);
        let p = self.det().abs();
        let disc = (s * s - 4.0 * p * p).max(0.0).sqrt();
        ((s + disc) / 2.0).sqrt()
    }
}

pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub fn normalize(v: Vec2) -> Vec2 {
    let n = norm(v);
    [v[0] / n, v[1] / n]
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Unit vector at angle `theta` (radians) from the horizontal axis.
pub fn direction(theta: f64) -> Vec2 {
    [theta.cos(), theta.sin()]
}

/// Angle in `[0, pi/2]` between the lines spanned by `a` and `b`.
pub fn line_angle(a: Vec2, b: Vec2) -> f64 {
    let c = (dot(a, b).abs() / (norm(a) * norm(b))).min(1.0);
    let s = (a[0] * b[1] - a[1] * b[0]).abs() / (norm(a) * norm(b));
    s.atan2(c)
}

/// Angle of the line spanned by `v`, in degrees within `[0, 180)`.
pub fn line_angle_degrees(v: Vec2) -> f64 {
    let deg = v[1].atan2(v[0]).to_degrees();
    let deg = deg.rem_euclid(180.0);
    if deg >= 180.0 {
        0.0
    } else {
        deg
    }
}

/// Running product `J_k ... J_1` of 2x2 matrices, stored as `Q R` with `Q` orthogonal
/// and `R` upper triangular with positive diagonal. The diagonal of `R` is kept in log
/// scale and the off-diagonal entry relative to the first diagonal entry, so horizons
/// of thousands of steps neither overflow nor lose the contracting direction.
#[derive(Debug, Clone)]
pub struct CocycleAccumulator {
    q: Mat2,
    log_a: f64,
    log_d: f64,
    beta: f64,
    steps: usize,
}

impl Default for CocycleAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl CocycleAccumulator {
    pub fn new() -> Self {
        Self {
            q: Mat2::IDENTITY,
            log_a: 0.0,
            log_d: 0.0,
            beta: 0.0,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Left-multiplies the product by `m`.
    pub fn push(&mut self, m: &Mat2) -> bool {
        self.push_scaled(m, 0.0)
    }

    /// Left-multiplies the product by `exp(log_scale) * m`.
    pub fn push_scaled(&mut self, m: &Mat2, log_scale: f64) -> bool {
        let mq = m.mul(&self.q);
        let c0 = [mq.0[0][0], mq.0[1][0]];
        let c1 = [mq.0[0][1], mq.0[1][1]];
        let r11 = norm(c0);
        if !(r11 > 0.0) || !r11.is_finite() {
            return false;
        }
        let q1 = [c0[0] / r11, c0[1] / r11];
        let mut q2 = [-q1[1], q1[0]];
        let r12 = dot(q1, c1);
        let mut r22 = dot(q2, c1);
        if r22 < 0.0 {
            q2 = [-q2[0], -q2[1]];
            r22 = -r22;
        }
        if !(r22 > 0.0) || !r22.is_finite() {
            return false;
        }
        self.q = Mat2([[q1[0], q2[0]], [q1[1], q2[1]]]);
        let ratio = (self.log_d - self.log_a).exp();
        self.beta += (r12 / r11) * ratio;
        self.log_a += r11.ln() + log_scale;
        self.log_d += r22.ln() + log_scale;
        self.steps += 1;
        true
    }

    /// `log |det|` of the accumulated product.
    pub fn log_abs_det(&self) -> f64 {
        self.log_a + self.log_d
    }

    /// Natural logs of the singular values, descending.
    pub fn log_singular_values(&self) -> [f64; 2] {
        let m = self.log_a.max(self.log_d);
        let a = (self.log_a - m).exp();
        let d = (self.log_d - m).exp();
        let b = self.beta * a;
        let s = a * a + b * b + d * d;
        let p = a * d;
        let disc = (s * s - 4.0 * p * p).max(0.0).sqrt();
        let log_s1 = m + 0.5 * ((s + disc) / 2.0).ln();
        let log_s2 = self.log_abs_det() - log_s1;
        [log_s1, log_s2]
    }

    /// Right singular vectors `(most expanded, most contracted)` of the product.
    pub fn right_singular_vectors(&self) -> (Vec2, Vec2) {
        let m = self.log_a.max(self.log_d);
        let a = (self.log_a - m).exp();
        let d = (self.log_d - m).exp();
        let b = self.beta * a;
        let [_, log_s2] = self.log_singular_values();
        let lambda2 = (2.0 * (log_s2 - m)).exp();
        // (R^T R - lambda2 I) v = 0 with R^T R = [[a^2, ab], [ab, b^2 + d^2]].
        let v1 = [a * b, lambda2 - a * a];
        let v2 = [lambda2 - b * b - d * d, a * b];
        let contracted = if norm(v1) >= norm(v2) { v1 } else { v2 };
        let contracted = if norm(contracted) == 0.0 {
            if a * a <= b * b + d * d {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        } else {
            normalize(contracted)
        };
        let expanded = [-contracted[1], contracted[0]];
        (expanded, contracted)
    }

    /// `log |P v|` for a unit vector `v` given in the coordinates at the start of the product.
    pub fn log_norm_of(&self, v: Vec2) -> f64 {
        let ratio = (self.log_d - self.log_a).exp();
        let first = v[0] + self.beta * v[1];
        let second = ratio * v[1];
        self.log_a + 0.5 * (first * first + second * second).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_matches_direct_product_svd() {
        let ms = [
            Mat2::new(2.0, 1.0, 1.0, 1.0),
            Mat2::new(0.5, -0.3, 0.2, 1.7),
            Mat2::new(-1.0, 0.4, 0.9, 0.1),
        ];
        let mut acc = CocycleAccumulator::new();
        let mut prod = Mat2::IDENTITY;
        for m in &ms {
            assert!(acc.push(m));
            prod = m.mul(&prod);
        }
        let s1 = prod.spectral_norm();
        let s2 = prod.det().abs() / s1;
        let [l1, l2] = acc.log_singular_values();
        assert!((l1 - s1.ln()).abs() < 1e-12);
        assert!((l2 - s2.ln()).abs() < 1e-12);
        let (e, c) = acc.right_singular_vectors();
        assert!((norm(prod.apply(c)).ln() - l2).abs() < 1e-10);
        assert!((norm(prod.apply(e)).ln() - l1).abs() < 1e-10);
        assert!((acc.log_norm_of(e) - l1).abs() < 1e-10);
    }

    #[test]
    fn symmetric_matrix_singular_values_are_eigenvalues() {
        let mut acc = CocycleAccumulator::new();
        acc.push(&Mat2::new(2.0, 1.0, 1.0, 1.0));
        let golden_sq = (3.0 + 5f64.sqrt()) / 2.0;
        let [l1, l2] = acc.log_singular_values();
        assert!((l1 - golden_sq.ln()).abs() < 1e-14);
        assert!((l2 + golden_sq.ln()).abs() < 1e-14);
    }

    #[test]
    fn long_products_do_not_overflow() {
        let mut acc = CocycleAccumulator::new();
        let m = Mat2::new(2.0, 1.0, 1.0, 1.0);
        for _ in 0..2000 {
            assert!(acc.push(&m));
        }
        let lambda = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        let [l1, l2] = acc.log_singular_values();
        assert!((l1 / 2000.0 - lambda).abs() < 1e-12);
        assert!((l2 / 2000.0 + lambda).abs() < 1e-12);
    }

    #[test]
    fn line_angle_ignores_orientation() {
        assert!((line_angle([1.0, 0.0], [-1.0, 0.0])).abs() < 1e-15);
        assert!((line_angle([1.0, 0.0], [0.0, 2.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((line_angle_degrees([-1.0, -1.0]) - 45.0).abs() < 1e-12);
    }
}
