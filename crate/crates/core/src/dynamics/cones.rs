use std::f64::consts::FRAC_PI_4;

use super::{iterate_into, splitting, MapSystem};
use crate::error::{Error, Result};
use crate::linalg::{line_angle, norm, Mat2, Point, Vec2};

/// Boundary-fan directions tested per cone, spanning both boundary rays.
pub const FAN_DIRECTIONS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeCenter {
    /// The same axis at every point.
    Fixed(Vec2),
    /// Finite-time splitting direction computed at each point with this horizon.
    Dynamic { horizon: usize },
}

/// Cone of half-angle `width` around a direction field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeField {
    pub center: ConeCenter,
    pub width: f64,
}

impl ConeField {
    pub fn fixed(axis: Vec2, width: f64) -> Self {
        let n = norm(axis);
        Self {
            center: ConeCenter::Fixed([axis[0] / n, axis[1] / n]),
            width,
        }
    }

    pub fn dynamic(horizon: usize, width: f64) -> Self {
        Self {
            center: ConeCenter::Dynamic { horizon },
            width,
        }
    }

    pub fn with_width(self, width: f64) -> Self {
        Self { width, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width < FRAC_PI_4) {
            return Err(Error::InvalidParameter(format!(
                "cone width {} outside (0, pi/4)",
                self.width
            )));
        }
        Ok(())
    }

    /// `(cos t, sin t)` for the fan offsets `t` spanning `-width..=width`.
    fn fan_rotations(&self) -> [(f64, f64); FAN_DIRECTIONS] {
        std::array::from_fn(|j| {
            let t = -self.width + 2.0 * self.width * j as f64 / (FAN_DIRECTIONS - 1) as f64;
            (t.cos(), t.sin())
        })
    }
}

/// The axis rotated by each fan offset, followed by the axis itself.
fn fan(axis: Vec2, rotations: &[(f64, f64); FAN_DIRECTIONS]) -> [Vec2; FAN_DIRECTIONS + 1] {
    std::array::from_fn(|j| match rotations.get(j) {
        Some(&(c, s)) => [c * axis[0] - s * axis[1], s * axis[0] + c * axis[1]],
        None => axis,
    })
}

/// Unstable and stable cone fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConePair {
    pub unstable: ConeField,
    pub stable: ConeField,
}

impl ConePair {
    pub fn new(unstable: ConeField, stable: ConeField) -> Result<Self> {
        unstable.validate()?;
        stable.validate()?;
        Ok(Self { unstable, stable })
    }

    pub fn with_width(self, width: f64) -> Result<Self> {
        Self::new(self.unstable.with_width(width), self.stable.with_width(width))
    }

    /// Axis of the unstable cone at `p`.
    pub fn unstable_axis(&self, system: &dyn MapSystem, p: Point) -> Result<Vec2> {
        center_at(system, &self.unstable, p, Flavor::Unstable)
    }

    /// Axis of the stable cone at `p`.
    pub fn stable_axis(&self, system: &dyn MapSystem, p: Point) -> Result<Vec2> {
        center_at(system, &self.stable, p, Flavor::Stable)
    }
}

enum Flavor {
    Unstable,
    Stable,
}

fn center_at(system: &dyn MapSystem, cone: &ConeField, p: Point, flavor: Flavor) -> Result<Vec2> {
    match cone.center {
        ConeCenter::Fixed(axis) => Ok(axis),
        ConeCenter::Dynamic { horizon } => {
            let split = splitting(system, p, horizon.max(1))?;
            match flavor {
                Flavor::Stable => Ok(split.stable),
                Flavor::Unstable => split.unstable.ok_or(Error::OrbitEscaped(0)),
            }
        }
    }
}

/// Largest `k <= orbit.len() - 1` such that for every `j` in `1..=k` the derivative
/// `Df^j` maps the unstable cone at `orbit[0]` strictly into the unstable cone at
/// `orbit[j]` with expansion at least `lambda_min^j`, and `Df^{-j}` maps the stable cone
/// at `orbit[j]` strictly into the stable cone at `orbit[0]` with the same expansion.
pub fn certified_horizon(system: &dyn MapSystem, orbit: &[Point], cones: &ConePair, lambda_min: f64) -> Result<usize> {
    if orbit.len() < 2 {
        return Ok(0);
    }
    let log_lambda = lambda_min.ln();
    let steps = orbit.len() - 1;
    let jac: Vec<_> = orbit[..steps].iter().map(|&p| system.jacobian(p)).collect();
    let inv: Vec<_> = jac
        .iter()
        .map(|m| m.inverse().ok_or(Error::DegenerateCocycle))
        .collect::<Result<_>>()?;

    let u0 = center_at(system, &cones.unstable, orbit[0], Flavor::Unstable)?;
    let s0 = center_at(system, &cones.stable, orbit[0], Flavor::Stable)?;

    let unstable_rot = cones.unstable.fan_rotations();
    let stable_rot = cones.stable.fan_rotations();
    let mut fan_u: Vec<(Vec2, f64)> = fan(u0, &unstable_rot).into_iter().map(|v| (v, 0.0)).collect();
    let mut back = Mat2::IDENTITY;
    let mut back_log = 0.0;
    for k in 1..=steps {
        let target = center_at(system, &cones.unstable, orbit[k], Flavor::Unstable)?;
        for (v, log_growth) in fan_u.iter_mut() {
            let w = jac[k - 1].apply(*v);
            let len = norm(w);
            *log_growth += len.ln();
            *v = [w[0] / len, w[1] / len];
        }
        let unstable_ok = fan_u
            .iter()
            .all(|(v, g)| line_angle(*v, target) < cones.unstable.width && *g >= k as f64 * log_lambda);
        if !unstable_ok {
            return Ok(k - 1);
        }

        // back = Df^{-k} at orbit[k], kept as (normalized matrix, log scale).
        back = back.mul(&inv[k - 1]);
        let scale = back.max_abs();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateCocycle);
        }
        back = back.scale(1.0 / scale);
        back_log += scale.ln();
        let sk = center_at(system, &cones.stable, orbit[k], Flavor::Stable)?;
        let stable_ok = fan(sk, &stable_rot).into_iter().all(|v0| {
            let w = back.apply(v0);
            let log_growth = back_log + norm(w).ln();
            line_angle(w, s0) < cones.stable.width && log_growth >= k as f64 * log_lambda
        });
        if !stable_ok {
            return Ok(k - 1);
        }
    }
    Ok(steps)
}

/// Cone invariance and expansion along `r` iterates of `x`.
pub fn cone_preservation_check(
    system: &dyn MapSystem,
    x: Point,
    r: usize,
    cones: &ConePair,
    lambda_min: f64,
) -> Result<bool> {
    if r == 0 {
        return Err(Error::InvalidParameter("return time must be positive".into()));
    }
    let mut orbit = Vec::with_capacity(r + 1);
    iterate_into(system, x, r + 1, &mut orbit)?;
    Ok(certified_horizon(system, &orbit, cones, lambda_min)? == r)
}
