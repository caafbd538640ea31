use serde::{Deserialize, Serialize};

use super::{iterate_backward, iterate_into, MapSystem};
use crate::error::{Error, Result};
use crate::linalg::{line_angle_degrees, CocycleAccumulator, Point, Vec2};

/// Finite-time Lyapunov spectrum at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub horizon: usize,
    /// Ascending, nats per iterate.
    pub exponents: Vec<f64>,
    pub min_abs: f64,
    /// `[stable, unstable]` line angles in degrees.
    pub direction_angles: Vec<f64>,
}

/// Finite-time stable and unstable directions at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splitting {
    /// Most contracted direction of `Df^n(x)`.
    pub stable: Vec2,
    /// Most contracted direction of `Df^{-n}(x)`; `None` when the backward orbit escapes.
    pub unstable: Option<Vec2>,
}

/// Derivative cocycle of `f^n` at `x`.
pub fn orbit_cocycle(system: &dyn MapSystem, x: Point, n: usize) -> Result<CocycleAccumulator> {
    let mut orbit = Vec::with_capacity(n);
    iterate_into(system, x, n, &mut orbit)?;
    let mut acc = CocycleAccumulator::new();
    for &p in &orbit {
        if !acc.push(&system.jacobian(p)) {
            return Err(Error::DegenerateCocycle);
        }
    }
    Ok(acc)
}

fn backward_cocycle(system: &dyn MapSystem, x: Point, n: usize) -> Result<CocycleAccumulator> {
    let orbit = iterate_backward(system, x, n + 1)?;
    let mut acc = CocycleAccumulator::new();
    for &p in &orbit[..n] {
        if !acc.push(&system.inverse_jacobian(p)) {
            return Err(Error::DegenerateCocycle);
        }
    }
    Ok(acc)
}

/// Finite-time splitting at horizon `n`.
pub fn splitting(system: &dyn MapSystem, x: Point, n: usize) -> Result<Splitting> {
    let forward = orbit_cocycle(system, x, n)?;
    let (_, stable) = forward.right_singular_vectors();
    let unstable = backward_cocycle(system, x, n).ok().map(|acc| acc.right_singular_vectors().1);
    Ok(Splitting { stable, unstable })
}

/// Exponents `(1/n) log sigma_i(Df^n(x))`.
pub fn finite_time_lyapunov(system: &dyn MapSystem, x: Point, n: usize) -> Result<LyapunovReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let acc = orbit_cocycle(system, x, n)?;
    let [l1, l2] = acc.log_singular_values();
    if !l1.is_finite() || !l2.is_finite() {
        return Err(Error::DegenerateCocycle);
    }
    let mut exponents = vec![l2 / n as f64, l1 / n as f64];
    exponents.sort_by(f64::total_cmp);
    let min_abs = exponents.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
    let (expanded, contracted) = acc.right_singular_vectors();
    let unstable = backward_cocycle(system, x, n)
        .map(|b| b.right_singular_vectors().1)
        .unwrap_or(expanded);
    Ok(LyapunovReport {
        horizon: n,
        exponents,
        min_abs,
        direction_angles: vec![line_angle_degrees(contracted), line_angle_degrees(unstable)],
    })
}

/// `chi(x)`: minimal absolute finite-time exponent.
pub fn rate_of_hyperbolicity_point(system: &dyn MapSystem, x: Point, n: usize) -> Result<f64> {
    finite_time_lyapunov(system, x, n).map(|r| r.min_abs)
}

/// Sample mean of `chi(x)` over `(point, horizon)` pairs.
pub fn rate_of_hyperbolicity_measure(system: &dyn MapSystem, sample: &[(Point, usize)]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for &(x, n) in sample {
        total += rate_of_hyperbolicity_point(system, x, n)?;
    }
    Ok(total / sample.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AffineHorseshoe, CatMap, Rotation};
    use crate::linalg::line_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// log of the larger root of t^2 - 3t + 1, the characteristic polynomial of [[2,1],[1,1]].
    fn cat_exponent_oracle() -> f64 {
        let (tr, det) = (3.0_f64, 1.0_f64);
        ((tr + (tr * tr - 4.0 * det).sqrt()) / 2.0).ln()
    }

    #[test]
    fn cat_map_exponents() {
        let lambda = cat_exponent_oracle();
        assert!((lambda - 0.9624236501).abs() < 1e-10);
        for n in [1, 50, 1000] {
            let r = finite_time_lyapunov(&CatMap, [0.2, 0.3], n).unwrap();
            assert!((r.exponents[0] + lambda).abs() < 1e-6, "n={n}");
            assert!((r.exponents[1] - lambda).abs() < 1e-6, "n={n}");
            assert!((r.min_abs - lambda).abs() < 1e-6);
        }
    }

    #[test]
    fn cat_map_directions_are_eigenvectors() {
        let s = splitting(&CatMap, [0.4, 0.1], 30).unwrap();
        let (u, st) = CatMap::eigen_directions();
        assert!(line_angle(s.stable, st) < 1e-9);
        assert!(line_angle(s.unstable.unwrap(), u) < 1e-9);
    }

    #[test]
    fn horseshoe_exponents_have_no_drift() {
        let p = AffineHorseshoe::point_from_symbols(&[0, 1, 1, 0, 1, 0, 0, 1], &[1, 0, 1]);
        for n in 1..=20 {
            let r = finite_time_lyapunov(&AffineHorseshoe, p, n.min(8)).unwrap();
            assert!((r.exponents[0] + 3f64.ln()).abs() < 1e-12);
            assert!((r.exponents[1] - 3f64.ln()).abs() < 1e-12);
        }
        let fixed = finite_time_lyapunov(&AffineHorseshoe, [0.0, 0.0], 20).unwrap();
        assert!((fixed.exponents[1] - 3f64.ln()).abs() < 1e-12);
        assert!((fixed.min_abs - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_zero_exponents() {
        let chi = rate_of_hyperbolicity_point(&Rotation::default(), [0.6, 0.5], 40).unwrap();
        assert!(chi.abs() < 1e-12);
    }

    #[test]
    fn measure_rate_is_the_sample_mean() {
        assert_eq!(rate_of_hyperbolicity_measure(&CatMap, &[]), Err(Error::EmptySample));
        let single = rate_of_hyperbolicity_measure(&CatMap, &[([0.1, 0.2], 10)]).unwrap();
        assert_eq!(single, rate_of_hyperbolicity_point(&CatMap, [0.1, 0.2], 10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample: Vec<_> = (0..100).map(|_| ([rng.gen(), rng.gen()], 50)).collect();
        let chi = rate_of_hyperbolicity_measure(&CatMap, &sample).unwrap();
        assert!((chi - cat_exponent_oracle()).abs() < 1e-4);
    }

    #[test]
    fn cocycle_additivity_for_linear_systems() {
        // Horizon-2n exponent versus the mean of two consecutive horizon-n estimates.
        for n in [5usize, 10, 40] {
            let x = [0.31, 0.77];
            let long = finite_time_lyapunov(&CatMap, x, 2 * n).unwrap();
            let first = finite_time_lyapunov(&CatMap, x, n).unwrap();
            let mid = super::super::iterate(&CatMap, x, n + 1).unwrap().points()[n];
            let second = finite_time_lyapunov(&CatMap, mid, n).unwrap();
            let avg = (first.exponents[1] + second.exponents[1]) / 2.0;
            assert!((long.exponents[1] - avg).abs() <= 5.0 / n as f64);
        }
    }
}
