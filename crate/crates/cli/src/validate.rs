//! The constant ladder a stage is supposed to satisfy, checked against measured values.

use pressure_core::measures::TestFunctionBank;
use pressure_core::Potential;
use serde::{Deserialize, Serialize};

/// One named inequality. `passed` is `None` when an input is unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorOutcome {
    pub name: String,
    pub passed: Option<bool>,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
}

impl ValidatorOutcome {
    fn new(name: &str, measured: Option<f64>, threshold: Option<f64>, passed: Option<bool>) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            threshold,
        }
    }

    fn skipped(name: &str) -> Self {
        Self::new(name, None, None, None)
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }
}

/// Everything the ladder reads from a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext<'a> {
    pub n: usize,
    pub rho: f64,
    pub s: usize,
    pub delta: f64,
    pub phi: &'a Potential,
    pub bank: &'a TestFunctionBank,
    /// Fraction of the sample surviving quasi-generic filtering.
    pub lambda0_mass: Option<f64>,
    /// Fraction of the sample in the Pesin window (1 without a Pesin filter).
    pub pesin_mass: f64,
    pub p_mu_hat: Option<f64>,
    /// `h(mu) + ∫phi dmu` when known in closed form.
    pub exact_free_energy: Option<f64>,
    pub rectangles: Option<usize>,
    /// `log sum_{E0} exp S_n phi`.
    pub e0_log_sum: Option<f64>,
}

/// `Lambda_0` keeps at least half the mass of the Pesin window.
pub fn lambda0_mass(lambda0: Option<f64>, pesin: f64) -> ValidatorOutcome {
    let threshold = pesin / 2.0;
    match lambda0 {
        Some(m) => ValidatorOutcome::new("lambda0_mass", Some(m), Some(threshold), Some(m >= threshold)),
        None => ValidatorOutcome::skipped("lambda0_mass"),
    }
}

/// `delta` below the bank continuity modulus: `delta * Lip_s < rho / 2`.
pub fn delta_bank_modulus(delta: f64, rho: f64, s: usize, bank: &TestFunctionBank) -> ValidatorOutcome {
    let measured = delta * bank.max_lipschitz(s);
    let threshold = rho / 2.0;
    ValidatorOutcome::new("delta_bank_modulus", Some(measured), Some(threshold), Some(measured < threshold))
}

/// `delta * Lip(phi) < rho`.
pub fn delta_potential_modulus(delta: f64, rho: f64, phi: &Potential) -> ValidatorOutcome {
    let measured = delta * phi.lipschitz();
    ValidatorOutcome::new("delta_potential_modulus", Some(measured), Some(rho), Some(measured < rho))
}

/// `|P_hat - P_mu| < rho * fraction` against the exact free energy.
pub fn free_energy_proximity(name: &str, p_hat: Option<f64>, exact: Option<f64>, rho: f64, fraction: f64) -> ValidatorOutcome {
    match (p_hat, exact) {
        (Some(p), Some(e)) => {
            let measured = (p - e).abs();
            let threshold = rho * fraction;
            ValidatorOutcome::new(name, Some(measured), Some(threshold), Some(measured < threshold))
        }
        _ => ValidatorOutcome::skipped(name),
    }
}

/// `exp(n rho) >= #R`.
pub fn rectangle_count(n: usize, rho: f64, rectangles: Option<usize>) -> ValidatorOutcome {
    let threshold = (n as f64 * rho).exp();
    match rectangles {
        Some(r) => ValidatorOutcome::new("rectangle_count", Some(r as f64), Some(threshold), Some(threshold >= r as f64)),
        None => ValidatorOutcome::skipped("rectangle_count"),
    }
}

/// `|(1/n) log sum_{E0} exp S_n phi - P_hat| < rho`.
pub fn separated_sum(n: usize, rho: f64, e0_log_sum: Option<f64>, p_hat: Option<f64>) -> ValidatorOutcome {
    match (e0_log_sum, p_hat) {
        (Some(e0), Some(p)) => {
            let measured = (e0 / n as f64 - p).abs();
            ValidatorOutcome::new("separated_sum", Some(measured), Some(rho), Some(measured < rho))
        }
        _ => ValidatorOutcome::skipped("separated_sum"),
    }
}

/// The full checklist, in ladder order.
pub fn validate_constants(ctx: &RunContext) -> Vec<ValidatorOutcome> {
    vec![
        lambda0_mass(ctx.lambda0_mass, ctx.pesin_mass),
        delta_bank_modulus(ctx.delta, ctx.rho, ctx.s, ctx.bank),
        delta_potential_modulus(ctx.delta, ctx.rho, ctx.phi),
        free_energy_proximity("free_energy_quarter", ctx.p_mu_hat, ctx.exact_free_energy, ctx.rho, 0.25),
        free_energy_proximity("free_energy_half", ctx.p_mu_hat, ctx.exact_free_energy, ctx.rho, 0.5),
        rectangle_count(ctx.n, ctx.rho, ctx.rectangles),
        separated_sum(ctx.n, ctx.rho, ctx.e0_log_sum, ctx.p_mu_hat),
    ]
}
