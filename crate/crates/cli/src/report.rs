//! Report types and their JSON/CSV emission.

use std::path::Path;

use pressure_core::horseshoe::{ModelChecks, RateFloor, RejectionTally, StrongApproximation};
use pressure_core::pressure_metric::PressureEstimate;
use pressure_core::symbolic::{BalanceReport, PeriodBoundsCheck, PotentialCertificate, SandwichReport};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::validate::ValidatorOutcome;

/// Summary of the stage's Alekseev model; the branches live in `model_k.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub branches: usize,
    pub rectangle: usize,
    pub e0_size: usize,
    pub e0_log_sum: f64,
    pub saturate_size: usize,
    pub min_return_time: usize,
    pub max_return_time: usize,
    pub file: String,
}

/// `P(f|Omega_k, phi) <= P_hat(phi) + tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientCheck {
    pub ambient: f64,
    pub pressure: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// The spanning estimate of `P_mu(phi)` with its cover statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningSummary {
    pub estimate: PressureEstimate,
    pub epsilon: f64,
    pub alpha: f64,
    pub centers: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub rho: f64,
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub sample_size: usize,
    /// `None` when the stage completed.
    pub failure: Option<String>,
    pub pesin_mass: f64,
    pub lambda0_size: Option<usize>,
    pub lambda0_mass: Option<f64>,
    pub rectangles: Option<usize>,
    pub candidates: Option<usize>,
    pub rejections: Option<RejectionTally>,
    pub model: Option<ModelSummary>,
    pub invariants: Option<ModelChecks>,
    pub p_mu_hat: Option<SpanningSummary>,
    pub pressure: Option<PressureEstimate>,
    pub bowen_root: Option<PressureEstimate>,
    /// `h(mu) + ∫phi dmu` when known in closed form.
    pub exact_free_energy: Option<f64>,
    /// `|pressure - reference|`, the reference being the exact free energy when known
    /// and `p_mu_hat` otherwise.
    pub gap: Option<f64>,
    pub sandwich: Option<SandwichReport>,
    pub strong_approximation: Option<StrongApproximation>,
    pub rate_floor: Option<RateFloor>,
    pub balance: Option<BalanceReport>,
    pub balance_skipped: Option<String>,
    pub period_bounds: Vec<PeriodBoundsCheck>,
    pub ambient: Option<AmbientCheck>,
    pub validators: Vec<ValidatorOutcome>,
}

impl StageRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Model invariants, sandwich, strong approximation, rate floor, balance, period
    /// ranges and the ambient bound, each counted only when evaluated.
    pub fn checks_passed(&self) -> bool {
        let opt = |x: Option<bool>| x.unwrap_or(true);
        opt(self.invariants.map(|c| c.all_passed()))
            && opt(self.sandwich.as_ref().map(|c| c.passed))
            && opt(self.strong_approximation.as_ref().map(|c| c.passed))
            && opt(self.rate_floor.as_ref().map(|c| c.passed))
            && opt(self.balance.as_ref().map(|c| c.passed))
            && opt(self.ambient.as_ref().map(|c| c.passed))
            && self.period_bounds.iter().all(|c| c.range_ok)
    }

    pub fn validators_passed(&self) -> bool {
        !self.validators.iter().any(ValidatorOutcome::failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub label: Option<String>,
    pub system: String,
    /// No convergence guarantee for this system.
    pub experimental: bool,
    pub measure: String,
    pub potential: String,
    pub bank: String,
    pub seed: u64,
    pub config_sha256: String,
    pub n_max: usize,
    pub stages: Vec<StageRecord>,
}

impl RunReport {
    pub fn any_stage_failed(&self) -> bool {
        self.stages.iter().any(StageRecord::failed)
    }

    pub fn checks_passed(&self) -> bool {
        self.stages.iter().all(StageRecord::checks_passed)
    }

    pub fn validators_passed(&self) -> bool {
        self.stages.iter().all(StageRecord::validators_passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Row of `series.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub k: usize,
    pub rho: f64,
    pub s: usize,
    pub pressure: Option<f64>,
    pub p_mu_hat: Option<f64>,
    pub gap: Option<f64>,
}

pub fn series_rows(report: &RunReport) -> Vec<SeriesRow> {
    report
        .stages
        .iter()
        .map(|st| SeriesRow {
            k: st.k,
            rho: st.rho,
            s: st.s,
            pressure: st.pressure.map(|p| p.value),
            p_mu_hat: st.p_mu_hat.as_ref().map(|p| p.estimate.value),
            gap: st.gap,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Member of a family in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub label: String,
    pub synthetic: bool,
    pub free_energy: f64,
    pub run: Option<RunReport>,
}

/// The stage chosen for one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalEntry {
    pub member: usize,
    pub label: String,
    pub stage: Option<usize>,
    pub rho: Option<f64>,
    pub pressure: f64,
    pub free_energy: f64,
    pub gap: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub schema_version: u32,
    pub config_sha256: String,
    pub members: Vec<MemberReport>,
    pub certificate: PotentialCertificate,
    pub diagonal: Vec<DiagonalEntry>,
    /// `sup` of the diagonal pressures, the estimate of `P(phi)`.
    pub pressure: f64,
    pub best_member: usize,
}

impl FamilyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pressure_core::pressure_metric::EstimateMethod;

    #[test]
    fn series_header_and_empty_cells() {
        let report = RunReport {
            schema_version: 1,
            label: None,
            system: "affine-horseshoe".into(),
            experimental: false,
            measure: "bernoulli(0.5)".into(),
            potential: "const(0.0)".into(),
            bank: "trig8".into(),
            seed: 1,
            config_sha256: String::new(),
            n_max: 100,
            stages: vec![
                StageRecord {
                    k: 0,
                    rho: 0.4,
                    s: 1,
                    pressure: Some(PressureEstimate::point(0.5, 100, EstimateMethod::PeriodicSum)),
                    gap: Some(0.25),
                    ..Default::default()
                },
                StageRecord {
                    k: 1,
                    rho: 0.2,
                    s: 1,
                    failure: Some("no branches".into()),
                    ..Default::default()
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_csv(&path, &series_rows(&report)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,rho,s,pressure,p_mu_hat,gap");
        assert_eq!(lines[1], "0,0.4,1,0.5,,0.25");
        assert_eq!(lines[2], "1,0.2,1,,,");
        assert!(report.any_stage_failed());
        assert!(report.checks_passed());
    }
}
