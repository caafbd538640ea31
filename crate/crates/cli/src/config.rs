//! Run configuration: one JSON document per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use pressure_core::dynamics::Builtin;
use pressure_core::horseshoe::max_return_time;
use pressure_core::measures::{MeasureSpec, TestFunctionBank};
use pressure_core::Potential;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Finite-horizon Pesin filter applied to the sample before quasi-generic filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PesinSpec {
    pub ell: f64,
    pub chi: f64,
    pub horizon: usize,
}

/// A single-measure schedule. Per-stage arrays hold one entry per stage or a single entry
/// shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub system: Builtin,
    pub potential: Potential,
    pub measure: MeasureSpec,
    #[serde(default = "default_bank")]
    pub bank: String,
    pub seed: u64,

    pub rho: Vec<f64>,
    pub s: Vec<usize>,
    pub n: Vec<usize>,
    /// Rectangle diameter; defaults to the bank-derived modulus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    /// Inner ball radius; defaults to `KAPPA_RATIO * delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    /// Bowen-ball radius of the spanning estimator.
    pub epsilon: Vec<f64>,
    /// Horizon of the spanning estimator.
    pub spanning_n: Vec<usize>,
    /// Size of the mu-sample that seeds the cover and the return scan.
    pub sample_size: Vec<usize>,

    /// Size of the independent mu-sample used by the spanning estimator.
    pub spanning_sample: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Overrides the half-angle of the system's default cones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone_width: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub n_max: usize,
    #[serde(default = "default_word_length")]
    pub word_length: usize,
    #[serde(default = "default_word_budget")]
    pub word_budget: usize,
    #[serde(default = "default_balance_words")]
    pub balance_words: usize,
    /// Total length of balance words; defaults to the first admissible length at or
    /// above three times the longest return.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_length: Option<usize>,
    /// Upper bound on the model pressures, e.g. a known topological pressure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesin: Option<PesinSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_bank() -> String {
    "trig8".into()
}

fn default_lambda() -> f64 {
    2.0
}

fn default_alpha() -> f64 {
    0.25
}

fn default_word_length() -> usize {
    6
}

fn default_word_budget() -> usize {
    2000
}

fn default_balance_words() -> usize {
    100
}

pub const KAPPA_RATIO: f64 = 0.45;

/// Parameters of one stage after broadcasting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub k: usize,
    pub rho: f64,
    pub s: usize,
    pub n: usize,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub epsilon: f64,
    pub spanning_n: usize,
    pub sample_size: usize,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stages: Option<usize>,
    pub n_max: Option<usize>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn pick<T: Copy>(name: &str, v: &[T], k: usize, stages: usize) -> Result<T> {
    match v.len() {
        1 => Ok(v[0]),
        len if len == stages => Ok(v[k]),
        len => Err(bad(format!("`{name}` has {len} entries for {stages} stages"))),
    }
}

/// Shared single entries survive; per-stage arrays keep their first `k` entries.
fn truncate<T>(v: &mut Vec<T>, stages: usize, k: usize) {
    if v.len() == stages {
        v.truncate(k);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn stages(&self) -> usize {
        self.rho.len()
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n_max) = o.n_max {
            self.n_max = n_max;
        }
        if let Some(k) = o.stages {
            if k == 0 || k > self.stages() {
                return Err(bad(format!("--stages {k} outside 1..={}", self.stages())));
            }
            let keep = self.stages();
            truncate(&mut self.rho, keep, k);
            truncate(&mut self.s, keep, k);
            truncate(&mut self.n, keep, k);
            truncate(&mut self.epsilon, keep, k);
            truncate(&mut self.spanning_n, keep, k);
            truncate(&mut self.sample_size, keep, k);
            if let Some(d) = self.delta.as_mut() {
                truncate(d, keep, k);
            }
            if let Some(d) = self.kappa.as_mut() {
                truncate(d, keep, k);
            }
        }
        self.validate()
    }

    pub fn stage(&self, k: usize) -> Result<StageParams> {
        let m = self.stages();
        Ok(StageParams {
            k,
            rho: self.rho[k],
            s: pick("s", &self.s, k, m)?,
            n: pick("n", &self.n, k, m)?,
            delta: self.delta.as_deref().map(|d| pick("delta", d, k, m)).transpose()?,
            kappa: self.kappa.as_deref().map(|d| pick("kappa", d, k, m)).transpose()?,
            epsilon: pick("epsilon", &self.epsilon, k, m)?,
            spanning_n: pick("spanning_n", &self.spanning_n, k, m)?,
            sample_size: pick("sample_size", &self.sample_size, k, m)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let bank = TestFunctionBank::by_id(&self.bank).map_err(|e| bad(e.to_string()))?;
        let m = self.stages();
        if m == 0 {
            return Err(bad("`rho` is empty"));
        }
        if self.rho.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(bad("every rho must be positive"));
        }
        if self.rho.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("rho must be strictly decreasing"));
        }
        let mut last_s = 0;
        for k in 0..m {
            let p = self.stage(k)?;
            if p.s == 0 || p.s > bank.len() {
                return Err(bad(format!("stage {k}: s = {} outside 1..={}", p.s, bank.len())));
            }
            if p.s < last_s {
                return Err(bad("s must be nondecreasing"));
            }
            last_s = p.s;
            if p.n == 0 || p.spanning_n == 0 {
                return Err(bad(format!("stage {k}: horizons must be positive")));
            }
            if p.sample_size == 0 {
                return Err(bad(format!("stage {k}: sample_size must be positive")));
            }
            if !(p.epsilon > 0.0) {
                return Err(bad(format!("stage {k}: epsilon must be positive")));
            }
            if let Some(d) = p.delta {
                if !(d > 0.0) {
                    return Err(bad(format!("stage {k}: delta must be positive")));
                }
            }
            if let Some(kappa) = p.kappa {
                let delta = p.delta.ok_or_else(|| bad("kappa requires an explicit delta"))?;
                if !(kappa > 0.0 && kappa < delta / 2.0) {
                    return Err(bad(format!("stage {k}: kappa must lie in (0, delta/2)")));
                }
            }
            let need = 4 * max_return_time(p.n, p.rho);
            if self.n_max < need {
                return Err(bad(format!(
                    "n_max = {} below four times the longest return ({need}) at stage {k}",
                    self.n_max
                )));
            }
        }
        if !(self.lambda > 1.0) {
            return Err(bad("lambda must exceed 1"));
        }
        if let Some(w) = self.cone_width {
            if !(w > 0.0 && w < std::f64::consts::FRAC_PI_4) {
                return Err(bad("cone_width must lie in (0, pi/4)"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha must lie in (0, 1)"));
        }
        if self.spanning_sample == 0 || self.word_length == 0 || self.word_budget == 0 || self.balance_words == 0 {
            return Err(bad("spanning_sample, word_length, word_budget and balance_words must be positive"));
        }
        if let Some(p) = self.pesin {
            if !(p.ell >= 1.0 && p.chi > 0.0 && p.horizon > 0) {
                return Err(bad("pesin needs ell >= 1, chi > 0, horizon >= 1"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
