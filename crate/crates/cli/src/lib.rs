//! Orchestration around `pressure-core`: run configuration, the single-measure
//! schedule, the family diagonal driver, the constant checklist and report emission.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod validate;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_theorem_a, run_theorem_b, FamilyConfig, MemberConfig, RunOutput};
pub use report::{RunReport, StageRecord};
