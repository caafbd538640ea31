//! Single-measure schedules and the family diagonal driver.

use std::path::Path;

use pressure_core::dynamics::{Builtin, ConePair, MapSystem};
use pressure_core::horseshoe::{
    build_rectangle_cover, default_delta, detect_returns, max_return_time, rate_floor_check, saturate_size,
    select_branch_family, strong_approximation_check, verify_model_invariants, AlekseevModel, HorseshoeContext,
    ModelMeta, ReturnSearch,
};
use pressure_core::measures::{
    filter_quasi_generic_set, pesin_window_check, NeighborhoodSpec, ReferenceMeasure, TestFunctionBank,
};
use pressure_core::pressure_metric::{spanning_free_energy, BowenBallSpec, EstimateMethod, PressureEstimate};
use pressure_core::symbolic::{
    admissible_periods, bowen_root, check_period_bounds, hyperbolic_potential_certificate, periodic_sum_table,
    pressure_periodic, sandwich_check, verify_balance, FamilyMember, OrbitContext, SymbolicModel,
};
use pressure_core::{Point, Potential};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Overrides, RunConfig, StageParams, KAPPA_RATIO, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::report::{
    series_rows, write_csv, AmbientCheck, DiagonalEntry, FamilyReport, MemberReport, ModelSummary, RunReport,
    SpanningSummary, StageRecord,
};
use crate::validate::{validate_constants, RunContext};

/// Longest word length in the admissible-period check.
pub const PERIOD_CHECK_MAX: usize = 12;

/// Independent random streams of a stage.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Sample = 0,
    Spanning = 1,
    Words = 2,
    Balance = 3,
}

fn stage_rng(seed: u64, k: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4 * k as u64 + stream as u64);
    rng
}

struct Env {
    system: Box<dyn MapSystem>,
    bank: TestFunctionBank,
    mu: ReferenceMeasure,
    phi: Potential,
    cones: ConePair,
}

impl Env {
    fn new(config: &RunConfig) -> Result<Self> {
        let system = config.system.build();
        let bank = TestFunctionBank::by_id(&config.bank).map_err(|e| CliError::Config(e.to_string()))?;
        let mu = ReferenceMeasure::build(&config.measure, system.as_ref(), &bank)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let cones = match config.cone_width {
            Some(w) => system.default_cones().with_width(w)?,
            None => system.default_cones(),
        };
        Ok(Self {
            system,
            bank,
            mu,
            phi: config.potential.clone(),
            cones,
        })
    }

    fn exact_free_energy(&self) -> Option<f64> {
        self.mu.entropy().map(|h| h + self.mu.integrate_potential(&self.phi))
    }
}

/// A finished schedule: the report plus the model of every completed stage.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub models: Vec<Option<AlekseevModel>>,
}

impl RunOutput {
    /// Writes `report.json`, `series.csv` and `model_k.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json()?)?;
        write_csv(&dir.join("series.csv"), &series_rows(&self.report))?;
        for (k, model) in self.models.iter().enumerate() {
            if let Some(m) = model {
                std::fs::write(dir.join(model_file(k)), m.document().to_json()?)?;
            }
        }
        Ok(())
    }

    /// Last completed stage.
    pub fn final_stage(&self) -> Option<(&StageRecord, &AlekseevModel)> {
        self.report
            .stages
            .iter()
            .zip(&self.models)
            .rev()
            .find_map(|(r, m)| m.as_ref().map(|m| (r, m)))
    }
}

fn model_file(k: usize) -> String {
    format!("model_{k}.json")
}

/// Runs every stage of the schedule in order. Stage errors are recorded and later
/// stages still run.
pub fn run_theorem_a(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let env = Env::new(config)?;
    let mut stages = Vec::with_capacity(config.stages());
    let mut models = Vec::with_capacity(config.stages());
    for k in 0..config.stages() {
        let params = config.stage(k)?;
        let mut record = StageRecord {
            k,
            rho: params.rho,
            s: params.s,
            n: params.n,
            lambda: config.lambda,
            sample_size: params.sample_size,
            pesin_mass: 1.0,
            ..Default::default()
        };
        let model = match run_stage(config, &env, &params, &mut record) {
            Ok(m) => Some(m),
            Err(e) => {
                record.failure = Some(e.to_string());
                None
            }
        };
        record.validators = validate_constants(&RunContext {
            n: params.n,
            rho: params.rho,
            s: params.s,
            delta: record.delta,
            phi: &env.phi,
            bank: &env.bank,
            lambda0_mass: record.lambda0_mass,
            pesin_mass: record.pesin_mass,
            p_mu_hat: record.p_mu_hat.as_ref().map(|p| p.estimate.value),
            exact_free_energy: record.exact_free_energy,
            rectangles: record.rectangles,
            e0_log_sum: record.model.as_ref().map(|m| m.e0_log_sum),
        });
        stages.push(record);
        models.push(model);
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        label: config.label.clone(),
        system: env.system.name().to_string(),
        experimental: config.system.experimental(),
        measure: env.mu.id(),
        potential: env.phi.id(),
        bank: env.bank.id.clone(),
        seed: config.seed,
        config_sha256: config.sha256(),
        n_max: config.n_max,
        stages,
    };
    Ok(RunOutput { report, models })
}

fn stage_failure(reason: impl Into<String>) -> CliError {
    CliError::Stage(reason.into())
}

fn run_stage(config: &RunConfig, env: &Env, p: &StageParams, record: &mut StageRecord) -> Result<AlekseevModel> {
    let system = env.system.as_ref();
    let spec = NeighborhoodSpec::new(p.rho, p.s, &env.bank)?;
    let delta = p.delta.unwrap_or_else(|| default_delta(p.rho, p.s, &env.bank, system));
    let kappa = p.kappa.unwrap_or(KAPPA_RATIO * delta);
    record.delta = delta;
    record.kappa = kappa;
    record.exact_free_energy = env.exact_free_energy();

    let sample = env.mu.sample(&mut stage_rng(config.seed, p.k, Stream::Sample), p.sample_size);
    let base: Vec<Point> = match config.pesin {
        Some(ps) => {
            let kept: Vec<Point> = sample
                .iter()
                .copied()
                .filter(|&x| pesin_window_check(system, x, ps.ell, ps.chi, ps.horizon).unwrap_or(false))
                .collect();
            record.pesin_mass = kept.len() as f64 / sample.len() as f64;
            kept
        }
        None => sample,
    };
    let top = max_return_time(p.n, p.rho);
    let filter = filter_quasi_generic_set(&base, p.n, top, spec.halved(), &env.mu, system, &env.bank)?;
    record.lambda0_size = Some(filter.survivors.len());
    record.lambda0_mass = Some(filter.survivors.len() as f64 / p.sample_size as f64);

    let cover = build_rectangle_cover(system, &filter.survivors, delta, kappa, config.lambda)?;
    record.rectangles = Some(cover.len());
    let search = ReturnSearch {
        n: p.n,
        rho: p.rho,
        phi: &env.phi,
        mu: &env.mu,
        bank: &env.bank,
        spec,
        cones: env.cones,
    };
    let scan = detect_returns(system, &filter.survivors, &cover, &search)?;
    record.candidates = Some(scan.branches.len());
    record.rejections = Some(scan.rejections);

    let meta = ModelMeta {
        rho: p.rho,
        lambda: config.lambda,
        bank_id: env.bank.id.clone(),
        mu_id: env.mu.id(),
    };
    let model = select_branch_family(system, &scan.branches, p.n, delta, &meta)?;
    let times = model.return_times();
    record.model = Some(ModelSummary {
        branches: model.len(),
        rectangle: model.rectangle,
        e0_size: model.e0_size,
        e0_log_sum: model.e0_log_sum,
        saturate_size: saturate_size(&model),
        min_return_time: times.iter().copied().min().unwrap_or(0),
        max_return_time: times.iter().copied().max().unwrap_or(0),
        file: model_file(p.k),
    });
    let checks = verify_model_invariants(system, &model)?;
    record.invariants = Some(checks);
    if !checks.all_passed() {
        return Err(stage_failure("model fails the horseshoe invariants"));
    }

    let span_sample = env.mu.sample(&mut stage_rng(config.seed, p.k, Stream::Spanning), config.spanning_sample);
    let span = spanning_free_energy(
        system,
        &span_sample,
        config.alpha,
        BowenBallSpec::new(p.epsilon, p.spanning_n)?,
        &env.phi,
    )?;
    let p_hat = span.estimate.value;
    record.p_mu_hat = Some(SpanningSummary {
        estimate: span.estimate,
        epsilon: p.epsilon,
        alpha: span.alpha,
        centers: span.centers.len(),
        coverage: span.coverage,
    });

    let sym = SymbolicModel::from_alekseev(&model)?;
    let pressure = pressure_periodic(&sym, config.n_max)?;
    record.pressure = Some(pressure);
    let root = bowen_root(&sym);
    record.bowen_root = Some(PressureEstimate::point(root, config.n_max, EstimateMethod::BowenRoot));
    record.gap = Some((pressure.value - record.exact_free_energy.unwrap_or(p_hat)).abs());

    let (phi_inf, phi_sup) = env.phi.bounds(system);
    let sandwich = sandwich_check(&sym, phi_sup, phi_inf, p_hat, p.rho, config.n_max)?;
    let slack = sandwich.slack;
    record.sandwich = Some(sandwich);
    if let Some(ambient) = config.ambient_pressure {
        let tolerance = slack + p.rho;
        record.ambient = Some(AmbientCheck {
            ambient,
            pressure: pressure.value,
            tolerance,
            passed: pressure.value <= ambient + tolerance,
        });
    }

    let mut words = stage_rng(config.seed, p.k, Stream::Words);
    record.strong_approximation = Some(strong_approximation_check(
        &model,
        &env.mu,
        p.s,
        config.word_length,
        config.word_budget,
        &mut words,
    )?);
    record.rate_floor = Some(rate_floor_check(
        system,
        &model,
        config.word_length,
        config.word_budget,
        &mut words,
    )?);

    let context: Option<Box<dyn OrbitContext>> = match config.system {
        Builtin::AffineHorseshoe => Some(Box::new(HorseshoeContext::from_model(&model)?)),
        _ => None,
    };
    match context {
        Some(ctx) => {
            let total = match config.balance_length {
                Some(t) => t,
                None => first_admissible(&sym, 3 * sym.max_return_time())?,
            };
            record.balance = Some(verify_balance(
                &sym,
                Some(ctx.as_ref()),
                &env.phi,
                total,
                p.rho,
                0.0,
                config.balance_words,
                &mut stage_rng(config.seed, p.k, Stream::Balance),
            )?);
        }
        None => record.balance_skipped = Some(format!("no orbit coding for {}", system.name())),
    }

    record.period_bounds = (1..=PERIOD_CHECK_MAX)
        .map(|q| admissible_periods(&sym, q).map(|set| check_period_bounds(&set, p.n, p.rho)))
        .collect::<std::result::Result<_, _>>()?;

    Ok(model)
}

/// Smallest admissible total length at or above `from`.
fn first_admissible(model: &SymbolicModel, from: usize) -> Result<usize> {
    let table = periodic_sum_table(model, from + model.max_return_time())?;
    (from..=table.n_max)
        .find(|&t| table.admissible(t))
        .ok_or_else(|| stage_failure("no admissible balance length"))
}

/// A member of a family run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MemberConfig {
    /// A full single-measure schedule; its free energy is `h(mu) + ∫phi` when known and the
    /// final spanning estimate otherwise.
    Run { config: Box<RunConfig> },
    /// A symbolic model with a prescribed free energy.
    Synthetic {
        label: String,
        return_times: Vec<usize>,
        weights: Vec<f64>,
        free_energy: f64,
        n_max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub schema_version: u32,
    pub members: Vec<MemberConfig>,
    /// A stage qualifies when its gap is at most `threshold_factor * rho_k`.
    #[serde(default = "default_threshold_factor")]
    pub threshold_factor: f64,
}

fn default_threshold_factor() -> f64 {
    3.0
}

impl FamilyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: FamilyConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("schema_version {} unsupported", config.schema_version)));
        }
        if config.members.is_empty() {
            return Err(CliError::Config("family has no members".into()));
        }
        if !(config.threshold_factor > 0.0) {
            return Err(CliError::Config("threshold_factor must be positive".into()));
        }
        for m in &config.members {
            match m {
                MemberConfig::Run { config } => config.validate()?,
                MemberConfig::Synthetic { return_times, weights, n_max, .. } => {
                    let model = SymbolicModel::new(return_times.clone(), weights.clone())
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    if *n_max < 4 * model.max_return_time() {
                        return Err(CliError::Config("synthetic n_max below four times the longest return".into()));
                    }
                }
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        for m in &mut self.members {
            if let MemberConfig::Run { config } = m {
                config.apply(o)?;
            }
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Family outcome plus the per-member run outputs.
#[derive(Debug, Clone)]
pub struct FamilyOutput {
    pub report: FamilyReport,
    pub runs: Vec<Option<RunOutput>>,
}

impl FamilyOutput {
    /// Writes `family_report.json`, `diagonal.csv` and one subdirectory per run member.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("family_report.json"), self.report.to_json()?)?;
        write_csv(&dir.join("diagonal.csv"), &self.report.diagonal)?;
        for (i, run) in self.runs.iter().enumerate() {
            if let Some(run) = run {
                run.write(&dir.join(format!("member_{i}")))?;
            }
        }
        Ok(())
    }
}

/// Runs every member, certifies the family, and picks per member the latest completed
/// stage whose gap is within `threshold_factor * rho_k` (the last completed stage when
/// none qualifies). The family pressure is the largest diagonal pressure.
pub fn run_theorem_b(family: &FamilyConfig) -> Result<FamilyOutput> {
    let mut members = Vec::new();
    let mut certified = Vec::new();
    let mut diagonal = Vec::new();
    let mut runs = Vec::new();
    for (i, m) in family.members.iter().enumerate() {
        match m {
            MemberConfig::Run { config } => {
                let out = run_theorem_a(config)?;
                let label = config.label.clone().unwrap_or_else(|| format!("member-{i}"));
                let (last, model) = out
                    .final_stage()
                    .ok_or_else(|| stage_failure(format!("{label}: no stage produced a model")))?;
                let free_energy = match last.exact_free_energy {
                    Some(e) => e,
                    None => last.p_mu_hat.as_ref().map(|p| p.estimate.value).unwrap_or(f64::NAN),
                };
                let chosen = out
                    .report
                    .stages
                    .iter()
                    .rev()
                    .filter(|st| !st.failed())
                    .find(|st| st.gap.is_some_and(|g| g <= family.threshold_factor * st.rho))
                    .unwrap_or(last);
                let pressure = chosen.pressure.map(|p| p.value).unwrap_or(f64::NAN);
                diagonal.push(DiagonalEntry {
                    member: i,
                    label: label.clone(),
                    stage: Some(chosen.k),
                    rho: Some(chosen.rho),
                    pressure,
                    free_energy,
                    gap: (pressure - free_energy).abs(),
                    threshold: Some(family.threshold_factor * chosen.rho),
                });
                certified.push(FamilyMember {
                    label: label.clone(),
                    model: SymbolicModel::from_alekseev(model)?,
                    free_energy,
                });
                members.push(MemberReport {
                    label,
                    synthetic: false,
                    free_energy,
                    run: Some(out.report.clone()),
                });
                runs.push(Some(out));
            }
            MemberConfig::Synthetic {
                label,
                return_times,
                weights,
                free_energy,
                n_max,
            } => {
                let model = SymbolicModel::new(return_times.clone(), weights.clone())?;
                let pressure = pressure_periodic(&model, *n_max)?.value;
                diagonal.push(DiagonalEntry {
                    member: i,
                    label: label.clone(),
                    stage: None,
                    rho: None,
                    pressure,
                    free_energy: *free_energy,
                    gap: (pressure - free_energy).abs(),
                    threshold: None,
                });
                certified.push(FamilyMember {
                    label: label.clone(),
                    model,
                    free_energy: *free_energy,
                });
                members.push(MemberReport {
                    label: label.clone(),
                    synthetic: true,
                    free_energy: *free_energy,
                    run: None,
                });
                runs.push(None);
            }
        }
    }
    let certificate = hyperbolic_potential_certificate(&certified)?;
    if !certificate.positive {
        return Err(CliError::CertificateNegative {
            gap: certificate.gap,
            report: serde_json::to_string_pretty(&certificate)?,
        });
    }
    let (best_member, pressure) = diagonal
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, d)| if d.pressure > bp { (i, d.pressure) } else { (bi, bp) });
    Ok(FamilyOutput {
        report: FamilyReport {
            schema_version: SCHEMA_VERSION,
            config_sha256: family.sha256(),
            members,
            certificate,
            diagonal,
            pressure,
            best_member,
        },
        runs,
    })
}
