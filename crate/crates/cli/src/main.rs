use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pressure_cli::error::{EXIT_OK, EXIT_STAGE, EXIT_VALIDATION};
use pressure_cli::{run_theorem_a, run_theorem_b, CliError, FamilyConfig, Overrides, Result, RunConfig};
use pressure_core::dynamics::{finite_time_lyapunov, Builtin};
use pressure_core::horseshoe::ModelDocument;
use pressure_core::symbolic::{bowen_root, oracle_csv, oracle_rows, pressure_periodic, SymbolicModel};

#[derive(Parser)]
#[command(name = "pressure", version, about = "Pressure estimates from variable-return-time horseshoes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON input document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `output_dir`, then `pressure-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run only the first `k` stages.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    nmax: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            stages: self.stages,
            n_max: self.nmax,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a schedule of horseshoe approximations for one measure.
    TheoremA(Common),
    /// Run a family of schedules and take the diagonal supremum.
    TheoremB(Common),
    /// Periodic-orbit pressure and Bowen root of a model document.
    Pressure {
        #[command(flatten)]
        common: Common,
        /// Also export brute-force word sums up to this total length.
        #[arg(long)]
        oracle: Option<usize>,
    },
    /// Finite-time Lyapunov spectrum at points of a built-in system.
    Lyapunov {
        #[arg(long, value_parser = parse_builtin)]
        system: Builtin,
        /// `x,y`; repeatable.
        #[arg(long = "point", value_parser = parse_point, required = true)]
        points: Vec<[f64; 2]>,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
    },
    /// Run a schedule and report the constant checklist of every stage.
    Validate(Common),
}

fn parse_builtin(s: &str) -> std::result::Result<Builtin, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x: f64 = x.trim().parse().map_err(|e| format!("{e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("{e}"))?;
    Ok([x, y])
}

fn out_dir(common: &Common, from_config: Option<&Path>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("pressure-out"))
}

fn load_run(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    config.apply(&common.overrides())?;
    Ok(config)
}

fn theorem_a(common: &Common) -> Result<i32> {
    let config = load_run(common)?;
    let out = run_theorem_a(&config)?;
    let dir = out_dir(common, config.output_dir.as_deref());
    out.write(&dir)?;
    for st in &out.report.stages {
        match (&st.failure, st.pressure, st.gap) {
            (Some(reason), ..) => println!("stage {} rho={} FAILED: {reason}", st.k, st.rho),
            (None, Some(p), gap) => println!(
                "stage {} rho={} s={} n={} branches={} pressure={:.6} gap={} checks={}",
                st.k,
                st.rho,
                st.s,
                st.n,
                st.model.as_ref().map_or(0, |m| m.branches),
                p.value,
                gap.map_or("-".into(), |g| format!("{g:.6}")),
                if st.checks_passed() { "pass" } else { "FAIL" }
            ),
            (None, None, _) => println!("stage {} rho={} no pressure", st.k, st.rho),
        }
    }
    println!("report written to {}", dir.display());
    Ok(if out.report.any_stage_failed() {
        EXIT_STAGE
    } else if !out.report.checks_passed() {
        EXIT_VALIDATION
    } else {
        EXIT_OK
    })
}

fn theorem_b(common: &Common) -> Result<i32> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut family = FamilyConfig::from_json(&text)?;
    family.apply(&common.overrides())?;
    let out = match run_theorem_b(&family) {
        Err(CliError::CertificateNegative { gap, report }) => {
            eprintln!("{report}");
            return Err(CliError::CertificateNegative { gap, report });
        }
        other => other?,
    };
    let dir = out_dir(common, None);
    out.write(&dir)?;
    for d in &out.report.diagonal {
        println!(
            "{}: stage {} pressure={:.6} free_energy={:.6} gap={:.6}",
            d.label,
            d.stage.map_or("-".into(), |k| k.to_string()),
            d.pressure,
            d.free_energy,
            d.gap
        );
    }
    println!("pressure estimate {:.6} (member {})", out.report.pressure, out.report.best_member);
    let failed = out.runs.iter().flatten().any(|r| r.report.any_stage_failed());
    Ok(if failed { EXIT_STAGE } else { EXIT_OK })
}

/// A model document from a run, or a bare symbolic model.
fn load_model(path: &Path) -> Result<SymbolicModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(e.to_string()))?;
    if let Ok(doc) = ModelDocument::from_json(&text) {
        return Ok(SymbolicModel::from_document(&doc)?);
    }
    let bare: SymbolicModel = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    SymbolicModel::new(bare.return_times, bare.weights).map_err(|e| CliError::Config(e.to_string()))
}

fn pressure(common: &Common, oracle: Option<usize>) -> Result<i32> {
    let model = load_model(&common.config)?;
    let n_max = common.nmax.unwrap_or(4 * model.max_return_time()).max(4 * model.max_return_time());
    let estimate = pressure_periodic(&model, n_max)?;
    let root = bowen_root(&model);
    let summary = serde_json::json!({
        "periodic_sum": estimate,
        "bowen_root": root,
        "alphabet": model.alphabet_size(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("pressure.json"), serde_json::to_string_pretty(&summary)?)?;
        if let Some(n) = oracle {
            std::fs::write(dir.join("oracle.csv"), oracle_csv(&oracle_rows(&model, n)?)?)?;
        }
    }
    Ok(EXIT_OK)
}

fn lyapunov(system: Builtin, points: &[[f64; 2]], horizon: usize) -> Result<i32> {
    let sys = system.build();
    let reports = points
        .iter()
        .map(|&p| finite_time_lyapunov(sys.as_ref(), p, horizon))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(EXIT_OK)
}

fn validate(common: &Common) -> Result<i32> {
    let config = load_run(common)?;
    let out = run_theorem_a(&config)?;
    let dir = out_dir(common, config.output_dir.as_deref());
    out.write(&dir)?;
    for st in &out.report.stages {
        println!("stage {} (rho={}, n={})", st.k, st.rho, st.n);
        for v in &st.validators {
            let verdict = match v.passed {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "n/a",
            };
            println!(
                "  {verdict:4} {:24} measured={} threshold={}",
                v.name,
                v.measured.map_or("-".into(), |m| format!("{m:.6}")),
                v.threshold.map_or("-".into(), |t| format!("{t:.6}"))
            );
        }
    }
    Ok(if out.report.validators_passed() && out.report.checks_passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TheoremA(c) => theorem_a(c),
        Command::TheoremB(c) => theorem_b(c),
        Command::Pressure { common, oracle } => pressure(common, *oracle),
        Command::Lyapunov { system, points, horizon } => lyapunov(*system, points, *horizon),
        Command::Validate(c) => validate(c),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
