use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pressure_cli::{run_theorem_a, FamilyConfig, RunConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pressure"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small(epsilon: f64) -> Value {
    serde_json::json!({
        "schema_version": 1,
        "system": "affine-horseshoe",
        "potential": {"kind": "constant", "value": 0.0},
        "measure": {"kind": "bernoulli", "p": 0.5},
        "seed": 7,
        "rho": [0.4, 0.2],
        "s": [1],
        "n": [6, 8],
        "delta": [0.32],
        "epsilon": [epsilon],
        "spanning_n": [8],
        "sample_size": [5000, 20000],
        "spanning_sample": 20000,
        "n_max": 400
    })
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bad_configs_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut unknown = small(0.1);
    unknown["colour"] = Value::from(3);
    let mut decreasing = small(0.1);
    decreasing["rho"] = serde_json::json!([0.2, 0.4]);
    let mut short_horizon = small(0.1);
    short_horizon["n_max"] = Value::from(10);
    for (name, value) in [("unknown", unknown), ("decreasing", decreasing), ("horizon", short_horizon)] {
        let path = write_json(dir.path(), &format!("{name}.json"), &value);
        let out = run(&["theorem-a", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&out), 4, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(code(&run(&["theorem-a", "--config", garbage.to_str().unwrap()])), 4);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(&["validate", "--config", missing.to_str().unwrap()])), 4);
}

#[test]
fn theorem_a_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_json(dir.path(), "run.json", &small(0.1));
    let outs = ["a", "b"].map(|tag| dir.path().join(tag));
    for out in &outs {
        let result = run(&["theorem-a", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stdout));
    }
    let [a, b] = &outs;
    for file in ["report.json", "series.csv", "model_0.json", "model_1.json"] {
        let left = std::fs::read(a.join(file)).unwrap();
        assert_eq!(left, std::fs::read(b.join(file)).unwrap(), "{file} differs between runs");
    }
    let series = std::fs::read_to_string(a.join("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("k,rho,s,pressure,p_mu_hat,gap"));
    assert_eq!(series.lines().count(), 3);

    let report = read_json(&a.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["stages"].as_array().unwrap().len(), 2);
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);

    // Overrides are part of the hashed configuration.
    let c = dir.path().join("c");
    let result = run(&[
        "theorem-a",
        "--config",
        config.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "8",
        "--stages",
        "1",
    ]);
    assert_eq!(code(&result), 0);
    let other = read_json(&c.join("report.json"));
    assert_eq!(other["seed"], 8);
    assert_eq!(other["stages"].as_array().unwrap().len(), 1);
    assert_ne!(other["config_sha256"], report["config_sha256"]);
}

#[test]
fn walters_shift_through_the_library() {
    let base = run_theorem_a(&RunConfig::from_json(&small(0.1).to_string()).unwrap()).unwrap();
    let mut shifted = small(0.1);
    shifted["potential"] = serde_json::json!({"kind": "constant", "value": -0.5});
    let shifted = run_theorem_a(&RunConfig::from_json(&shifted.to_string()).unwrap()).unwrap();
    for (a, b) in base.report.stages.iter().zip(&shifted.report.stages) {
        let (pa, pb) = (a.pressure.unwrap().value, b.pressure.unwrap().value);
        assert!((pb - pa + 0.5).abs() < 1e-9, "stage {}: {pa} vs {pb}", a.k);
        assert_eq!(a.model.as_ref().unwrap().branches, b.model.as_ref().unwrap().branches);
    }
}

#[test]
fn validate_flags_a_corrupted_spanning_scale() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_json(dir.path(), "eps.json", &small(2.0));
    let out = run(&["validate", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.contains("FAIL") && l.contains("separated_sum")), "{stdout}");
    let report = read_json(&dir.path().join("report.json"));
    let p_hat = report["stages"][1]["p_mu_hat"]["estimate"]["value"].as_f64().unwrap();
    assert!(p_hat.abs() < 1e-12);
}

#[test]
fn rotation_stage_fails_with_cone_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("rotation.json");
    let out = run(&["theorem-a", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let report = read_json(&dir.path().join("report.json"));
    let stage = &report["stages"][0];
    assert!(stage["failure"].is_string());
    assert!(stage["rejections"]["cone"].as_u64().unwrap() > 0);
    assert!(stage["model"].is_null());
    assert!(!dir.path().join("model_0.json").exists());
}

#[test]
fn theorem_b_two_bernoulli_members() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("family_bernoulli.json");
    let out = run(&["theorem-b", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("family_report.json"));
    assert_eq!(report["best_member"], 0);
    assert_eq!(report["certificate"]["best"], 0);
    assert!(report["certificate"]["positive"].as_bool().unwrap());
    let diagonal = std::fs::read_to_string(dir.path().join("diagonal.csv")).unwrap();
    assert_eq!(
        diagonal.lines().next(),
        Some("member,label,stage,rho,pressure,free_energy,gap,threshold")
    );
    assert_eq!(diagonal.lines().count(), 3);
    assert!(dir.path().join("member_0/report.json").exists());
    assert!(dir.path().join("member_1/series.csv").exists());
    let p0 = report["diagonal"][0]["pressure"].as_f64().unwrap();
    let p1 = report["diagonal"][1]["pressure"].as_f64().unwrap();
    assert_eq!(report["pressure"].as_f64().unwrap(), p0.max(p1));
}

#[test]
fn single_member_family_matches_theorem_a() {
    let config = RunConfig::from_json(&small(0.1).to_string()).unwrap();
    let direct = run_theorem_a(&config).unwrap();
    let family = serde_json::json!({
        "schema_version": 1,
        "members": [{"kind": "run", "config": small(0.1)}]
    });
    let family = FamilyConfig::from_json(&family.to_string()).unwrap();
    let out = pressure_cli::run_theorem_b(&family).unwrap();
    let entry = &out.report.diagonal[0];
    let stage = &direct.report.stages[entry.stage.unwrap()];
    assert_eq!(entry.pressure, stage.pressure.unwrap().value);
    assert_eq!(out.report.pressure, entry.pressure);
    assert_eq!(entry.free_energy, 2f64.ln());
}

#[test]
fn synthetic_family_without_gap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let family = serde_json::json!({
        "schema_version": 1,
        "members": [{
            "kind": "synthetic",
            "label": "fixed-point",
            "return_times": [1],
            "weights": [0.0],
            "free_energy": 0.0,
            "n_max": 40
        }]
    });
    let path = write_json(dir.path(), "family.json", &family);
    let out = run(&["theorem-b", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("certificate"));
    assert!(!dir.path().join("family_report.json").exists());
}

#[test]
fn pressure_subcommand_reads_models_and_writes_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let bare = serde_json::json!({
        "return_times": [2, 3],
        "weights": [0.0, 0.0],
        "synthetic": true,
        "window": null
    });
    let path = write_json(dir.path(), "model.json", &bare);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "pressure",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--nmax",
        "200",
        "--oracle",
        "12",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&out_dir.join("pressure.json"));
    assert!((summary["bowen_root"].as_f64().unwrap() - 0.2811995743).abs() < 1e-9);
    assert_eq!(summary["alphabet"], 2);
    let oracle = std::fs::read_to_string(out_dir.join("oracle.csv")).unwrap();
    let mut lines = oracle.lines();
    assert_eq!(lines.next(), Some("N,log_C_exact,log_C_table,diff"));
    assert_eq!(lines.count(), 13);

    // A model document written by a run.
    let run_dir = dir.path().join("run");
    let config = write_json(dir.path(), "run.json", &small(0.1));
    assert_eq!(
        code(&run(&["theorem-a", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()])),
        0
    );
    let doc = run_dir.join("model_1.json");
    let out = run(&["pressure", "--config", doc.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = read_json(&run_dir.join("report.json"));
    let root = report["stages"][1]["bowen_root"]["value"].as_f64().unwrap();
    assert!((printed["bowen_root"].as_f64().unwrap() - root).abs() < 1e-12);
}

#[test]
fn lyapunov_subcommand_prints_cat_map_exponents() {
    let out = run(&["lyapunov", "--system", "cat-map", "--point", "0.1,0.2", "--point", "0.3,0.9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    for r in reports.as_array().unwrap() {
        assert_eq!(r["horizon"], 50);
        assert!((r["exponents"][1].as_f64().unwrap() - exact).abs() < 1e-6);
        assert!((r["exponents"][0].as_f64().unwrap() + exact).abs() < 1e-6);
    }
    assert_ne!(code(&run(&["lyapunov", "--system", "cat-map", "--point", "oops"])), 0);
}
