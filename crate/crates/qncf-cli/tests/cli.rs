//! End-to-end tests of the `qncf` binary: golden-report stability, schema
//! conformance, generator determinism, exit-code contracts, and the
//! comparison-batch surface.
//!
//! Reports are compared in canonical form: wall time zeroed and the output
//! directory (echoed into the config block) removed, so the bytes depend
//! only on (config, seed). The committed golden file can be refreshed with
//! `QNCF_UPDATE_GOLDEN=1` after auditing whatever changed the output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qncf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qncf"))
}

/// Fresh per-test scratch directory under the system temp dir.
fn scratch(label: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qncf-cli-{label}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn qncf")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process terminated by signal")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Report bytes with the run-dependent parts stripped: wall time zeroed and
/// the echoed output directory removed.
fn canonical_report(path: &Path) -> Vec<u8> {
    let mut report = read_value(path);
    report["wall_time_ms"] = json!(0.0);
    report["config"].as_object_mut().expect("config object").remove("out");
    let mut bytes = serde_json::to_vec_pretty(&report).expect("serialize report");
    bytes.push(b'\n');
    bytes
}

fn read_value(path: &Path) -> Value {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

fn assert_matches_schema(report: &Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    let schema = read_value(&schema_path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations:\n{}", errors.join("\n"));
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    let mut bytes = serde_json::to_vec_pretty(config).expect("serialize config");
    bytes.push(b'\n');
    fs::write(&path, bytes).expect("write config");
    path
}

#[test]
fn run_reproduces_the_committed_golden_report() {
    let config = fixture("run-canonical-analytic.json");
    let mut canonical = Vec::new();
    for label in ["golden-a", "golden-b"] {
        let dir = scratch(label);
        let out = run(qncf().args(["run", "--config"]).arg(&config).arg("--out").arg(&dir));
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
        assert!(stdout(&out).contains("verdict: vector"), "stdout: {}", stdout(&out));
        canonical.push(canonical_report(&dir.join("report-analytic-seed7.json")));
    }
    assert_eq!(
        canonical[0], canonical[1],
        "identical (config, seed) must reproduce identical report bytes"
    );

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden/report-analytic-seed7.json");
    if std::env::var_os("QNCF_UPDATE_GOLDEN").is_some() {
        fs::write(&golden_path, &canonical[0]).expect("update golden report");
    }
    let golden = fs::read(&golden_path).expect("committed golden report");
    assert_eq!(
        canonical[0], golden,
        "report drifted from the committed golden; audit the change, then \
         refresh with QNCF_UPDATE_GOLDEN=1"
    );

    let report: Value = serde_json::from_slice(&canonical[0]).expect("parse canonical report");
    assert_matches_schema(&report);
}

#[test]
fn generated_instance_files_are_deterministic() {
    let dir = scratch("gen");
    let spec = json!({
        "d": 12,
        "r": 3,
        "spectrum": [-0.5, 0.3, 0.2],
        "lipschitz": 1.0,
        "separation": 0.05,
        "seed": 11
    });
    let spec_path = write_config(&dir, "spec.json", &spec);

    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let run = run(qncf().args(["gen", "--config"]).arg(&spec_path).arg("--out").arg(out));
        assert_eq!(exit_code(&run), 0, "stderr: {}", stderr(&run));
    }

    let name = "instance-d12-r3-seed11.json";
    let bytes_a = fs::read(out_a.join(name)).expect("first instance file");
    let bytes_b = fs::read(out_b.join(name)).expect("second instance file");
    assert_eq!(bytes_a, bytes_b, "same spec and seed must generate identical bytes");

    // The file round-trips into a usable operator.
    let h: qncf_core::hessian::Hessian =
        serde_json::from_slice(&bytes_a).expect("instance file parses");
    assert_eq!((h.d, h.r), (12, 3));
    assert_eq!(h.entry(3, 7), h.entry(7, 3));

    // --seed overrides the spec's frame seed and lands in the file name.
    let run = run(qncf()
        .args(["gen", "--config"])
        .arg(&spec_path)
        .args(["--seed", "99", "--out"])
        .arg(&out_a));
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr(&run));
    assert!(out_a.join("instance-d12-r3-seed99.json").exists());
}

#[test]
fn malformed_configs_are_usage_errors() {
    let dir = scratch("malformed");

    // Unparsable JSON.
    let truncated = dir.join("truncated.json");
    fs::write(&truncated, "{\"d\": 12,").expect("write truncated spec");
    let out = run(qncf().args(["gen", "--config"]).arg(&truncated));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));

    // Parsable spec violating an input assumption (spectrum shorter than r).
    let mismatched = write_config(
        &dir,
        "mismatched.json",
        &json!({
            "d": 12,
            "r": 3,
            "spectrum": [-0.5, 0.3],
            "lipschitz": 1.0,
            "separation": 0.05,
            "seed": 11
        }),
    );
    let out = run(qncf().args(["gen", "--config"]).arg(&mismatched));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));

    // Missing config file.
    let out = run(qncf().args(["run", "--config"]).arg(dir.join("no-such-file.json")));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
}

/// Run config for a small synthetic instance (failure budget 8⁻⁴ to match
/// the d⁻⁴ policy used elsewhere).
fn small_config(spectrum: Value, r: u64, seed: u64, backend: &str) -> Value {
    json!({
        "instance": {
            "kind": "generate",
            "d": 8,
            "r": r,
            "spectrum": spectrum,
            "lipschitz": 1.0,
            "separation": 0.05,
            "seed": seed
        },
        "params": { "alpha": 0.5, "eps": 0.2, "delta": 0.01 },
        "sve": {
            "eps_est": 0.05,
            "p_fail": 0.000244140625,
            "grid_w": 0.0125,
            "noise": "uniform"
        },
        "backend": backend,
        "seed": seed
    })
}

#[test]
fn positive_definite_instances_report_no_vector() {
    let dir = scratch("novector");
    let config =
        write_config(&dir, "config.json", &small_config(json!([0.7, 0.3]), 2, 3, "analytic"));

    let out = run(qncf().args(["run", "--config"]).arg(&config).arg("--out").arg(&dir));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("verdict: no-vector"), "stdout: {}", stdout(&out));

    let report = read_value(&dir.join("report-analytic-seed3.json"));
    assert_eq!(report["verdict"], json!("no-vector"));
    assert_eq!(report["basis"], Value::Null);
    assert_eq!(report["readout"], Value::Null);
    assert_eq!(report["verification"]["applicable"], json!(false));
    // Vector-only diagnostics serialize as null on no-vector runs; the
    // schema must accept that shape too.
    assert_eq!(report["verification"]["norm"], Value::Null);
    assert_matches_schema(&report);
}

#[test]
fn backends_agree_on_a_small_instance() {
    let dir = scratch("backends");
    let mut reports = Vec::new();
    for backend in ["statevector", "analytic"] {
        let config = write_config(
            &dir,
            &format!("config-{backend}.json"),
            &small_config(json!([-0.65, 0.35, 0.2]), 3, 5, backend),
        );
        let out = run(qncf().args(["run", "--config"]).arg(&config).arg("--out").arg(&dir));
        assert_eq!(exit_code(&out), 0, "{backend} stderr: {}", stderr(&out));
        reports.push(read_value(&dir.join(format!("report-{backend}-seed5.json"))));
    }
    // Same seed policy on both backends: identical verdict and evidence.
    assert_eq!(reports[0]["verdict"], reports[1]["verdict"]);
    assert_eq!(reports[0]["tally"], reports[1]["tally"]);
    assert_eq!(reports[0]["queries"], reports[1]["queries"]);
    assert_matches_schema(&reports[0]);
}

#[test]
fn compare_batches_tabulate_agreement() {
    let dir = scratch("compare");
    let out = run(qncf()
        .env("QNCF_THREADS", "2")
        .args(["compare", "--config"])
        .arg(fixture("run-canonical-analytic.json"))
        .args(["--runs", "3", "--out"])
        .arg(&dir));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("agreement: 3/3 (0 boundary-excluded, 0 failed runs)"),
        "stdout: {text}"
    );

    let rows = read_value(&dir.join("compare-analytic-seed7-runs3.json"));
    let rows = rows.as_array().expect("rows array");
    assert_eq!(rows.len(), 3);
    let seeds: Vec<u64> = rows.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![7, 8, 9]);
    assert!(rows.iter().all(|r| r["verdict_match"] == json!(true)));
}

#[test]
fn boundary_band_rows_are_flagged_and_excluded() {
    let dir = scratch("boundary");
    // λ_min = −0.45 sits inside (−α, −α + ε/2] = (−0.5, −0.4]: the verdict
    // is unconstrained there, so the row must not count toward agreement.
    let config =
        write_config(&dir, "config.json", &small_config(json!([-0.45, 0.2]), 2, 5, "analytic"));

    let out = run(qncf().args(["compare", "--config"]).arg(&config));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("excluded (boundary band)"), "stdout: {text}");
    assert!(
        text.contains("agreement: 0/0 (1 boundary-excluded, 0 failed runs)"),
        "stdout: {text}"
    );
}

#[test]
fn accept_runs_named_suites() {
    let out = run(qncf().args(["accept", "--suite", "reproducibility"]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS"), "stdout: {text}");
    assert!(text.contains("reproducibility"), "stdout: {text}");
    assert!(text.contains("acceptance: all 1 criteria passed"), "stdout: {text}");
}

#[test]
fn unknown_suites_are_usage_errors() {
    let out = run(qncf().args(["accept", "--suite", "no-such-suite"]));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("unknown suite"), "stderr: {}", stderr(&out));
}

#[test]
fn invalid_thread_caps_are_usage_errors() {
    let out = run(qncf()
        .env("QNCF_THREADS", "zero")
        .args(["compare", "--config"])
        .arg(fixture("run-canonical-analytic.json")));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("QNCF_THREADS"), "stderr: {}", stderr(&out));
}
