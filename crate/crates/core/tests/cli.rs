use std::fs;
use std::path::PathBuf;

use faasfit::catalog::{Rejection, Selection};
use faasfit::cli::{self, SweepRow, EXIT_CONFIG, EXIT_DOMAIN, EXIT_OK};
use faasfit::cost::{cost_from_simulation, find_pricing, CostReport};
use faasfit::fixtures;
use faasfit::harness::BenchOutcome;
use faasfit::simulator::SimulationResult;
use faasfit::ValidationReport;

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["faasfit"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn validate_exit_codes() {
    let (code, out, _) = run(&["validate", &scenario("tinybert_aws.json")]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("PASS"));

    let (code, out, _) = run(&[
        "--format",
        "json",
        "validate",
        &scenario("bert_base_aws.json"),
    ]);
    assert_eq!(code, EXIT_DOMAIN);
    let report: ValidationReport = serde_json::from_str(&out).unwrap();
    assert!(!report.passed);
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].limit_name, "function_size");

    let (code, _, _) = run(&[
        "validate",
        &scenario("bert_base_aws.json"),
        "--provider",
        "gcp",
    ]);
    assert_eq!(code, EXIT_OK);
}

#[test]
fn config_errors_exit_two() {
    let (code, _, err) = run(&["validate", "/nonexistent/scenario.json"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("scenario.json"), "{err}");

    let (code, _, _) = run(&[
        "validate",
        &scenario("tinybert_aws.json"),
        "--provider",
        "nope",
    ]);
    assert_eq!(code, EXIT_CONFIG);

    let (code, _, _) = run(&["no-such-command"]);
    assert_eq!(code, EXIT_CONFIG);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"provider": "aws", "surprise": 1}"#).unwrap();
    let (code, _, err) = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("surprise"), "{err}");

    let missing_catalog = dir.path().join("missing_catalog.json");
    fs::write(
        &missing_catalog,
        r#"{"provider": "aws", "catalog": "nowhere.json",
            "package": {"code_bytes": 1, "runtime_name": "onnxruntime", "model_name": "TinyBERT"}}"#,
    )
    .unwrap();
    let (code, _, err) = run(&["validate", missing_catalog.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("nowhere.json"), "{err}");
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("simulate"));
}

#[test]
fn select_outputs_parse() {
    let (code, out, _) = run(&[
        "--format",
        "json",
        "select",
        "--catalog",
        "builtin:sentiment",
    ]);
    assert_eq!(code, EXIT_OK);
    let sel: Selection = serde_json::from_str(&out).unwrap();
    assert_eq!(sel.model.name, "MobileBERT");
    assert_eq!(sel.rejected.len(), 2);

    let (code, out, _) = run(&[
        "--format",
        "json",
        "select",
        "--catalog",
        "builtin:sentiment",
        "--min-score",
        "0.99",
    ]);
    assert_eq!(code, EXIT_DOMAIN);
    let rejections: Vec<Rejection> = serde_json::from_str(&out).unwrap();
    assert_eq!(rejections.len(), 4);

    let (code, out, _) = run(&[
        "select",
        "--catalog",
        "builtin:sts",
        "--metric",
        "spearman_target",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("selected   AugSMobileBERT"), "{out}");
}

#[test]
fn simulate_is_deterministic_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let s = scenario("latency_replay.json");
    assert_eq!(
        run(&["simulate", &s, "--out", a.to_str().unwrap()]).0,
        EXIT_OK
    );
    assert_eq!(
        run(&["simulate", &s, "--out", b.to_str().unwrap()]).0,
        EXIT_OK
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        run(&["--seed", "5", "simulate", &s, "--out", c.to_str().unwrap()]).0,
        EXIT_OK
    );
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn sweep_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let (code, out, _) = run(&[
        "--format",
        "json",
        "simulate",
        &scenario("memory_sweep.json"),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<SweepRow> = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.len(), 7);
    let q50: Vec<f64> = rows.iter().map(|r| r.summary.unwrap().q50).collect();
    assert!(q50.windows(2).all(|w| w[1] <= w[0]), "{q50:?}");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.starts_with("memory_mb,"));

    let (code, _, _) = run(&[
        "simulate",
        &scenario("memory_sweep.json"),
        "--memory-sweep",
        "0,512",
    ]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn cost_from_result_file_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let result_path = dir.path().join("result.json");
    let (code, _, _) = run(&[
        "simulate",
        &scenario("latency_replay.json"),
        "--result-json",
        result_path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let (code, out, _) = run(&[
        "--format",
        "json",
        "cost",
        "--result",
        result_path.to_str().unwrap(),
        "--vm",
        "8",
    ]);
    assert_eq!(code, EXIT_OK);
    let report: CostReport = serde_json::from_str(&out).unwrap();
    let result: SimulationResult =
        serde_json::from_str(&fs::read_to_string(&result_path).unwrap()).unwrap();
    let all = fixtures::pricing();
    let pricing = find_pricing(&all, "aws").unwrap();
    let vm = faasfit::VmBaseline {
        monthly_price: "8".parse().unwrap(),
        memory_bytes: result.memory_bytes,
    };
    assert_eq!(report, cost_from_simulation(&result, pricing, Some(&vm)));
    assert_eq!(report.requests, result.records.len() as u64);
}

#[test]
fn cost_from_flags() {
    let (code, out, _) = run(&[
        "--format",
        "json",
        "cost",
        "--requests",
        "1000000",
        "--exec-ms",
        "100",
        "--memory-mb",
        "1024",
        "--pricing",
        "gcp",
    ]);
    assert_eq!(code, EXIT_OK);
    let report: CostReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.serverless_total.format_fixed(4), "1.8667");
    assert_eq!(report.vm_total, None);

    let (code, _, _) = run(&["cost", "--requests", "10"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn profile_dir_overrides_limits() {
    let dir = tempfile::tempdir().unwrap();
    let mut providers: serde_json::Value = serde_json::from_str(fixtures::PROVIDERS_JSON).unwrap();
    for p in providers["providers"].as_array_mut().unwrap() {
        if p["name"] == "aws" {
            p["max_package_bytes"] = serde_json::json!(500u64 << 20);
        }
    }
    fs::write(dir.path().join("providers.json"), providers.to_string()).unwrap();
    let (code, out, _) = run(&[
        "--profile-dir",
        dir.path().to_str().unwrap(),
        "validate",
        &scenario("bert_base_aws.json"),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");

    fs::write(dir.path().join("pricing.json"), "{not json").unwrap();
    let (code, _, err) = run(&[
        "--profile-dir",
        dir.path().to_str().unwrap(),
        "cost",
        "--requests",
        "1",
        "--exec-ms",
        "1",
    ]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("pricing.json"), "{err}");
}

#[test]
fn bench_stub_failures_trip_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let (code, out, _) = run(&[
        "--format",
        "json",
        "bench",
        "--rate",
        "20",
        "--duration",
        "1",
        "--warmup",
        "0",
        "--stub-delay-ms",
        "5",
        "--stub-fail-every",
        "2",
        "--max-error-ratio",
        "0.2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_DOMAIN);
    let json_end = out.rfind("error ratio").unwrap();
    let outcome: BenchOutcome = serde_json::from_str(&out[..json_end]).unwrap();
    assert_eq!(outcome.attempted, 20);
    assert_eq!(outcome.errors.http_status, 10);
    assert_eq!(outcome.error_ratio(), 0.5);
    let lines = fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(lines, 1 + outcome.samples.len());
}

#[test]
fn bench_preflight_rejects_large_payload() {
    let dir = tempfile::tempdir().unwrap();
    let payload = dir.path().join("payload.bin");
    fs::write(&payload, vec![0u8; 7 << 20]).unwrap();
    let (code, out, _) = run(&[
        "bench",
        "--payload-file",
        payload.to_str().unwrap(),
        "--limits-profile",
        "aws",
        "--duration",
        "1",
    ]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(out.contains("request_size"), "{out}");
}
