#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use serde_json::{json, Value};

fn fixture(dir: &Path) -> PathBuf {
    let path = dir.join("fixture.json");
    let doc = json!({"exchanges": [
        {"template_id": "dispatch", "response": "BUILD"},
        {"template_id": "automl_router", "response": "NO"},
        {"template_id": "problem_reflection", "response": REFLECTION},
        {"template_id": "plan", "response": PLAN},
        {"template_id": "generate_solution", "fill_skeleton": {"modeling": GOOD_MODEL}},
        {"template_id": "automl_config", "response": AUTOML_CONFIG},
        {"template_id": "automl_params", "response": AUTOML_PARAMS},
        {"template_id": "reporter", "response": REPORT},
    ]});
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

fn lads(dir: &Path, args: &[&str]) -> Output {
    let fx = fixture(dir);
    let work = dir.join("work");
    Command::new(env!("CARGO_BIN_EXE_lads"))
        .arg("--scripted")
        .arg(&fx)
        .arg("--workdir")
        .arg(&work)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn offline_run_prints_a_validated_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path(), 5);
    let data = data.to_str().unwrap();

    let json_out = stdout(&lads(
        dir.path(),
        &["run", "--dataset", data, "--query", "predict target", "--json"],
    ));
    let v: Value = serde_json::from_str(&json_out).unwrap();
    assert_eq!(v["decision"], "BUILD");
    assert_eq!(v["route"], "CODEGEN");
    assert_eq!(v["verdict"], "VALID");
    let auc = v["metrics"]["auc"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&auc), "{auc}");
    assert!(Path::new(v["inference_package"].as_str().unwrap())
        .join("solution.py")
        .exists());

    let text = stdout(&lads(
        dir.path(),
        &["run", "--dataset", data, "--query", "predict target", "--route", "stub"],
    ));
    assert!(text.contains("verdict      VALID"), "{text}");
    assert!(text.contains("route        AUTOML"), "{text}");
}

fn write_bundle(root: &Path, name: &str, seed: u64) {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let rows = binary_rows(200, seed);
    write_csv(&dir.join("train.csv"), &BINARY_HEADER, &rows[..160]);
    let test: Vec<Vec<String>> = rows[160..].iter().map(|r| r[..5].to_vec()).collect();
    write_csv(&dir.join("test.csv"), &BINARY_HEADER[..5], &test);
    std::fs::write(
        dir.join("description.md"),
        format!("Predict conversions for the {name} customers.\n"),
    )
    .unwrap();
    std::fs::write(
        dir.join("bundle.toml"),
        format!("name = \"{name}\"\nmetric = \"auc\"\n"),
    )
    .unwrap();
}

#[test]
fn bench_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let bundles = dir.path().join("bundles");
    write_bundle(&bundles, "alpha", 1);
    let results = dir.path().join("results.csv");
    let results_arg = results.to_str().unwrap();

    let out = stdout(&lads(
        dir.path(),
        &[
            "bench",
            "--bundles",
            bundles.to_str().unwrap(),
            "--tools",
            "codegen,stub",
            "--results",
            results_arg,
        ],
    ));
    assert!(out.contains("| alpha |"), "{out}");
    let written = std::fs::read_to_string(&results).unwrap();
    assert_eq!(written.lines().count(), 3, "{written}");

    let again = stdout(&lads(dir.path(), &["summarize", "--results", results_arg]));
    assert_eq!(again, out);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = lads(dir.path(), &["summarize", "--results", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"exchanges": [{"template_id": "dispatch"}]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lads"))
        .args([
            "--scripted",
            bad.to_str().unwrap(),
            "run",
            "--dataset",
            "x.csv",
            "--query",
            "q",
        ])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly one of"));
}
