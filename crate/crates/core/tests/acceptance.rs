//! One PASS/FAIL line per acceptance criterion. Runs offline.

mod common;

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use lads_core::automl::{extract_config, route};
use lads_core::bench::{read_rows, run_benchmark, CellRunner, ResultsFile, CSV_COLUMNS};
use lads_core::codegen::{assemble_skeleton, Backend, TaskSpec, VerdictStatus};
use lads_core::dataset::split_indices;
use lads_core::gateway::{match_token, normalize_token, ScriptedExchange};
use lads_core::report::detect_sections;
use lads_core::sandbox::parse_metrics;
use lads_core::session::ActiveRoute;
use lads_core::{normalize_score, start_session, summarize, AutomlError, Direction, Metric, SessionError, TaskBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let s: f64 = rng.random_range(0.0..100.0);
        let smaller = rng.random_bool(0.5);
        let dir = if smaller {
            Direction::SmallerBetter
        } else {
            Direction::LargerBetter
        };
        let got = normalize_score(s, dir).map_err(|e| e.to_string())?;
        worst = worst.max((got - nps_oracle(s, smaller)).abs());
    }
    let elapsed = started.elapsed();
    ensure(worst <= 1e-12, format!("max error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    let spot = [
        normalize_score(0.0, Direction::SmallerBetter).unwrap(),
        normalize_score(0.25, Direction::SmallerBetter).unwrap(),
        normalize_score(0.780, Direction::LargerBetter).unwrap(),
    ];
    ensure(
        (spot[0] - 1.0).abs() <= 1e-12 && (spot[1] - 0.8).abs() <= 1e-12 && (spot[2] - 0.780).abs() <= 1e-12,
        format!("spot values {spot:?}"),
    )?;
    Ok(format!("max error {worst:.1e} over 10^4 inputs in {elapsed:?}"))
}

fn c2_average() -> Check {
    let scores = [0.745, 0.798, 0.886, 0.774, 0.836, 0.883, 0.905, 0.886];
    let rows: Vec<_> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| lads_core::BenchmarkRow::scored(&format!("d{i}"), "agent", Metric::Auc, s).unwrap())
        .collect();
    let mean = summarize(&rows, None)
        .average("agent")
        .and_then(|a| a.mean)
        .ok_or("no average")?;
    ensure((mean - 0.839).abs() <= 0.0005, format!("mean {mean}"))?;
    Ok(format!("mean {mean:.4}"))
}

fn c3_end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = binary_dataset(dir.path(), 7);
    let (gw, _) = scripted(codegen_exchanges(GOOD_MODEL, &[]));
    let started = Instant::now();
    let mut s = start_session(
        "Build a model that predicts target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), 3),
    )
    .map_err(|e| e.to_string())?;
    let r = s.run_turn().map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(r.route == Some(ActiveRoute::Codegen), format!("route {:?}", r.route))?;
    ensure(
        r.verdict == Some(VerdictStatus::Valid),
        format!("verdict {:?}", r.verdict),
    )?;
    ensure(
        r.predictions.as_ref().is_some_and(|p| p.is_file()),
        "no submission file",
    )?;
    let sections = detect_sections(r.report.as_deref().unwrap_or_default()).len();
    ensure(sections == 6, format!("{sections} report sections"))?;
    let pkg = r.inference_package.ok_or("no inference package")?;
    ensure(
        pkg.join("predict.py").is_file() && pkg.join("model_artifact").is_file(),
        "incomplete package",
    )?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "VALID, 6 sections, package exported, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn c4_self_repair() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = binary_dataset(dir.path(), 3);
    let (gw, provider) = scripted(codegen_exchanges(BROKEN_MODEL, &[GOOD_MODEL]));
    let mut s = start_session(
        "predict target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), 3),
    )
    .map_err(|e| e.to_string())?;
    let r = s.run_turn().map_err(|e| e.to_string())?;
    let record = s.state().artifacts.last().ok_or("no artifact")?;
    let runs = record.run_dir.parent().ok_or("no runs dir")?;
    let executions = std::fs::read_dir(runs).map_err(|e| e.to_string())?.count();
    ensure(
        r.verdict == Some(VerdictStatus::Valid),
        format!("verdict {:?}", r.verdict),
    )?;
    ensure(
        record.run_dir.ends_with("gen-1"),
        format!("final run {:?}", record.run_dir),
    )?;
    ensure(executions == 2, format!("{executions} executions"))?;
    ensure(provider.requests_for("fix_solution").len() == 1, "fix count")?;
    Ok("VALID at generation 1 after 2 executions".into())
}

fn c5_budget() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = binary_dataset(dir.path(), 5);
    let max = 2;
    let (gw, provider) = scripted(codegen_exchanges(BROKEN_MODEL, &[BROKEN_MODEL]));
    let mut s = start_session(
        "predict target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), max),
    )
    .map_err(|e| e.to_string())?;
    match s.run_turn() {
        Err(SessionError::LoopBudgetExhausted { iterations, .. }) => {
            let fixes = provider.requests_for("fix_solution").len();
            ensure(
                iterations == max && fixes == max as usize,
                format!("{iterations} iterations, {fixes} fixes"),
            )?;
            Ok(format!("LoopBudgetExhausted after {max} improve cycles"))
        }
        other => Err(format!("got {other:?}")),
    }
}

fn c6_router() -> Check {
    #[derive(serde::Deserialize)]
    struct Case {
        query: String,
        response: String,
        expected: String,
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/router_queries.json");
    let cases: Vec<Case> =
        serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (gw, _) = scripted(
        cases
            .iter()
            .map(|c| ScriptedExchange::text("automl_router", c.response.clone()).containing(c.query.clone()))
            .collect(),
    );
    let correct = cases
        .iter()
        .filter(|c| route(&gw, &c.query).is_ok_and(|t| t.as_str() == c.expected))
        .count();
    ensure(correct == 12, format!("{correct}/12"))?;
    let suite = [
        ("lama", "LAMA"),
        ("  Fedot. ", "FEDOT"),
        ("**NO**", "NO"),
        ("`Build`", "BUILD"),
        ("end!", "END"),
    ];
    ensure(
        suite.iter().all(|(raw, want)| normalize_token(raw) == *want),
        "normalizer",
    )?;
    ensure(
        match_token("build or end", &["INTERACT", "BUILD", "END"]).is_none()
            && match_token("Decision: build.", &["INTERACT", "BUILD", "END"]).as_deref() == Some("BUILD"),
        "match_token",
    )?;
    Ok("12/12 routed, normalizer suite passed".into())
}

fn c7_config() -> Check {
    let cols = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let (gw, _) = scripted(vec![
        ScriptedExchange::text(
            "automl_config",
            r#"{"task_type":"reg","target":"price","task_metric":"r2-score"}"#,
        )
        .containing("house"),
        ScriptedExchange::text("automl_config", AUTOML_CONFIG).containing("churn"),
        ScriptedExchange::text(
            "automl_config",
            r#"{"task_type":"reg","target":"y","task_metric":"auc"}"#,
        ),
    ]);
    let reg = extract_config(&gw, "house prices", "h.csv", &cols(&["price"]), "").map_err(|e| e.to_string())?;
    let bin = extract_config(&gw, "churn", "c.csv", &cols(&["target"]), "").map_err(|e| e.to_string())?;
    let got = [
        (reg.task_type.as_str(), reg.task_metric.name()),
        (bin.task_type.as_str(), bin.task_metric.name()),
    ];
    ensure(got == [("reg", "r2-score"), ("binary", "auc")], format!("{got:?}"))?;
    match extract_config(&gw, "other", "o.csv", &cols(&["y"]), "") {
        Err(AutomlError::InvalidConfig(_)) => Ok("exact pairs extracted, pairing violation rejected".into()),
        other => Err(format!("pairing violation gave {other:?}")),
    }
}

fn c8_split() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let n: usize = rng.random_range(2..3000);
        let seed: u64 = rng.random();
        let s = split_indices(n, seed).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        let ok = s.train.len() == (n as f64 * 0.8).floor() as usize
            && all == (0..n).collect::<Vec<_>>()
            && s.train.windows(2).all(|w| w[0] < w[1])
            && s.val.windows(2).all(|w| w[0] < w[1])
            && split_indices(n, seed).is_ok_and(|again| again == s);
        ensure(ok, format!("n={n} seed={seed}"))?;
    }
    Ok("500 (n, seed) pairs".into())
}

fn c9_protected() -> Check {
    let spec = TaskSpec {
        target: "target".into(),
        metric: Metric::Auc,
        id_column: Some("id".into()),
        submission_file: "submission.csv".into(),
        seed: 42,
    };
    let sk = assemble_skeleton(&spec, &Backend::Generic, false).map_err(|e| e.to_string())?;
    let code = sk
        .fill(&BTreeMap::from([("modeling".to_string(), GOOD_MODEL.to_string())]))
        .map_err(|e| e.to_string())?;
    ensure(sk.check_protected(&code).is_ok(), "identity rejected")?;
    let lines: Vec<&str> = code.lines().collect();
    let mut frozen = Vec::new();
    let mut blocks = Vec::new();
    let mut inside = None;
    for (i, l) in lines.iter().enumerate() {
        if l.starts_with("### BEGIN FROZEN") {
            inside = Some(i);
        } else if l.starts_with("### END FROZEN") {
            blocks.push((inside.take().unwrap(), i));
        } else if inside.is_some() && !l.trim().is_empty() {
            frozen.push(i);
        }
    }
    let comments: Vec<usize> = frozen
        .iter()
        .copied()
        .filter(|&i| lines[i].trim_start().starts_with('#'))
        .collect();
    let stmts: Vec<usize> = frozen
        .iter()
        .copied()
        .filter(|&i| !lines[i].trim_start().starts_with('#'))
        .collect();
    let rebuild = |v: Vec<String>| v.join("\n") + "\n";
    let mut mutants = Vec::new();
    for k in 0..7 {
        let i = comments[k * comments.len() / 7];
        let mut m: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        m.remove(i);
        mutants.push(rebuild(m));
    }
    for k in 0..9 {
        let i = stmts[k * stmts.len() / 9];
        let mut m: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        m[i] = format!("{} # edited", m[i]);
        mutants.push(rebuild(m));
    }
    for (a, b) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
        let (a, b) = (blocks[a], blocks[b]);
        let mut m: Vec<String> = lines[..a.0].iter().map(|s| s.to_string()).collect();
        for range in [b.0..b.1 + 1, a.1 + 1..b.0, a.0..a.1 + 1, b.1 + 1..lines.len()] {
            m.extend(lines[range].iter().map(|s| s.to_string()));
        }
        mutants.push(rebuild(m));
    }
    let detected = mutants.iter().filter(|m| sk.check_protected(m).is_err()).count();
    ensure(
        mutants.len() == 20 && detected == 20,
        format!("{detected}/{} detected", mutants.len()),
    )?;
    Ok("20/20 mutants detected, identity passes".into())
}

fn c10_sandbox() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path().canonicalize().map_err(|e| e.to_string())?;
    let sentinel = root.join("sentinel");
    std::fs::create_dir_all(&sentinel).map_err(|e| e.to_string())?;
    std::fs::write(sentinel.join("secret.txt"), "keep\n").map_err(|e| e.to_string())?;
    let digest = || lads_core::sandbox::tree_digest(&sentinel).unwrap();
    let mode = || {
        use std::os::unix::fs::PermissionsExt;
        std::fs::metadata(sentinel.join("secret.txt"))
            .unwrap()
            .permissions()
            .mode()
    };
    let (before, mode_before) = (digest(), mode());
    let target = format!("{:?}", sentinel.join("secret.txt").display().to_string());
    let attacks = [
        format!("open({target}, 'w').write('x')"),
        format!("open({target}, 'a').write('x')"),
        format!("import os\nos.remove({target})"),
        format!("import os\nos.rename({target}, 'x')"),
        format!("import os\nos.chmod({target}, 0o777)"),
        format!("import os\nos.symlink({target}, 'l')\nopen('l', 'w').write('x')"),
        format!("import os\nos.link({target}, 'h')\nopen('h', 'w').write('x')"),
        format!("import shutil, os\nshutil.rmtree(os.path.dirname({target}))"),
        format!("import subprocess\nsubprocess.run(['sh', '-c', 'rm -f ' + {target}])"),
        format!("import os\nopen(os.path.join(os.path.dirname({target}), 'new'), 'w')"),
    ];
    let sb = sandbox(Duration::from_secs(10));
    for round in 0..5 {
        for (k, a) in attacks.iter().enumerate() {
            let wd = root.join(format!("w{round}-{k}"));
            std::fs::create_dir_all(&wd).map_err(|e| e.to_string())?;
            let script = if round % 2 == 0 {
                a.clone()
            } else {
                format!("try:\n    exec({a:?})\nexcept Exception as e:\n    print(e)")
            };
            sb.execute_code(&wd, "a.py", &script).map_err(|e| e.to_string())?;
        }
    }
    ensure(digest() == before && mode() == mode_before, "sentinel changed")?;
    let wd = root.join("spin");
    std::fs::create_dir_all(&wd).map_err(|e| e.to_string())?;
    let limit = Duration::from_secs(2);
    let started = Instant::now();
    let r = sandbox(limit)
        .execute_code(&wd, "spin.py", "while True:\n    pass\n")
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(
        r.timed_out && elapsed <= limit + Duration::from_secs(1),
        format!("timeout took {elapsed:?}"),
    )?;
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let stdout = std::fs::read_to_string(golden.join("metric_stdout.txt")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, f64> =
        serde_json::from_str(&std::fs::read_to_string(golden.join("metric_expected.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(parse_metrics(&stdout) == expected, "metric grammar golden mismatch")?;
    Ok(format!(
        "sentinel unchanged after 50 scripts, timeout at {:.2}s for a 2s limit, golden ok",
        elapsed.as_secs_f64()
    ))
}

fn c11_lama() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = binary_dataset(dir.path(), 21);
    let (gw, _) = scripted(lama_exchanges());
    let mut s = start_session(
        "Use LightAutoML to predict target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), 2),
    )
    .map_err(|e| e.to_string())?;
    let r = s.run_turn().map_err(|e| e.to_string())?;
    ensure(r.route == Some(ActiveRoute::Automl), format!("route {:?}", r.route))?;
    ensure(
        r.verdict == Some(VerdictStatus::Valid),
        format!("verdict {:?}", r.verdict),
    )?;
    let record = s.state().artifacts.last().ok_or("no artifact")?.clone();
    let baseline = naive_auc_oracle(&validation_targets(&record.run_dir, "target"));
    let auc = *r.metrics.get("auc").ok_or("no auc")?;
    ensure(auc >= baseline, format!("auc {auc} < baseline {baseline}"))?;
    let out = dir.path().join("rt.csv");
    let pkg = r.inference_package.ok_or("no package")?;
    let run = run_package(&pkg, &record.run_dir.join("val_features.csv"), &out);
    ensure(run.status.success(), String::from_utf8_lossy(&run.stderr).to_string())?;
    let same = std::fs::read(&out).ok() == std::fs::read(record.run_dir.join("val_predictions.csv")).ok();
    ensure(same, "round-trip predictions differ")?;
    Ok(format!(
        "auc {auc:.4} >= baseline {baseline:.4}, round-trip bit-identical"
    ))
}

struct FlakyRunner;

impl CellRunner for FlakyRunner {
    fn run_cell(&self, bundle: &TaskBundle, tool: &str, _seed: u64) -> Result<f64, String> {
        if bundle.name == "b" && tool == "y" {
            Err("engine crashed".into())
        } else {
            Ok(0.75)
        }
    }
}

fn c12_bench() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = |name: &str| TaskBundle {
        name: name.into(),
        train_path: dir.path().join("train.csv"),
        test_path: None,
        sample_submission_path: None,
        description: String::new(),
        metric_name: "auc".into(),
    };
    let results = ResultsFile::new(dir.path().join("benchmark_results.csv"));
    let tools = vec!["x".to_string(), "y".to_string()];
    run_benchmark(&[bundle("a"), bundle("b")], &tools, 1, &FlakyRunner, &results, 2).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(results.path()).map_err(|e| e.to_string())?;
    ensure(text.lines().next() == Some(CSV_COLUMNS.join(",").as_str()), "header")?;
    let rows = read_rows(results.path()).map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, format!("{} rows", rows.len()))?;
    for r in &rows {
        r.check()?;
    }
    let rendered = summarize(&rows, None).render();
    ensure(rendered.contains("| b | 0.750 | - |"), rendered.clone())?;
    Ok("4 schema-valid rows, failed cell rendered as -".into())
}

fn main() {
    type Named = (&'static str, fn() -> Check);
    let checks: [Named; 12] = [
        ("normalize_score matches the formula", c1_normalization),
        ("summarize averages the 8-dataset fixture", c2_average),
        ("end-to-end CODEGEN build turn", c3_end_to_end),
        ("self-repair reaches VALID at generation 1", c4_self_repair),
        ("all-broken fixture exhausts the fix budget", c5_budget),
        ("router fixture and token normalizer", c6_router),
        ("AutoML config extraction and pairing", c7_config),
        ("split invariants", c8_split),
        ("protected-region mutants", c9_protected),
        ("sandbox isolation, timeout and metric grammar", c10_sandbox),
        ("LAMA route with stub engine and inference round-trip", c11_lama),
        ("benchmark rows and failed-cell rendering", c12_bench),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
