mod common;

use std::path::Path;

use lads_core::automl::{extract_config, route, AutoMLConfig, RouteToken, TaskType};
use lads_core::gateway::{match_token, normalize_token, ScriptedExchange};
use lads_core::{AutomlError, Metric};
use serde::Deserialize;

#[derive(Deserialize)]
struct RouterCase {
    query: String,
    response: String,
    expected: String,
}

fn router_cases() -> Vec<RouterCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/router_queries.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn router_fixture_scores_twelve_of_twelve() {
    let cases = router_cases();
    assert_eq!(cases.len(), 12);
    for wire in RouteToken::WIRE {
        assert_eq!(cases.iter().filter(|c| c.expected == wire).count(), 4);
    }
    let exchanges = cases
        .iter()
        .map(|c| ScriptedExchange::text("automl_router", c.response.clone()).containing(c.query.clone()))
        .collect();
    let (gw, _) = common::scripted(exchanges);
    let correct = cases
        .iter()
        .filter(|c| route(&gw, &c.query).map(|t| t.as_str() == c.expected).unwrap_or(false))
        .count();
    assert_eq!(correct, 12);
}

#[test]
fn router_repairs_once_then_fails() {
    let (gw, provider) = common::scripted(vec![ScriptedExchange::text("automl_router", "I am not sure.")]);
    let err = route(&gw, "build something").unwrap_err();
    assert!(matches!(err, AutomlError::Llm(_)), "{err:?}");
    assert_eq!(provider.calls(), 2);
}

#[test]
fn token_normalizer_handles_case_and_punctuation() {
    let cases = [
        ("LAMA", "LAMA"),
        ("lama", "LAMA"),
        ("  Fedot. ", "FEDOT"),
        ("**NO**", "NO"),
        ("'no'", "NO"),
        ("\"FEDOT\"\n", "FEDOT"),
        ("`Lama`", "LAMA"),
        ("No!", "NO"),
        ("(build)", "BUILD"),
        ("interact:", "INTERACT"),
        ("end...", "END"),
        ("\tBuild\r\n", "BUILD"),
    ];
    for (raw, want) in cases {
        assert_eq!(normalize_token(raw), want, "{raw:?}");
    }
    let allowed = ["INTERACT", "BUILD", "END"];
    assert_eq!(match_token("Decision: build.", &allowed).as_deref(), Some("BUILD"));
    assert_eq!(match_token("**END**", &allowed).as_deref(), Some("END"));
    assert_eq!(match_token("build or end", &allowed), None);
    assert_eq!(match_token("perhaps", &allowed), None);
    assert_eq!(match_token("", &allowed), None);
}

fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn config_extraction_yields_the_exact_pairs() {
    let (gw, _) = common::scripted(vec![
        ScriptedExchange::text(
            "automl_config",
            "```json\n{\"task_type\": \"reg\", \"target\": \"price\", \"task_metric\": \"r2-score\"}\n```",
        )
        .containing("house prices"),
        ScriptedExchange::text("automl_config", common::AUTOML_CONFIG).containing("churn"),
    ]);
    let reg = extract_config(
        &gw,
        "predict house prices",
        "houses.csv",
        &columns(&["id", "rooms", "price"]),
        "",
    )
    .unwrap();
    assert_eq!((reg.task_type.as_str(), reg.task_metric.name()), ("reg", "r2-score"));
    assert_eq!(reg.target, "price");
    let bin = extract_config(&gw, "predict churn", "churn.csv", &columns(&["id", "x1", "target"]), "").unwrap();
    assert_eq!((bin.task_type.as_str(), bin.task_metric.name()), ("binary", "auc"));
    assert_eq!(bin.task_type, TaskType::Binary);
    assert_eq!(bin.task_metric, Metric::Auc);
}

#[test]
fn pairing_violation_is_invalid_config() {
    let (gw, provider) = common::scripted(vec![ScriptedExchange::text(
        "automl_config",
        r#"{"task_type": "reg", "target": "price", "task_metric": "auc"}"#,
    )]);
    let err = extract_config(&gw, "predict price", "h.csv", &columns(&["price"]), "").unwrap_err();
    assert!(
        matches!(&err, AutomlError::InvalidConfig(r) if r.contains("pairing")),
        "{err:?}"
    );
    assert_eq!(provider.calls(), 2, "one repair attempt");
}

#[test]
fn pairing_is_repaired_when_the_second_answer_is_valid() {
    let (gw, _) = common::scripted(vec![
        ScriptedExchange::text(
            "automl_config",
            r#"{"task_type":"binary","target":"target","task_metric":"r2-score"}"#,
        )
        .times(1),
        ScriptedExchange::text("automl_config", common::AUTOML_CONFIG),
    ]);
    let cfg = extract_config(&gw, "predict target", "t.csv", &columns(&["target"]), "").unwrap();
    assert_eq!(cfg.task_metric, Metric::Auc);
}

#[test]
fn config_validation_rules() {
    let cols = columns(&["a", "y"]);
    let parse = |v: serde_json::Value| AutoMLConfig::from_json(v.as_object().unwrap(), &cols);
    assert!(parse(serde_json::json!({"task_type":"binary","target":"y","task_metric":"auc"})).is_ok());
    for bad in [
        serde_json::json!({"task_type":"binary","target":"y","task_metric":"r2-score"}),
        serde_json::json!({"task_type":"reg","target":"y","task_metric":"auc"}),
        serde_json::json!({"task_type":"multiclass","target":"y","task_metric":"auc"}),
        serde_json::json!({"task_type":"binary","target":"missing","task_metric":"auc"}),
        serde_json::json!({"task_type":"binary","target":"y","task_metric":"accuracy"}),
        serde_json::json!({"task_type":"binary","target":"y"}),
    ] {
        assert!(
            matches!(parse(bad.clone()), Err(AutomlError::InvalidConfig(_))),
            "{bad}"
        );
    }
}
