//! Shared fixtures: seeded synthetic tables, scripted provider responses and
//! independent oracles.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use lads_core::gateway::{Gateway, RetryPolicy, ScriptedExchange, ScriptedProvider};
use lads_core::sandbox::{Isolation, Sandbox, SandboxConfig};
use lads_core::session::{SessionConfig, SummaryMode};
use lads_core::EngineRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BINARY_HEADER: [&str; 6] = ["id", "x1", "x2", "x3", "segment", "target"];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `n` rows: an id, three numeric features, one categorical feature and a
/// 0/1 target driven mostly by `x1`.
pub fn binary_rows(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x1 = normal(&mut rng);
            let x2 = normal(&mut rng);
            let x3 = normal(&mut rng);
            let segment = ["north", "south", "east"][rng.random_range(0..3)];
            let logit = 2.0 * x1 + 0.5 * x2 + 0.5 * normal(&mut rng);
            let target = u8::from(logit > 0.0);
            vec![
                (i + 1).to_string(),
                format!("{x1:.6}"),
                format!("{x2:.6}"),
                format!("{x3:.6}"),
                segment.to_string(),
                target.to_string(),
            ]
        })
        .collect()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
}

/// Writes the 200-row binary fixture and returns its path.
pub fn binary_dataset(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("train.csv");
    write_csv(&path, &BINARY_HEADER, &binary_rows(200, seed));
    path
}

pub const REFLECTION: &str = "\
1. Competition Overview: Predict whether a synthetic customer converts.
2. Files: train.csv holds the training rows, including the target column.
3. Problem Definition: Binary classification of the `target` column.
4. Data Information:
   - ID type: id
   - Numerical type: x1, x2, x3
   - Categorical type: segment
5. Target Variable: target
6. Evaluation Metrics: AUC, the area under the ROC curve.
7. Submission Format: a CSV file named submission.csv with the columns id and target.
8. Other Key Aspects: The classes are roughly balanced.
";

pub const PLAN: &str = "\
1. preprocessing: keep numeric features, drop the id column
2. model_fitting: fit a linear scoring model on standardized features
3. validation: score the hold-out split with AUC
4. submission: write submission.csv
";

pub const REPORT: &str = "\
# Conversion model

## 1. Overview
- We predict whether a customer converts.

## 2. Data Preprocessing
- Numeric columns were standardized.

## 3. Pipeline Summary
| Model | Parameters | Explanation |
|---|---|---|
| Linear score | correlation weights | simple and fast |

## 4. Code Highlights
```python
score = Z.values @ weights
```

## 5. Metrics
- AUC tells us how well the model ranks converters above non-converters.

## 6. Takeaways
- The model separates the classes well.
";

/// A working `modeling` region: correlation-weighted linear score.
pub const GOOD_MODEL: &str = r#"import numpy as np


def _numeric(X):
    return [c for c in X.columns if c != ID_COLUMN and X[c].dtype.kind in "if"]


def fit(X, y):
    columns = _numeric(X)
    frame = X[columns].astype(float)
    mean = frame.mean()
    std = frame.std().replace(0.0, 1.0)
    z = ((frame - mean) / std).fillna(0.0)
    positive = positive_label(y.tolist())
    t = np.array([1.0 if _label(v) == positive else 0.0 for v in y])
    weights = np.array([np.corrcoef(z[c].values, t)[0, 1] if z[c].std() > 0 else 0.0 for c in columns])
    return {"columns": columns, "mean": mean, "std": std, "weights": np.nan_to_num(weights)}


def predict(model, X):
    z = ((X[model["columns"]].astype(float) - model["mean"]) / model["std"]).fillna(0.0)
    score = z.values @ model["weights"]
    return 1.0 / (1.0 + np.exp(-score))
"#;

/// A `modeling` region that fails with a NameError.
pub const BROKEN_MODEL: &str = r#"def fit(X, y):
    return undefined_helper(X, y)


def predict(model, X):
    return [0.5] * len(X)
"#;

pub const AUTOML_CONFIG: &str = r#"{"task_type": "binary", "target": "target", "task_metric": "auc"}"#;
pub const AUTOML_PARAMS: &str = r#"{"time_budget": 30, "extra": {}}"#;

pub fn scripted(exchanges: Vec<ScriptedExchange>) -> (Arc<Gateway>, Arc<ScriptedProvider>) {
    let provider = Arc::new(ScriptedProvider::new(exchanges));
    let gateway = Gateway::new(provider.clone(), "scripted").with_retry(RetryPolicy {
        max_attempts: 2,
        base_delay: Duration::from_millis(1),
    });
    (Arc::new(gateway), provider)
}

/// Exchanges for a BUILD turn on the CODEGEN route with the given generation
/// and fix responses.
pub fn codegen_exchanges(generate: &str, fixes: &[&str]) -> Vec<ScriptedExchange> {
    let mut v = vec![
        ScriptedExchange::text("dispatch", "BUILD"),
        ScriptedExchange::text("automl_router", "NO"),
        ScriptedExchange::text("problem_reflection", REFLECTION),
        ScriptedExchange::text("plan", PLAN),
        ScriptedExchange::fill("generate_solution", &[("modeling", generate)]),
    ];
    for (i, fix) in fixes.iter().enumerate() {
        let e = ScriptedExchange::fill("fix_solution", &[("modeling", fix)]);
        v.push(if i + 1 < fixes.len() { e.times(1) } else { e });
    }
    v.push(ScriptedExchange::text("reporter", REPORT));
    v
}

pub fn lama_exchanges() -> Vec<ScriptedExchange> {
    vec![
        ScriptedExchange::text("dispatch", "BUILD"),
        ScriptedExchange::text("automl_router", "LAMA"),
        ScriptedExchange::text("problem_reflection", REFLECTION),
        ScriptedExchange::text("automl_config", AUTOML_CONFIG),
        ScriptedExchange::text("automl_params", AUTOML_PARAMS),
        ScriptedExchange::text("reporter", REPORT),
    ]
}

pub fn sandbox(timeout: Duration) -> Sandbox {
    Sandbox::new(SandboxConfig {
        timeout,
        isolation: Isolation::Confined,
        ..SandboxConfig::default()
    })
}

pub fn session_config(root: &Path, max_fix_iterations: u32) -> SessionConfig {
    SessionConfig {
        workdir_root: root.to_path_buf(),
        sandbox: sandbox(Duration::from_secs(120)),
        max_fix_iterations,
        seed: 42,
        summaries: SummaryMode::Template,
        registry: EngineRegistry::builtin(),
        route: Default::default(),
    }
}

/// `1/(1+s)` or `s`, written out directly.
pub fn nps_oracle(s: f64, smaller_is_better: bool) -> f64 {
    if smaller_is_better {
        1.0 / (1.0 + s)
    } else {
        s
    }
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn pairwise_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Validation labels of a split file staged next to the training table.
pub fn validation_targets(run_dir: &Path, target: &str) -> Vec<String> {
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("data/split.json")).unwrap()).unwrap();
    let mut reader = csv::Reader::from_path(run_dir.join("data/train.csv")).unwrap();
    let col = reader.headers().unwrap().iter().position(|h| h == target).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    split["val"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| rows[i.as_u64().unwrap() as usize][col].to_string())
        .collect()
}

/// Naive AUC baseline: every row gets the same score.
pub fn naive_auc_oracle(val_labels: &[String]) -> f64 {
    let labels: Vec<bool> = val_labels.iter().map(|l| l == "1").collect();
    pairwise_auc(&labels, &vec![0.5; labels.len()])
}

pub fn python() -> String {
    std::env::var("LADS_INTERPRETER").unwrap_or_else(|_| "python3".into())
}

/// Runs an exported package's predict.py outside the sandbox.
pub fn run_package(package: &Path, input: &Path, output: &Path) -> std::process::Output {
    std::process::Command::new(python())
        .arg(package.join("predict.py"))
        .arg(input)
        .arg(output)
        .output()
        .unwrap()
}
