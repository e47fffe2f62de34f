#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::ffi::CString;

use common::*;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};
use serde_json::json;

/// Runs `code` with the module importable as `lads` and `vars` as globals.
fn run_python(code: &str, vars: &[(&str, String)]) {
    Python::attach(|py| {
        let m = PyModule::new(py, "lads").unwrap();
        lads::register(&m).unwrap();
        py.import("sys")
            .unwrap()
            .getattr("modules")
            .unwrap()
            .set_item("lads", &m)
            .unwrap();
        let globals = PyDict::new(py);
        for (k, v) in vars {
            globals.set_item(k, v).unwrap();
        }
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python assertions failed");
        }
    });
}

#[test]
fn scoring_functions_match_direct_formulas() {
    run_python(
        r#"
import lads, math
assert lads.normalize_score(0.25, "rmse") == 1 / (1 + 0.25)
assert lads.normalize_score(0.0, "logloss") == 1.0
assert lads.normalize_score(0.78, "auc") == 0.78
try:
    lads.normalize_score(-1.0, "rmse")
    raise AssertionError("negative loss accepted")
except lads.LadsError:
    pass
try:
    lads.normalize_score(0.5, "bleu")
    raise AssertionError("unknown metric accepted")
except ValueError:
    pass

scores = [0.745, 0.798, 0.886, 0.774, 0.836, 0.883, 0.905, 0.886]
rows = [(f"d{i}", "agent", "auc", s) for i, s in enumerate(scores)] + [("d9", "agent", "auc", None)]
(tool, mean, n), = lads.tool_averages(rows)
assert tool == "agent" and n == 8
assert abs(mean - sum(scores) / len(scores)) < 1e-12
md = lads.summarize(rows)
assert "| d9 | - |" in md, md
"#,
        &[],
    );
}

#[test]
fn split_and_protected_regions() {
    run_python(
        r#"
import lads
train, val = lads.split(101, seed=7)
assert len(train) == 80 and len(val) == 21
assert sorted(train + val) == list(range(101))
assert lads.split(101, seed=7) == (train, val)

sk = lads.generic_skeleton()
kinds = {k for k, _ in lads.skeleton_regions(sk)}
assert {"frozen", "user"} <= kinds, kinds
assert lads.check_protected(sk, sk) is None
lines = sk.splitlines(keepends=True)
frozen_begin = next(i for i, l in enumerate(lines) if "BEGIN" in l and "FROZEN" in l.upper())
tampered = "".join(lines[:frozen_begin + 1] + lines[frozen_begin + 2:])
msg = lads.check_protected(sk, tampered)
assert msg is not None and "protected region" in msg, msg
"#,
        &[],
    );
}

#[test]
fn scripted_session_builds_a_validated_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path(), 8);
    let fixture = json!({"exchanges": [
        {"template_id": "dispatch", "response": "BUILD"},
        {"template_id": "automl_router", "response": "NO"},
        {"template_id": "problem_reflection", "response": REFLECTION},
        {"template_id": "plan", "response": PLAN},
        {"template_id": "generate_solution", "fill_skeleton": {"modeling": GOOD_MODEL}},
        {"template_id": "reporter", "response": REPORT},
    ]});
    run_python(
        r#"
import lads, os
shape = lads.load_table(data)
assert shape["n_rows"] == 200 and shape["columns"][-1] == "target", shape
s = lads.Session("predict target", data, fixture_json=fixture, workdir=work, max_fix=1)
assert os.path.isdir(s.workdir)
r = s.run_turn()
assert r["decision"] == "BUILD" and r["verdict"] == "VALID", r
assert 0.5 <= r["metrics"]["auc"] <= 1.0
steps = [e["step_name"] for e in s.events()]
assert [e["seq"] for e in s.events()] == list(range(len(steps)))
state = s.state()
assert state["status"] == "DONE" and len(state["artifacts"]) == 1
try:
    lads.Session("   ", data, fixture_json=fixture, workdir=work)
    raise AssertionError("empty query accepted")
except lads.LadsError:
    pass
"#,
        &[
            ("data", data.to_string_lossy().into_owned()),
            ("fixture", fixture.to_string()),
            ("work", dir.path().join("work").to_string_lossy().into_owned()),
        ],
    );
}
