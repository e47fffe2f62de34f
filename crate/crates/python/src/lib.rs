//! Python bindings: score normalization, benchmark summaries, the seeded
//! split, protected-region checks, table loading and full sessions.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lads_core::bench::{read_quartiles, read_rows};
use lads_core::codegen::{RegionKind, Skeleton, GENERIC_SKELETON};
use lads_core::dataset::{self, split_indices};
use lads_core::gateway::{ScriptedFixture, ScriptedProvider};
use lads_core::session::RouteChoice;
use lads_core::{
    normalize_score as normalize, start_session, summarize as summarize_rows, BenchmarkRow, Gateway, Metric,
    Session as CoreSession, SessionConfig,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

create_exception!(lads, LadsError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LadsError::new_err(e.to_string())
}

fn metric(name: &str) -> PyResult<Metric> {
    name.parse()
        .map_err(|e: lads_core::metrics::MetricError| PyValueError::new_err(e.to_string()))
}

/// Converts any serializable value into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// The normalized performance score of `score` under `metric`.
#[pyfunction]
fn normalize_score(score: f64, metric_name: &str) -> PyResult<f64> {
    normalize(score, metric(metric_name)?.direction()).map_err(err)
}

type RowTuple = (String, String, String, Option<f64>);

fn rows_from(rows: Vec<RowTuple>) -> PyResult<Vec<BenchmarkRow>> {
    rows.into_iter()
        .map(|(dataset, tool, metric_name, score)| match score {
            Some(s) => BenchmarkRow::scored(&dataset, &tool, metric(&metric_name)?, s).map_err(err),
            None => Ok(BenchmarkRow::failed(&dataset, &tool, &metric_name)),
        })
        .collect()
}

/// Markdown summary of `(dataset, tool, metric, raw_score or None)` rows.
#[pyfunction]
fn summarize(rows: Vec<RowTuple>) -> PyResult<String> {
    Ok(summarize_rows(&rows_from(rows)?, None).render())
}

/// Per-tool mean normalized score, `None` for tools without a scored cell.
#[pyfunction]
fn tool_averages(rows: Vec<RowTuple>) -> PyResult<Vec<(String, Option<f64>, usize)>> {
    let table = summarize_rows(&rows_from(rows)?, None);
    Ok(table.averages.iter().map(|a| (a.tool.clone(), a.mean, a.n)).collect())
}

/// Markdown summary of a results CSV, with optional quartile bands.
#[pyfunction]
#[pyo3(signature = (results, quartiles=None))]
fn summarize_file(results: PathBuf, quartiles: Option<PathBuf>) -> PyResult<String> {
    let rows = read_rows(&results).map_err(err)?;
    let q = quartiles.as_deref().map(read_quartiles).transpose().map_err(err)?;
    Ok(summarize_rows(&rows, q.as_ref()).render())
}

/// The seeded 8:2 partition of `0..n_rows` as `(train, val)` index lists.
#[pyfunction]
#[pyo3(signature = (n_rows, seed=42))]
fn split(n_rows: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = split_indices(n_rows, seed).map_err(err)?;
    Ok((s.train, s.val))
}

/// `None` when `code` keeps every protected region of `skeleton`, otherwise
/// the violation message.
#[pyfunction]
fn check_protected(skeleton: &str, code: &str) -> PyResult<Option<String>> {
    let parsed = Skeleton::parse(skeleton).map_err(err)?;
    Ok(parsed.check_protected(code).err().map(|v| v.to_string()))
}

/// `(kind, label)` for each marked region of `skeleton`.
#[pyfunction]
fn skeleton_regions(skeleton: &str) -> PyResult<Vec<(String, String)>> {
    let parsed = Skeleton::parse(skeleton).map_err(err)?;
    Ok(parsed
        .regions()
        .iter()
        .map(|r| {
            let kind = match r.kind {
                RegionKind::Frozen => "frozen",
                RegionKind::UserCode => "user",
            };
            (kind.to_string(), r.label.clone())
        })
        .collect())
}

/// The built-in pipeline scaffold, placeholders included.
#[pyfunction]
fn generic_skeleton() -> &'static str {
    GENERIC_SKELETON
}

/// Loads a table and returns its shape, header and source name.
#[pyfunction]
fn load_table(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    #[derive(Serialize)]
    struct Shape {
        file_name: String,
        n_rows: usize,
        n_cols: usize,
        columns: Vec<String>,
    }
    let t = py.detach(|| dataset::load(&path)).map_err(err)?;
    to_py(
        py,
        &Shape {
            file_name: t.file_name(),
            n_rows: t.n_rows,
            n_cols: t.n_cols,
            columns: t.header().to_vec(),
        },
    )
}

fn gateway(fixture: Option<&Path>, fixture_json: Option<&str>) -> PyResult<Arc<Gateway>> {
    let gw = match (fixture, fixture_json) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("pass either fixture or fixture_json")),
        (Some(path), None) => Gateway::new(Arc::new(ScriptedProvider::from_file(path).map_err(err)?), "scripted"),
        (None, Some(text)) => {
            let doc: ScriptedFixture = serde_json::from_str(text).map_err(err)?;
            Gateway::new(Arc::new(ScriptedProvider::from_fixture(doc).map_err(err)?), "scripted")
        }
        (None, None) => Gateway::from_env().map_err(err)?,
    };
    Ok(Arc::new(gw))
}

/// One analysis session. Without a fixture the provider comes from the
/// `LADS_LLM_*` environment variables.
#[pyclass(name = "Session")]
struct PySession {
    inner: Mutex<CoreSession>,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (query, dataset=None, *, fixture=None, fixture_json=None, workdir=None, max_fix=None, seed=None, test=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        py: Python<'_>,
        query: &str,
        dataset: Option<PathBuf>,
        fixture: Option<PathBuf>,
        fixture_json: Option<String>,
        workdir: Option<PathBuf>,
        max_fix: Option<u32>,
        seed: Option<u64>,
        test: Option<PathBuf>,
    ) -> PyResult<Self> {
        let gw = gateway(fixture.as_deref(), fixture_json.as_deref())?;
        let mut config = SessionConfig::default();
        if let Some(dir) = workdir {
            config.workdir_root = dir;
        }
        if let Some(n) = max_fix {
            config.max_fix_iterations = n;
        }
        if let Some(s) = seed {
            config.seed = s;
        }
        let session = py
            .detach(|| {
                let mut s = start_session(query, dataset.as_deref(), gw, config)?;
                if let Some(t) = &test {
                    s.bind_test_dataset(t)?;
                }
                Ok::<_, lads_core::SessionError>(s)
            })
            .map_err(err)?;
        Ok(Self {
            inner: Mutex::new(session),
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.lock().unwrap().id().to_string()
    }

    #[getter]
    fn workdir(&self) -> PathBuf {
        self.inner.lock().unwrap().state().workdir.clone()
    }

    /// Appends a follow-up user message.
    fn post(&self, text: &str) -> PyResult<()> {
        self.inner.lock().unwrap().post_user_message(text).map_err(err)
    }

    /// Dispatches the pending message and returns the turn result.
    fn run_turn<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let result = py.detach(|| self.inner.lock().unwrap().run_turn()).map_err(err)?;
        to_py(py, &result)
    }

    /// Runs a build on `route`: `router`, `codegen` or an engine id.
    #[pyo3(signature = (route="router"))]
    fn run_build<'py>(&self, py: Python<'py>, route: &str) -> PyResult<Bound<'py, PyAny>> {
        let choice = if route.eq_ignore_ascii_case("router") {
            RouteChoice::Router
        } else {
            RouteChoice::from_tool(route)
        };
        let result = py
            .detach(|| self.inner.lock().unwrap().run_build(choice))
            .map_err(err)?;
        to_py(py, &result)
    }

    /// Step events logged so far.
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let events = self.inner.lock().unwrap().events().events();
        to_py(py, &events)
    }

    /// Messages, artifacts, status and route.
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = self.inner.lock().unwrap();
        to_py(py, s.state())
    }
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LadsError", m.py().get_type::<LadsError>())?;
    m.add_function(wrap_pyfunction!(normalize_score, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(tool_averages, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_file, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(check_protected, m)?)?;
    m.add_function(wrap_pyfunction!(skeleton_regions, m)?)?;
    m.add_function(wrap_pyfunction!(generic_skeleton, m)?)?;
    m.add_function(wrap_pyfunction!(load_table, m)?)?;
    m.add_class::<PySession>()?;
    Ok(())
}

#[pymodule]
fn lads(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
