//! Normalized performance scores, benchmark runs and comparison tables.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Mutex};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Direction, Metric};

pub const RESULTS_FILE: &str = "benchmark_results.csv";
pub const CSV_COLUMNS: [&str; 6] = ["dataset", "tool", "metric_name", "raw_score", "nps", "timestamp"];
pub const QUARTILE_COLUMNS: [&str; 4] = ["dataset", "q25", "q50", "q75"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("negative score {0} for a smaller-is-better metric")]
    NegativeLossScore(f64),
    #[error("score is not a finite number: {0}")]
    NonFinite(f64),
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `1/(1+s)` when smaller is better, `s` otherwise.
pub fn normalize_score(s: f64, direction: Direction) -> Result<f64, BenchError> {
    if !s.is_finite() {
        return Err(BenchError::NonFinite(s));
    }
    match direction {
        Direction::SmallerBetter if s < 0.0 => Err(BenchError::NegativeLossScore(s)),
        Direction::SmallerBetter => Ok(1.0 / (1.0 + s)),
        Direction::LargerBetter => Ok(s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpsRecord {
    pub raw_score: f64,
    pub direction: Direction,
    pub nps: f64,
}

impl NpsRecord {
    pub fn new(raw_score: f64, direction: Direction) -> Result<Self, BenchError> {
        Ok(Self {
            raw_score,
            direction,
            nps: normalize_score(raw_score, direction)?,
        })
    }

    pub fn for_metric(metric: Metric, raw_score: f64) -> Result<Self, BenchError> {
        Self::new(raw_score, metric.direction())
    }
}

/// One competition-style task: training table, optional test table and
/// sample submission, description and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub name: String,
    pub train_path: PathBuf,
    pub test_path: Option<PathBuf>,
    pub sample_submission_path: Option<PathBuf>,
    pub description: String,
    pub metric_name: String,
}

#[derive(Debug, Deserialize)]
struct BundleManifest {
    name: Option<String>,
    metric: Option<String>,
    train: Option<String>,
    test: Option<String>,
    sample_submission: Option<String>,
    description: Option<String>,
}

impl TaskBundle {
    pub fn metric(&self) -> Result<Metric, BenchError> {
        self.metric_name
            .parse()
            .map_err(|_| BenchError::UnknownMetric(self.metric_name.clone()))
    }

    /// Reads a bundle directory: `train.csv`, optional `test.csv` and
    /// `sample_submission.csv`, a `description.md` or `description.txt`, and
    /// an optional `bundle.toml` overriding names and the metric. Without a
    /// manifest the metric is looked up in the description.
    pub fn load_dir(dir: &Path) -> Result<Self, BenchError> {
        let err = |message: String| BenchError::Bundle {
            path: dir.to_path_buf(),
            message,
        };
        let manifest: Option<BundleManifest> = match fs::read_to_string(dir.join("bundle.toml")) {
            Ok(text) => Some(toml::from_str(&text).map_err(|e| err(format!("bundle.toml: {e}")))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let m = manifest.as_ref();
        let pick = |given: Option<&String>, default: &str| dir.join(given.map(String::as_str).unwrap_or(default));
        let train_path = pick(m.and_then(|m| m.train.as_ref()), "train.csv");
        if !train_path.is_file() {
            return Err(err(format!("missing training table {}", train_path.display())));
        }
        let optional = |given: Option<&String>, default: &str| -> Result<Option<PathBuf>, BenchError> {
            let p = pick(given, default);
            match (p.is_file(), given.is_some()) {
                (true, _) => Ok(Some(p)),
                (false, true) => Err(err(format!("missing {}", p.display()))),
                (false, false) => Ok(None),
            }
        };
        let test_path = optional(m.and_then(|m| m.test.as_ref()), "test.csv")?;
        let sample_submission_path = optional(m.and_then(|m| m.sample_submission.as_ref()), "sample_submission.csv")?;
        let description = match m.and_then(|m| m.description.clone()) {
            Some(d) => d,
            None => ["description.md", "description.txt"]
                .iter()
                .map(|f| dir.join(f))
                .find(|p| p.is_file())
                .map(fs::read_to_string)
                .transpose()?
                .ok_or_else(|| err("missing description.md or description.txt".into()))?,
        };
        let metric_name = match m.and_then(|m| m.metric.clone()) {
            Some(name) => name,
            None => Metric::find_in_text(&description)
                .map(|m| m.name().to_string())
                .ok_or_else(|| err("no metric in bundle.toml or the description".into()))?,
        };
        metric_name
            .parse::<Metric>()
            .map_err(|_| err(format!("unknown metric `{metric_name}`")))?;
        let name = m
            .and_then(|m| m.name.clone())
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "bundle".into());
        Ok(Self {
            name,
            train_path,
            test_path,
            sample_submission_path,
            description,
            metric_name,
        })
    }
}

/// Every bundle directory under `root`, sorted by directory name.
pub fn load_bundles(root: &Path) -> Result<Vec<TaskBundle>, BenchError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| TaskBundle::load_dir(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub tool: String,
    pub metric_name: String,
    /// Empty for a failed cell.
    pub raw_score: Option<f64>,
    pub nps: Option<f64>,
    pub timestamp: String,
}

impl BenchmarkRow {
    pub fn scored(dataset: &str, tool: &str, metric: Metric, raw: f64) -> Result<Self, BenchError> {
        let record = NpsRecord::for_metric(metric, raw)?;
        Ok(Self {
            dataset: dataset.into(),
            tool: tool.into(),
            metric_name: metric.name().into(),
            raw_score: Some(raw),
            nps: Some(record.nps),
            timestamp: now(),
        })
    }

    pub fn failed(dataset: &str, tool: &str, metric_name: &str) -> Self {
        Self {
            dataset: dataset.into(),
            tool: tool.into(),
            metric_name: metric_name.into(),
            raw_score: None,
            nps: None,
            timestamp: now(),
        }
    }

    /// The row agrees with the metric registry and the normalization.
    pub fn check(&self) -> Result<(), String> {
        let metric: Metric = self
            .metric_name
            .parse()
            .map_err(|_| format!("unknown metric `{}`", self.metric_name))?;
        if self.dataset.is_empty() || self.tool.is_empty() {
            return Err("dataset and tool must be non-empty".into());
        }
        chrono::DateTime::parse_from_rfc3339(&self.timestamp).map_err(|e| format!("timestamp: {e}"))?;
        match (self.raw_score, self.nps) {
            (None, None) => Ok(()),
            (Some(raw), Some(nps)) => {
                let expected = normalize_score(raw, metric.direction()).map_err(|e| e.to_string())?;
                if (expected - nps).abs() <= 1e-12 {
                    Ok(())
                } else {
                    Err(format!("nps {nps} does not match {expected}"))
                }
            }
            _ => Err("raw_score and nps must be both set or both empty".into()),
        }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Append-only `benchmark_results.csv` with a single writer.
#[derive(Debug)]
pub struct ResultsFile {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ResultsFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rows: &[BenchmarkRow]) -> Result<(), BenchError> {
        let _guard = self.lock.lock().unwrap();
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let fresh = fs::metadata(&self.path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            check_header(&self.path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read(&self) -> Result<Vec<BenchmarkRow>, BenchError> {
        let _guard = self.lock.lock().unwrap();
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        read_rows(&self.path)
    }
}

fn check_header(path: &Path) -> Result<(), BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(BenchError::Schema {
            path: path.to_path_buf(),
            message: format!("expected columns {}, found {}", CSV_COLUMNS.join(","), header.join(",")),
        });
    }
    Ok(())
}

/// Reads and checks every row of a results file.
pub fn read_rows(path: &Path) -> Result<Vec<BenchmarkRow>, BenchError> {
    check_header(path)?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<BenchmarkRow>().enumerate() {
        let row = row?;
        row.check().map_err(|message| BenchError::Schema {
            path: path.to_path_buf(),
            message: format!("row {}: {message}", i + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// Reads an external `dataset,q25,q50,q75` file.
pub fn read_quartiles(path: &Path) -> Result<BTreeMap<String, Quartiles>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != QUARTILE_COLUMNS {
        return Err(BenchError::Schema {
            path: path.to_path_buf(),
            message: format!("expected columns {}", QUARTILE_COLUMNS.join(",")),
        });
    }
    #[derive(Deserialize)]
    struct Raw {
        dataset: String,
        q25: f64,
        q50: f64,
        q75: f64,
    }
    let mut out = BTreeMap::new();
    for raw in reader.deserialize::<Raw>() {
        let r = raw?;
        out.insert(
            r.dataset,
            Quartiles {
                q25: r.q25,
                q50: r.q50,
                q75: r.q75,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolAverage {
    pub tool: String,
    /// Mean NPS over scored cells; `None` when every cell failed.
    pub mean: Option<f64>,
    /// Scored cells.
    pub n: usize,
    /// Cells including failures.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub datasets: Vec<String>,
    pub tools: Vec<String>,
    /// `cells[d][t]`; `None` for a failed or missing cell.
    pub cells: Vec<Vec<Option<f64>>>,
    pub averages: Vec<ToolAverage>,
    pub quartiles: BTreeMap<String, Quartiles>,
}

fn cell_text(v: Option<f64>) -> String {
    match v {
        Some(x) if x < 0.0 => format!("{x:.3}*"),
        Some(x) => format!("{x:.3}"),
        None => "-".into(),
    }
}

impl SummaryTable {
    pub fn average(&self, tool: &str) -> Option<&ToolAverage> {
        self.averages.iter().find(|a| a.tool == tool)
    }

    pub fn cell(&self, dataset: &str, tool: &str) -> Option<f64> {
        let d = self.datasets.iter().position(|x| x == dataset)?;
        let t = self.tools.iter().position(|x| x == tool)?;
        self.cells[d][t]
    }

    /// A Markdown table: one row per dataset, one column per tool, quartile
    /// columns when known, and an average row.
    pub fn render(&self) -> String {
        let with_q = !self.quartiles.is_empty();
        let mut header = vec!["Dataset".to_string()];
        header.extend(self.tools.iter().cloned());
        if with_q {
            header.extend(["Q25", "Q50", "Q75"].map(String::from));
        }
        let mut lines = vec![
            format!("| {} |", header.join(" | ")),
            format!("|{}|", vec!["---"; header.len()].join("|")),
        ];
        let mut flagged = false;
        for (d, name) in self.datasets.iter().enumerate() {
            let mut cols = vec![name.clone()];
            for v in &self.cells[d] {
                flagged |= v.is_some_and(|x| x < 0.0);
                cols.push(cell_text(*v));
            }
            if with_q {
                match self.quartiles.get(name) {
                    Some(q) => cols.extend([q.q25, q.q50, q.q75].map(|x| format!("{x:.3}"))),
                    None => cols.extend(["-", "-", "-"].map(String::from)),
                }
            }
            lines.push(format!("| {} |", cols.join(" | ")));
        }
        let mut avg = vec!["Avg score".to_string()];
        for a in &self.averages {
            let mut text = cell_text(a.mean);
            if a.mean.is_some() && a.n < a.total {
                text.push_str(&format!(" (n={})", a.n));
            }
            avg.push(text);
        }
        if with_q {
            avg.extend(["", "", ""].map(String::from));
        }
        lines.push(format!("| {} |", avg.join(" | ")));
        let mut out = lines.join("\n");
        out.push('\n');
        if flagged {
            out.push_str("\n* negative score passed through unchanged\n");
        }
        out
    }
}

/// Per-tool mean NPS over datasets; failed cells are left out of the mean.
/// A repeated (dataset, tool) pair keeps its last row.
pub fn summarize(rows: &[BenchmarkRow], quartiles: Option<&BTreeMap<String, Quartiles>>) -> SummaryTable {
    let mut datasets: Vec<String> = Vec::new();
    let mut tools: Vec<String> = Vec::new();
    let mut latest: BTreeMap<(String, String), Option<f64>> = BTreeMap::new();
    for r in rows {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        if !tools.contains(&r.tool) {
            tools.push(r.tool.clone());
        }
        latest.insert((r.dataset.clone(), r.tool.clone()), r.nps);
    }
    let cells: Vec<Vec<Option<f64>>> = datasets
        .iter()
        .map(|d| {
            tools
                .iter()
                .map(|t| latest.get(&(d.clone(), t.clone())).copied().flatten())
                .collect()
        })
        .collect();
    let averages = tools
        .iter()
        .enumerate()
        .map(|(t, tool)| {
            let total = datasets
                .iter()
                .filter(|d| latest.contains_key(&((*d).clone(), tool.clone())))
                .count();
            let scored: Vec<f64> = cells.iter().filter_map(|row| row[t]).collect();
            ToolAverage {
                tool: tool.clone(),
                mean: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
                n: scored.len(),
                total,
            }
        })
        .collect();
    SummaryTable {
        datasets,
        tools,
        cells,
        averages,
        quartiles: quartiles.cloned().unwrap_or_default(),
    }
}

/// Runs one (bundle, tool) cell and returns the validation-fold score.
pub trait CellRunner: Sync {
    fn run_cell(&self, bundle: &TaskBundle, tool: &str, seed: u64) -> Result<f64, String>;
}

/// Runs every (bundle, tool) cell, appending rows to `results` in grid order
/// as they complete. Failed cells get empty scores.
pub fn run_benchmark(
    bundles: &[TaskBundle],
    tools: &[String],
    seed: u64,
    runner: &dyn CellRunner,
    results: &ResultsFile,
    workers: usize,
) -> Result<Vec<BenchmarkRow>, BenchError> {
    let cells: Vec<(usize, &TaskBundle, &str)> = bundles
        .iter()
        .flat_map(|b| tools.iter().map(move |t| (b, t.as_str())))
        .enumerate()
        .map(|(i, (b, t))| (i, b, t))
        .collect();
    for b in bundles {
        b.metric()?;
    }
    let queue = Mutex::new(cells.iter().copied().collect::<VecDeque<_>>());
    let (tx, rx) = mpsc::channel::<(usize, BenchmarkRow)>();
    let mut rows: Vec<BenchmarkRow> = Vec::with_capacity(cells.len());
    let mut append_error: Option<BenchError> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, cells.len().max(1)) {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let Some((i, bundle, tool)) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let metric = bundle.metric().expect("checked above");
                let row = match runner.run_cell(bundle, tool, seed) {
                    Ok(raw) => BenchmarkRow::scored(&bundle.name, tool, metric, raw).unwrap_or_else(|e| {
                        tracing::warn!(dataset = %bundle.name, tool, error = %e, "score cannot be normalized");
                        BenchmarkRow::failed(&bundle.name, tool, metric.name())
                    }),
                    Err(reason) => {
                        tracing::warn!(dataset = %bundle.name, tool, %reason, "benchmark cell failed");
                        BenchmarkRow::failed(&bundle.name, tool, metric.name())
                    }
                };
                if tx.send((i, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending: BTreeMap<usize, BenchmarkRow> = BTreeMap::new();
        for (i, row) in rx {
            pending.insert(i, row);
            while let Some(row) = pending.remove(&rows.len()) {
                if append_error.is_none() {
                    if let Err(e) = results.append(std::slice::from_ref(&row)) {
                        append_error = Some(e);
                    }
                }
                rows.push(row);
            }
        }
    });
    match append_error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// Tools named in rows, in first-seen order.
pub fn tools_of(rows: &[BenchmarkRow]) -> BTreeSet<String> {
    rows.iter().map(|r| r.tool.clone()).collect()
}
