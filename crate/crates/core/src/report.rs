//! Step events with plain-language summaries, the final Markdown report and
//! the standalone inference package.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{PipelineArtifact, RouteKind, MODEL_FILE, SOLUTION_FILE};
use crate::gateway::{bind, repair_prompt, Gateway, LlmError};

pub const PREDICT_SCRIPT: &str = include_str!("../assets/inference/predict.py");
pub const PREDICT_FILE: &str = "predict.py";
pub const CONTRACT_FILE: &str = "input_contract.json";
/// Appended to every report: scores come from the internal split.
pub const VALIDATION_NOTE: &str =
    "> Scores are measured on an internal 80/20 validation split of the training data, not on a hidden test set.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("report is missing sections: {}", .0.iter().map(|s| s.title()).collect::<Vec<_>>().join(", "))]
    MissingSections(Vec<ReportSection>),
    #[error("the pipeline run did not save a model artifact")]
    NoModelArtifact,
    #[error("the pipeline is not validated; only a VALID pipeline can be exported")]
    NotValidated,
    #[error("event log: {0}")]
    EventLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Receives pipeline steps as they happen.
pub trait StepSink {
    fn emit(&self, step_name: &str, technical_detail: &str);
}

impl StepSink for () {
    fn emit(&self, _step_name: &str, _technical_detail: &str) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub session_id: String,
    /// Position in the session's log, starting at 0.
    pub seq: u64,
    pub step_name: String,
    pub technical_detail: String,
    pub plain_summary: Option<String>,
    pub timestamp: String,
}

/// How plain-language summaries are produced.
#[derive(Clone, Default)]
pub enum Summarizer {
    /// Fixed sentences per step name; no provider calls.
    #[default]
    Template,
    /// One gateway call per step, falling back to "Completed step: <name>".
    Llm(Arc<Gateway>),
    Off,
}

impl fmt::Debug for Summarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Template => "Template",
            Self::Llm(_) => "Llm",
            Self::Off => "Off",
        })
    }
}

pub fn fallback_summary(step_name: &str) -> String {
    format!("Completed step: {step_name}")
}

/// Offline summary for a step.
pub fn template_summary(step_name: &str, technical_detail: &str) -> String {
    let base = step_name.split(':').next().unwrap_or(step_name);
    let text = match base {
        "split" => "The data was divided into two parts: 80% for learning, 20% for checking how well the model works.",
        "load_dataset" => "The dataset was loaded and its columns were checked.",
        "profile" => "The columns were scanned to see what kind of information each one holds.",
        "dispatch" => "The assistant decided how to handle your message.",
        "route" => "The assistant chose between writing its own code and using a ready-made automatic tool.",
        "reflect" => "The task was restated in plain terms: what to predict and how success is measured.",
        "clarify" => "Some details of the task were unclear, so the assistant asked a question.",
        "plan" => "A step-by-step plan for building the model was written.",
        "configure" => "The settings for the automatic tool were chosen.",
        "params" => "A time limit and options for the automatic tool were set.",
        "assemble_skeleton" => "A fixed template was prepared so the generated code follows the same safe structure.",
        "generate" => "A first version of the code was written.",
        "execute" => "The code was run in an isolated environment.",
        "validate" if technical_detail.contains("VALID (") || technical_detail.contains(": VALID") => {
            "The results were checked and passed all checks."
        }
        "validate" => "The results were checked and a problem was found.",
        "improve" => "The code was corrected based on the problem that was found.",
        "report" => "A readable report of the work was written.",
        "export" => "The trained model was packaged so it can make predictions on new data.",
        "interact" => "The assistant answered your question.",
        "end" => "The conversation was closed.",
        _ => return fallback_summary(step_name),
    };
    text.to_string()
}

/// Plain summary for one step; never fails.
pub fn summarize_step(summarizer: &Summarizer, step_name: &str, technical_detail: &str) -> Option<String> {
    match summarizer {
        Summarizer::Off => None,
        Summarizer::Template => Some(template_summary(step_name, technical_detail)),
        Summarizer::Llm(gateway) => {
            let result = gateway
                .render(
                    "summarize_step",
                    &bind([("step_name", step_name), ("technical_detail", technical_detail)]),
                )
                .and_then(|prompt| gateway.complete(gateway.profile(), &prompt));
            Some(match result {
                Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
                Ok(_) => fallback_summary(step_name),
                Err(e) => {
                    tracing::warn!(step = step_name, error = %e, "step summary failed, using fallback");
                    fallback_summary(step_name)
                }
            })
        }
    }
}

#[derive(Debug, Default)]
struct LogState {
    events: Vec<StepEvent>,
    file: Option<File>,
}

/// Append-only, totally ordered event log of one session.
#[derive(Debug)]
pub struct EventLog {
    session_id: String,
    path: Option<PathBuf>,
    summarizer: Summarizer,
    state: Mutex<LogState>,
    changed: Condvar,
}

impl EventLog {
    pub fn in_memory(session_id: impl Into<String>, summarizer: Summarizer) -> Self {
        Self {
            session_id: session_id.into(),
            path: None,
            summarizer,
            state: Mutex::new(LogState::default()),
            changed: Condvar::new(),
        }
    }

    /// A log persisted as JSON lines; existing records are loaded first.
    pub fn open(session_id: impl Into<String>, path: &Path, summarizer: Summarizer) -> Result<Self, ReportError> {
        let session_id = session_id.into();
        let mut events = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: StepEvent = serde_json::from_str(&line)
                    .map_err(|e| ReportError::EventLog(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if event.seq != events.len() as u64 {
                    return Err(ReportError::EventLog(format!(
                        "{}: sequence gap at line {}",
                        path.display(),
                        i + 1
                    )));
                }
                events.push(event);
            }
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            session_id,
            path: Some(path.to_path_buf()),
            summarizer,
            state: Mutex::new(LogState {
                events,
                file: Some(file),
            }),
            changed: Condvar::new(),
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Summarizes, numbers, persists and publishes one step.
    pub fn emit_step(&self, step_name: &str, technical_detail: &str) -> StepEvent {
        let step_name = if step_name.trim().is_empty() {
            "step"
        } else {
            step_name.trim()
        };
        let detail = if technical_detail.trim().is_empty() {
            step_name.to_string()
        } else {
            technical_detail.to_string()
        };
        let plain_summary = summarize_step(&self.summarizer, step_name, &detail);
        let mut state = self.state.lock().unwrap();
        let event = StepEvent {
            session_id: self.session_id.clone(),
            seq: state.events.len() as u64,
            step_name: step_name.to_string(),
            technical_detail: detail,
            plain_summary,
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
        };
        if let Some(file) = state.file.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::error!(error = %e, "failed to persist step event");
            }
        }
        tracing::info!(session = %self.session_id, seq = event.seq, step = %event.step_name, "{}", event.technical_detail);
        state.events.push(event.clone());
        drop(state);
        self.changed.notify_all();
        event
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<StepEvent> {
        self.state.lock().unwrap().events.clone()
    }

    /// Events with `seq >= from`.
    pub fn since(&self, from: u64) -> Vec<StepEvent> {
        let state = self.state.lock().unwrap();
        state.events.iter().skip(from as usize).cloned().collect()
    }

    /// Like [`Self::since`], blocking up to `timeout` while nothing new exists.
    pub fn wait_since(&self, from: u64, timeout: Duration) -> Vec<StepEvent> {
        let state = self.state.lock().unwrap();
        let (state, _) = self
            .changed
            .wait_timeout_while(state, timeout, |s| s.events.len() as u64 <= from)
            .unwrap();
        state.events.iter().skip(from as usize).cloned().collect()
    }
}

impl StepSink for EventLog {
    fn emit(&self, step_name: &str, technical_detail: &str) {
        self.emit_step(step_name, technical_detail);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReportSection {
    Overview,
    DataPreprocessing,
    PipelineSummary,
    CodeHighlights,
    Metrics,
    Takeaways,
}

impl ReportSection {
    pub const ALL: [ReportSection; 6] = [
        Self::Overview,
        Self::DataPreprocessing,
        Self::PipelineSummary,
        Self::CodeHighlights,
        Self::Metrics,
        Self::Takeaways,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Self::Overview => "Overview",
            Self::DataPreprocessing => "Data Preprocessing",
            Self::PipelineSummary => "Pipeline Summary",
            Self::CodeHighlights => "Code Highlights",
            Self::Metrics => "Metrics",
            Self::Takeaways => "Takeaways",
        }
    }
}

/// Sections whose title opens a heading-like line: `#` headings, bold lines
/// or numbered items.
pub fn detect_sections(markdown: &str) -> BTreeSet<ReportSection> {
    let mut found = BTreeSet::new();
    for line in markdown.lines() {
        let t = line.trim();
        let heading = t.starts_with('#') || t.starts_with("**") || t.starts_with(|c: char| c.is_ascii_digit());
        if !heading {
            continue;
        }
        let stripped = t
            .trim_start_matches(|c: char| {
                matches!(c, '#' | '*' | '_' | '.' | ')') || c.is_ascii_digit() || c.is_whitespace()
            })
            .to_ascii_lowercase();
        for s in ReportSection::ALL {
            let title = s.title().to_ascii_lowercase();
            if let Some(rest) = stripped.strip_prefix(&title) {
                if rest.is_empty() || rest.starts_with([':', '*', '_', ' ', '#']) {
                    found.insert(s);
                }
            }
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub markdown: String,
    pub sections_present: BTreeSet<ReportSection>,
}

impl FinalReport {
    pub fn is_complete(&self) -> bool {
        self.sections_present.len() == ReportSection::ALL.len()
    }
}

/// Shortest decimal form with at most six places.
pub fn format_metric(value: f64) -> String {
    let s = format!("{value:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn metrics_text(metrics: &BTreeMap<String, f64>) -> String {
    metrics
        .iter()
        .map(|(k, v)| format!("{k} = {}", format_metric(*v)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn route_text(pipeline: &PipelineArtifact) -> String {
    match &pipeline.route {
        RouteKind::Codegen => "LLM-generated pipeline".to_string(),
        RouteKind::Automl { engine_id } => format!("AutoML engine `{engine_id}`"),
    }
}

fn pipeline_text(pipeline: &PipelineArtifact, plan: &str) -> String {
    let mut out = format!(
        "Route: {}\nTarget: {}\nMetric: {}\nNaive baseline: {}\nGenerations executed: {}\nFinal verdict: {}",
        route_text(pipeline),
        pipeline.spec.target,
        pipeline.spec.metric,
        format_metric(pipeline.baseline),
        pipeline.executions(),
        pipeline.verdict().status.as_str(),
    );
    if !plan.trim().is_empty() {
        out.push_str("\n\nPlan:\n");
        out.push_str(plan.trim());
    }
    out
}

/// Adds the metric values and a code block when the text lacks them, plus
/// the validation note.
fn finish_markdown(mut markdown: String, pipeline: &PipelineArtifact) -> String {
    let metrics = pipeline.metrics();
    let missing_value = metrics.values().any(|v| !markdown.contains(&format_metric(*v)));
    if missing_value && !metrics.is_empty() {
        markdown.push_str(&format!("\n\n**Measured:** {}\n", metrics_text(metrics)));
    }
    if !markdown.contains("```") {
        markdown.push_str(&format!("\n\n```python\n{}\n```\n", code_excerpt(pipeline)));
    }
    if !markdown.contains(VALIDATION_NOTE) {
        markdown.push_str("\n\n");
        markdown.push_str(VALIDATION_NOTE);
        markdown.push('\n');
    }
    markdown
}

/// The editable parts of the final code.
pub fn code_excerpt(pipeline: &PipelineArtifact) -> String {
    let regions = pipeline.skeleton.user_regions();
    let parsed = crate::codegen::Skeleton::parse(pipeline.code()).ok();
    let bodies: Vec<String> = match &parsed {
        Some(s) if !regions.is_empty() => regions
            .iter()
            .filter_map(|r| s.region_body(r))
            .map(|b| b.trim_end().to_string())
            .collect(),
        _ => Vec::new(),
    };
    if bodies.is_empty() {
        pipeline.code().lines().take(40).collect::<Vec<_>>().join("\n")
    } else {
        bodies.join("\n\n")
    }
}

/// Renders the reporter prompt and checks the six sections, with one repair.
pub fn compile_report(gateway: &Gateway, pipeline: &PipelineArtifact, plan: &str) -> Result<FinalReport, ReportError> {
    let metrics = metrics_text(pipeline.metrics());
    let prompt = gateway.render(
        "reporter",
        &bind([
            ("pipeline", pipeline_text(pipeline, plan)),
            ("code", pipeline.code().to_string()),
            (
                "metrics",
                if metrics.is_empty() {
                    "none".to_string()
                } else {
                    metrics
                },
            ),
        ]),
    )?;
    let check = |text: &str| -> Result<FinalReport, Vec<ReportSection>> {
        let present = detect_sections(text);
        let missing: Vec<ReportSection> = ReportSection::ALL
            .into_iter()
            .filter(|s| !present.contains(s))
            .collect();
        if missing.is_empty() {
            Ok(FinalReport {
                markdown: finish_markdown(text.trim().to_string(), pipeline),
                sections_present: present,
            })
        } else {
            Err(missing)
        }
    };
    let first = gateway.complete(gateway.profile(), &prompt)?;
    let missing = match check(&first) {
        Ok(r) => return Ok(r),
        Err(m) => m,
    };
    let names: Vec<&str> = missing.iter().map(|s| s.title()).collect();
    tracing::debug!(missing = ?names, "report incomplete, issuing repair prompt");
    let repair = repair_prompt(
        &prompt,
        &format!(
            "The report must contain all six sections as headings: {}. Missing: {}.",
            ReportSection::ALL.map(|s| s.title()).join(", "),
            names.join(", ")
        ),
    );
    let second = gateway.complete(gateway.profile(), &repair)?;
    check(&second).map_err(ReportError::MissingSections)
}

/// A deterministic report built without the provider.
pub fn fallback_report(pipeline: &PipelineArtifact, plan: &str) -> FinalReport {
    let verdict = pipeline.verdict();
    let metrics = metrics_text(pipeline.metrics());
    let metrics = if metrics.is_empty() {
        "no metric was reported".to_string()
    } else {
        metrics
    };
    let steps: String = if plan.trim().is_empty() {
        "- Train on the learning part, score on the checking part, write predictions.\n".to_string()
    } else {
        plan.trim().lines().map(|l| format!("{l}\n")).collect()
    };
    let markdown = format!(
        "# Model report\n\n\
         ## 1. Overview\n\n\
         - Goal: predict `{target}` and measure quality with **{metric}**.\n\
         - Approach: {route}.\n\n\
         ## 2. Data Preprocessing\n\n\
         - The preprocessing steps are the ones in the code below; the data was split 80/20 with a fixed seed.\n\n\
         ## 3. Pipeline Summary\n\n\
         {steps}\n\
         ## 4. Code Highlights\n\n\
         ```python\n{code}\n```\n\n\
         ## 5. Metrics\n\n\
         - {metrics} (naive baseline: {baseline}).\n\n\
         ## 6. Takeaways\n\n\
         - Final check: {status}. {details}\n",
        target = pipeline.spec.target,
        metric = pipeline.spec.metric,
        route = route_text(pipeline),
        code = code_excerpt(pipeline),
        baseline = format_metric(pipeline.baseline),
        status = verdict.status.as_str(),
        details = verdict.details,
    );
    let markdown = finish_markdown(markdown, pipeline);
    FinalReport {
        sections_present: detect_sections(&markdown),
        markdown,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputContract {
    pub required_columns: Vec<String>,
    pub pipeline: String,
    pub model: String,
    pub target: String,
    pub id_column: Option<String>,
    pub prediction_file_header: Vec<String>,
}

impl InputContract {
    pub fn describe(&self) -> String {
        format!(
            "CSV with a header containing the columns: {}. Extra columns are ignored; `{}` is dropped if present. \
             Output: CSV with header {}.",
            self.required_columns.join(", "),
            self.target,
            self.prediction_file_header.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferencePackage {
    pub dir: PathBuf,
    pub script: String,
    pub model_artifact_refs: Vec<PathBuf>,
    pub input_contract: String,
    pub contract: InputContract,
}

impl InferencePackage {
    pub fn script_path(&self) -> PathBuf {
        self.dir.join(PREDICT_FILE)
    }
}

fn csv_header(path: &Path) -> Result<Vec<String>, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut record = csv::StringRecord::new();
    reader
        .read_record(&mut record)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(record.iter().map(str::to_string).collect())
}

/// Copies the pipeline code and model next to a standalone prediction script.
pub fn export_inference(pipeline: &PipelineArtifact, dest: &Path) -> Result<InferencePackage, ReportError> {
    let model = pipeline.model_path().ok_or(ReportError::NoModelArtifact)?;
    if !pipeline.validated {
        return Err(ReportError::NotValidated);
    }
    let features = pipeline
        .val_features_path()
        .ok_or_else(|| std::io::Error::other("the run did not write its validation features"))?;
    let required_columns = csv_header(&features)?;
    fs::create_dir_all(dest)?;
    fs::write(dest.join(SOLUTION_FILE), pipeline.code())?;
    fs::copy(&model, dest.join(MODEL_FILE))?;
    fs::write(dest.join(PREDICT_FILE), PREDICT_SCRIPT)?;
    let id_column = pipeline.spec.id_column.clone();
    let contract = InputContract {
        required_columns,
        pipeline: SOLUTION_FILE.to_string(),
        model: MODEL_FILE.to_string(),
        target: pipeline.spec.target.clone(),
        prediction_file_header: id_column
            .iter()
            .cloned()
            .chain(std::iter::once(pipeline.spec.target.clone()))
            .collect(),
        id_column,
    };
    fs::write(
        dest.join(CONTRACT_FILE),
        serde_json::to_string_pretty(&contract).expect("contract serializes"),
    )?;
    Ok(InferencePackage {
        dir: dest.to_path_buf(),
        script: PREDICT_SCRIPT.to_string(),
        model_artifact_refs: vec![PathBuf::from(MODEL_FILE)],
        input_contract: contract.describe(),
        contract,
    })
}
