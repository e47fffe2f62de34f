//! LLM-written pipelines: skeleton assembly, generation, validation and the
//! repair loop shared with the AutoML branch.

mod skeleton;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use skeleton::{begin_marker, end_marker, ProtectedViolation, Region, RegionKind, Skeleton, SkeletonError};

use crate::dataset::{DatasetError, Split, TableHandle};
use crate::gateway::{bind, repair_prompt, Gateway, LlmError};
use crate::metrics::{naive_baseline, Direction, Metric, MetricError};
use crate::reflection::TaskReflection;
use crate::report::StepSink;
use crate::sandbox::{ExecutionResult, Sandbox, SandboxError};

pub const GENERIC_SKELETON: &str = include_str!("../../assets/skeletons/generic.py");
pub const USER_MODELING_REGION: &str = include_str!("../../assets/skeletons/modeling.py");

pub const SOLUTION_FILE: &str = "solution.py";
pub const MODEL_FILE: &str = "model_artifact";
pub const VAL_FEATURES_FILE: &str = "val_features.csv";
pub const VAL_PREDICTIONS_FILE: &str = "val_predictions.csv";
pub const TRAIN_FILE: &str = "data/train.csv";
pub const SPLIT_FILE: &str = "data/split.json";
pub const TEST_FILE: &str = "data/test.csv";
pub const DEFAULT_SUBMISSION_FILE: &str = "submission.csv";
pub const DEFAULT_MAX_FIX_ITERATIONS: u32 = 5;
pub const DEFAULT_SEED: u64 = 42;

const FEEDBACK_CHARS: usize = 8000;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("reflection is unresolved: {0}")]
    UnresolvedReflection(String),
    #[error("no fenced code block in the `{template_id}` response")]
    NoCodeBlock { template_id: String },
    #[error("no VALID pipeline after {iterations} fix iterations")]
    LoopBudgetExhausted {
        iterations: u32,
        best: Box<PipelineArtifact>,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    Label,
    Probability,
    Value,
}

impl PredictionKind {
    pub fn for_metric(metric: Metric) -> Self {
        match metric {
            Metric::Accuracy | Metric::F1 => Self::Label,
            Metric::Auc | Metric::LogLoss => Self::Probability,
            _ => Self::Value,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Label => "label",
            Self::Probability => "probability",
            Self::Value => "value",
        }
    }
}

/// Everything the scaffold needs to know about the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub target: String,
    pub metric: Metric,
    pub id_column: Option<String>,
    pub submission_file: String,
    pub seed: u64,
}

fn submission_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)(?:named|called|file ?name)\s*[:`"'*]*\s*([A-Za-z0-9_-]+\.csv)"#).unwrap())
}

impl TaskSpec {
    pub fn from_reflection(reflection: &TaskReflection, table: &TableHandle) -> Result<Self, CodegenError> {
        let target = reflection
            .target_variable
            .clone()
            .filter(|t| table.column_index(t).is_some())
            .ok_or_else(|| CodegenError::UnresolvedReflection("target variable".into()))?;
        let metric = reflection
            .evaluation_metric
            .ok_or_else(|| CodegenError::UnresolvedReflection("evaluation metric".into()))?;
        let id_column = reflection
            .id_columns()
            .into_iter()
            .find(|c| *c != target && table.column_index(c).is_some())
            .map(str::to_string);
        let submission_file = reflection
            .submission_format
            .as_deref()
            .and_then(|s| submission_name_re().captures(s))
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| DEFAULT_SUBMISSION_FILE.to_string());
        Ok(Self {
            target,
            metric,
            id_column,
            submission_file,
            seed: DEFAULT_SEED,
        })
    }
}

/// Which modeling region the scaffold carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    /// `fit`/`predict` are a USER CODE region written by the model.
    Generic,
    /// A frozen engine region; only preprocessing stays editable.
    Engine { engine_id: String, region: String },
}

fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn py_opt(s: Option<&str>) -> String {
    s.map_or_else(|| "None".to_string(), py_str)
}

/// Python literal for a JSON value.
pub fn py_literal(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Null => "None".into(),
        Value::Bool(b) => if *b { "True" } else { "False" }.into(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => py_str(s),
        Value::Array(items) => format!("[{}]", items.iter().map(py_literal).collect::<Vec<_>>().join(", ")),
        Value::Object(map) => format!(
            "{{{}}}",
            map.iter()
                .map(|(k, v)| format!("{}: {}", py_str(k), py_literal(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

/// Fills the scaffold placeholders for `spec` and parses the result.
pub fn assemble_skeleton(spec: &TaskSpec, backend: &Backend, has_test: bool) -> Result<Skeleton, CodegenError> {
    let region = match backend {
        Backend::Generic => USER_MODELING_REGION.trim_end().to_string(),
        Backend::Engine { region, .. } => region.trim_end().to_string(),
    };
    let text = GENERIC_SKELETON
        .replace("@@SEED@@", &spec.seed.to_string())
        .replace("@@DATASET_PATH@@", &py_str(TRAIN_FILE))
        .replace("@@SPLIT_PATH@@", &py_str(SPLIT_FILE))
        .replace("@@TEST_PATH@@", &py_opt(has_test.then_some(TEST_FILE)))
        .replace("@@TARGET@@", &py_str(&spec.target))
        .replace("@@ID_COLUMN@@", &py_opt(spec.id_column.as_deref()))
        .replace("@@METRIC@@", &py_str(spec.metric.name()))
        .replace(
            "@@PREDICTION_KIND@@",
            &py_str(PredictionKind::for_metric(spec.metric).as_str()),
        )
        .replace("@@SUBMISSION_PATH@@", &py_str(&spec.submission_file))
        .replace("@@MODEL_REGION@@", &region);
    let skeleton = Skeleton::parse(&text)?;
    if let Backend::Engine { engine_id, .. } = backend {
        if !skeleton
            .regions()
            .iter()
            .any(|r| r.kind == RegionKind::Frozen && r.label == "engine")
        {
            return Err(CodegenError::Skeleton(SkeletonError::UnknownRegion(format!(
                "engine region of `{engine_id}`"
            ))));
        }
    }
    Ok(skeleton)
}

/// Table, optional test table and split staged into every run directory.
#[derive(Debug, Clone, Copy)]
pub struct Workspace<'a> {
    pub table: &'a TableHandle,
    pub test: Option<&'a TableHandle>,
    pub split: &'a Split,
}

impl Workspace<'_> {
    /// Writes `data/` under `dir` so scripts can use fixed relative paths.
    pub fn stage(&self, dir: &Path) -> Result<(), CodegenError> {
        fs::create_dir_all(dir.join("data"))?;
        self.table.write_csv(&dir.join(TRAIN_FILE))?;
        let split = serde_json::json!({"seed": self.split.seed, "train": self.split.train, "val": self.split.val});
        fs::write(
            dir.join(SPLIT_FILE),
            serde_json::to_vec(&split).expect("split serializes"),
        )?;
        if let Some(test) = self.test {
            test.write_csv(&dir.join(TEST_FILE))?;
        }
        Ok(())
    }

    pub fn labels(&self, target: &str) -> Result<(Vec<&str>, Vec<&str>), CodegenError> {
        let all = self.table.column_values(target)?;
        let pick = |idx: &[usize]| idx.iter().map(|i| all[*i]).collect::<Vec<_>>();
        Ok((pick(&self.split.train), pick(&self.split.val)))
    }

    /// Score of the naive predictor on the validation fold.
    pub fn baseline(&self, metric: Metric, target: &str) -> Result<f64, CodegenError> {
        let (train, val) = self.labels(target)?;
        Ok(naive_baseline(metric, &train, &val)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub code: String,
    pub generation: u32,
    pub parent: Option<u32>,
    pub origin_prompt_id: String,
}

impl CodeArtifact {
    pub fn root(code: String, origin_prompt_id: impl Into<String>) -> Self {
        Self {
            code,
            generation: 0,
            parent: None,
            origin_prompt_id: origin_prompt_id.into(),
        }
    }

    pub fn child(&self, code: String, origin_prompt_id: impl Into<String>) -> Self {
        Self {
            code,
            generation: self.generation + 1,
            parent: Some(self.generation),
            origin_prompt_id: origin_prompt_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Valid,
    ExecFailed,
    NoSubmission,
    NoMetric,
    BelowBaseline,
    ProtectedViolation,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Valid => "VALID",
            Self::ExecFailed => "EXEC_FAILED",
            Self::NoSubmission => "NO_SUBMISSION",
            Self::NoMetric => "NO_METRIC",
            Self::BelowBaseline => "BELOW_BASELINE",
            Self::ProtectedViolation => "PROTECTED_VIOLATION",
        }
    }

    /// Rank used to pick the best failed attempt.
    fn progress(self) -> u8 {
        match self {
            Self::Valid => 5,
            Self::BelowBaseline => 4,
            Self::ProtectedViolation => 3,
            Self::NoMetric => 2,
            Self::NoSubmission => 1,
            Self::ExecFailed => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub status: VerdictStatus,
    pub details: String,
    pub metric_value: Option<f64>,
}

impl ValidationVerdict {
    /// Execution message for the repair prompt; `None` when stderr says it all.
    pub fn repair_message(&self) -> Option<String> {
        match self.status {
            VerdictStatus::Valid => None,
            VerdictStatus::ExecFailed if !self.details.contains("time limit") => None,
            _ => Some(self.details.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSpec {
    pub submission_file: String,
    pub metric: Metric,
    pub baseline: f64,
}

pub fn validate(exec: &ExecutionResult, spec: &ValidationSpec) -> ValidationVerdict {
    let verdict = |status, details: String, metric_value| ValidationVerdict {
        status,
        details,
        metric_value,
    };
    if !exec.success() {
        let details = if exec.timed_out {
            format!(
                "execution exceeded the time limit and was stopped after {:.1} s",
                exec.duration.as_secs_f64()
            )
        } else {
            match exec.exit_code {
                Some(code) => format!("script exited with code {code}"),
                None => format!("script was killed by signal {}", exec.signal.unwrap_or_default()),
            }
        };
        return verdict(VerdictStatus::ExecFailed, details, None);
    }
    if !exec.files_created.iter().any(|p| p == Path::new(&spec.submission_file)) {
        return verdict(
            VerdictStatus::NoSubmission,
            format!(
                "the script finished but did not write the submission file `{}`",
                spec.submission_file
            ),
            None,
        );
    }
    let name = spec.metric.name();
    let Some(value) = exec.metrics.get(name).copied() else {
        return verdict(
            VerdictStatus::NoMetric,
            format!("the script finished but printed no `LADS_METRIC {name}=<value>` line"),
            None,
        );
    };
    if spec.metric.direction().worse(value, spec.baseline) {
        let relation = match spec.metric.direction() {
            Direction::LargerBetter => "lower",
            Direction::SmallerBetter => "higher",
        };
        return verdict(
            VerdictStatus::BelowBaseline,
            format!(
                "metric below baseline: {name}={value} is {relation} than the naive baseline {:.6}",
                spec.baseline
            ),
            Some(value),
        );
    }
    verdict(
        VerdictStatus::Valid,
        format!("{name}={value} (baseline {:.6})", spec.baseline),
        Some(value),
    )
}

/// First fenced block. A response that starts straight with scaffold code
/// (no opening fence) is taken up to its first fence.
pub fn extract_code_block(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?s)```[ \t]*[A-Za-z0-9_+.-]*[ \t]*\r?\n(.*?)```").unwrap());
    let text = text.replace("\r\n", "\n");
    let first_fence = text.find("```");
    let lead = &text[..first_fence.unwrap_or(text.len())];
    if lead.contains("### BEGIN ") {
        return Some(lead.trim_end().to_string() + "\n");
    }
    let c = re.captures(&text)?;
    let code = c[1].trim_end();
    (!code.trim().is_empty()).then(|| code.to_string() + "\n")
}

fn complete_code(gateway: &Gateway, prompt: &crate::gateway::Prompt) -> Result<String, CodegenError> {
    let raw = gateway.complete(gateway.profile(), prompt)?;
    if let Some(code) = extract_code_block(&raw) {
        return Ok(code);
    }
    let repair = repair_prompt(
        prompt,
        "Reply with the complete script inside a single ```python fenced code block.",
    );
    let raw = gateway.complete(gateway.profile(), &repair)?;
    extract_code_block(&raw).ok_or_else(|| CodegenError::NoCodeBlock {
        template_id: prompt.template_id.clone(),
    })
}

/// Asks the model to complete `skeleton`; returns the generation-0 artifact.
pub fn generate(
    gateway: &Gateway,
    template_id: &str,
    skeleton: &Skeleton,
    guidance: &str,
) -> Result<CodeArtifact, CodegenError> {
    let prompt = gateway.render(
        template_id,
        &bind([
            ("reflection", guidance),
            ("dataset_path", TRAIN_FILE),
            ("skeleton", skeleton.body().trim_end()),
        ]),
    )?;
    Ok(CodeArtifact::root(complete_code(gateway, &prompt)?, template_id))
}

fn tail(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

/// Asks for a fixed version of `artifact` given its execution outcome.
pub fn improve(
    gateway: &Gateway,
    artifact: &CodeArtifact,
    exec: &ExecutionResult,
    verdict: &ValidationVerdict,
    guidance: &str,
) -> Result<CodeArtifact, CodegenError> {
    let mut bindings = bind([
        ("reflection", guidance),
        ("dataset_path", TRAIN_FILE),
        ("code_recent_solution", artifact.code.trim_end()),
        ("stdout", tail(exec.stdout.trim_end(), FEEDBACK_CHARS)),
        ("stderr", tail(exec.failure_message().trim_end(), FEEDBACK_CHARS)),
    ]);
    if let Some(msg) = verdict.repair_message() {
        bindings.insert("msg".into(), msg);
    }
    let prompt = gateway.render("fix_solution", &bindings)?;
    Ok(artifact.child(complete_code(gateway, &prompt)?, "fix_solution"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouteKind {
    Codegen,
    Automl { engine_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attempt {
    pub artifact: CodeArtifact,
    pub verdict: ValidationVerdict,
    pub run_dir: PathBuf,
    pub execution: ExecutionResult,
}

/// Outcome of a build: every attempt plus the one that counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineArtifact {
    pub route: RouteKind,
    pub spec: TaskSpec,
    pub skeleton: Skeleton,
    pub baseline: f64,
    pub attempts: Vec<Attempt>,
    pub best: usize,
    /// False when the loop ran out of budget; `best` is then best-so-far.
    pub validated: bool,
}

impl PipelineArtifact {
    pub fn best_attempt(&self) -> &Attempt {
        &self.attempts[self.best]
    }

    pub fn code(&self) -> &str {
        &self.best_attempt().artifact.code
    }

    pub fn verdict(&self) -> &ValidationVerdict {
        &self.best_attempt().verdict
    }

    pub fn metrics(&self) -> &BTreeMap<String, f64> {
        &self.best_attempt().execution.metrics
    }

    pub fn run_dir(&self) -> &Path {
        &self.best_attempt().run_dir
    }

    pub fn executions(&self) -> usize {
        self.attempts.len()
    }

    fn existing(&self, name: &str) -> Option<PathBuf> {
        let p = self.run_dir().join(name);
        p.is_file().then_some(p)
    }

    pub fn submission_path(&self) -> Option<PathBuf> {
        self.existing(&self.spec.submission_file)
    }

    pub fn model_path(&self) -> Option<PathBuf> {
        self.existing(MODEL_FILE)
    }

    pub fn val_predictions_path(&self) -> Option<PathBuf> {
        self.existing(VAL_PREDICTIONS_FILE)
    }

    pub fn val_features_path(&self) -> Option<PathBuf> {
        self.existing(VAL_FEATURES_FILE)
    }
}

fn best_index(attempts: &[Attempt], direction: Direction) -> usize {
    let mut best = 0;
    for (i, a) in attempts.iter().enumerate().skip(1) {
        let b = &attempts[best];
        let (pa, pb) = (a.verdict.status.progress(), b.verdict.status.progress());
        let better = match pa.cmp(&pb) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => match (a.verdict.metric_value, b.verdict.metric_value) {
                (Some(x), Some(y)) => !direction.worse(x, y),
                _ => true,
            },
        };
        if better {
            best = i;
        }
    }
    best
}

/// Settings and collaborators of the execute/validate/improve loop.
pub struct RefineLoop<'a> {
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub workspace: Workspace<'a>,
    /// Each generation runs in `<runs_root>/gen-<k>`.
    pub runs_root: &'a Path,
    pub max_fix_iterations: u32,
    pub sink: &'a dyn StepSink,
}

impl RefineLoop<'_> {
    /// Executes, checks and repairs until VALID or the fix budget is spent.
    pub fn run(
        &self,
        route: RouteKind,
        spec: &TaskSpec,
        skeleton: &Skeleton,
        initial: CodeArtifact,
        guidance: &str,
    ) -> Result<PipelineArtifact, CodegenError> {
        let baseline = self.workspace.baseline(spec.metric, &spec.target)?;
        let vspec = ValidationSpec {
            submission_file: spec.submission_file.clone(),
            metric: spec.metric,
            baseline,
        };
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut current = initial;
        loop {
            let generation = current.generation;
            let run_dir = self.runs_root.join(format!("gen-{generation}"));
            if run_dir.exists() {
                fs::remove_dir_all(&run_dir)?;
            }
            fs::create_dir_all(&run_dir)?;
            self.workspace.stage(&run_dir)?;
            fs::write(run_dir.join(SOLUTION_FILE), &current.code)?;

            let exec = self.sandbox.execute(&run_dir, Path::new(SOLUTION_FILE), &[])?;
            self.sink.emit(
                "execute",
                &format!(
                    "generation {generation}: exit {:?}, {:.2} s, timed out: {}, files: {}",
                    exec.exit_code,
                    exec.duration.as_secs_f64(),
                    exec.timed_out,
                    exec.files_created
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            );
            let mut verdict = validate(&exec, &vspec);
            if let Err(violation) = skeleton.check_protected(&current.code) {
                verdict = ValidationVerdict {
                    status: VerdictStatus::ProtectedViolation,
                    details: format!("{violation}; copy the FROZEN regions and markers back exactly"),
                    metric_value: verdict.metric_value,
                };
            }
            self.sink.emit(
                "validate",
                &format!(
                    "generation {generation}: {} ({})",
                    verdict.status.as_str(),
                    verdict.details
                ),
            );
            let valid = verdict.status == VerdictStatus::Valid;
            attempts.push(Attempt {
                artifact: current.clone(),
                verdict: verdict.clone(),
                run_dir,
                execution: exec.clone(),
            });

            if valid || generation >= self.max_fix_iterations {
                let artifact = PipelineArtifact {
                    route,
                    spec: spec.clone(),
                    skeleton: skeleton.clone(),
                    baseline,
                    best: if valid {
                        attempts.len() - 1
                    } else {
                        best_index(&attempts, spec.metric.direction())
                    },
                    attempts,
                    validated: valid,
                };
                if valid {
                    return Ok(artifact);
                }
                return Err(CodegenError::LoopBudgetExhausted {
                    iterations: generation,
                    best: Box::new(artifact),
                });
            }
            current = improve(self.gateway, &current, &exec, &verdict, guidance)?;
            self.sink.emit(
                "improve",
                &format!(
                    "generation {} written from generation {generation} after {}",
                    current.generation,
                    verdict.status.as_str()
                ),
            );
        }
    }
}

/// The CODEGEN route: assemble, generate, then refine.
pub fn run_codegen(
    refine: &RefineLoop<'_>,
    reflection: &TaskReflection,
    guidance: &str,
) -> Result<PipelineArtifact, CodegenError> {
    let spec = TaskSpec::from_reflection(reflection, refine.workspace.table)?;
    let skeleton = assemble_skeleton(&spec, &Backend::Generic, refine.workspace.test.is_some())?;
    refine.sink.emit(
        "assemble_skeleton",
        &format!(
            "generic skeleton, target `{}`, metric {}, editable regions: {}",
            spec.target,
            spec.metric,
            skeleton.user_regions().join(", ")
        ),
    );
    let initial = generate(refine.gateway, "generate_solution", &skeleton, guidance)?;
    refine.sink.emit(
        "generate",
        &format!("generation 0: {} lines of code", initial.code.lines().count()),
    );
    refine.run(RouteKind::Codegen, &spec, &skeleton, initial, guidance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn exec(code: Option<i32>, stdout: &str, files: &[&str]) -> ExecutionResult {
        ExecutionResult {
            exit_code: code,
            signal: None,
            stdout: stdout.to_string(),
            stderr: String::new(),
            timed_out: false,
            duration: Duration::from_millis(10),
            metrics: crate::sandbox::parse_metrics(stdout),
            files_created: files.iter().map(PathBuf::from).collect(),
        }
    }

    fn vspec(baseline: f64) -> ValidationSpec {
        ValidationSpec {
            submission_file: "submission.csv".into(),
            metric: Metric::Accuracy,
            baseline,
        }
    }

    #[test]
    fn verdicts() {
        let ok = exec(Some(0), "LADS_METRIC accuracy=0.81\n", &["submission.csv"]);
        let v = validate(&ok, &vspec(0.62));
        assert_eq!(v.status, VerdictStatus::Valid);
        assert_eq!(v.metric_value, Some(0.81));

        assert_eq!(
            validate(&exec(Some(1), "", &[]), &vspec(0.62)).status,
            VerdictStatus::ExecFailed
        );
        assert_eq!(
            validate(&exec(Some(0), "", &["submission.csv"]), &vspec(0.62)).status,
            VerdictStatus::NoMetric
        );
        assert_eq!(
            validate(&exec(Some(0), "LADS_METRIC accuracy=0.9", &[]), &vspec(0.62)).status,
            VerdictStatus::NoSubmission
        );
        let below = validate(&ok, &vspec(0.9));
        assert_eq!(below.status, VerdictStatus::BelowBaseline);
        assert!(below.repair_message().unwrap().contains("metric below baseline"));
    }

    #[test]
    fn smaller_better_baseline() {
        let spec = ValidationSpec {
            submission_file: "submission.csv".into(),
            metric: Metric::Rmse,
            baseline: 1.0,
        };
        let good = exec(Some(0), "LADS_METRIC rmse=0.5", &["submission.csv"]);
        assert_eq!(validate(&good, &spec).status, VerdictStatus::Valid);
        let bad = exec(Some(0), "LADS_METRIC rmse=1.5", &["submission.csv"]);
        assert_eq!(validate(&bad, &spec).status, VerdictStatus::BelowBaseline);
    }

    #[test]
    fn code_block_extraction() {
        assert_eq!(
            extract_code_block("Sure:\n```python\nx = 1\n```\nbye").unwrap(),
            "x = 1\n"
        );
        assert_eq!(
            extract_code_block("```python\na = 1\n```\n```python\nb = 2\n```").unwrap(),
            "a = 1\n"
        );
        assert_eq!(extract_code_block("```\ny = 2\n```").unwrap(), "y = 2\n");
        assert!(extract_code_block("no code here").is_none());
        assert!(extract_code_block("```python\n\n```").is_none());
        let continued = "### BEGIN FROZEN: a ###\nx\n### END FROZEN: a ###\n```\nDone.";
        assert!(extract_code_block(continued)
            .unwrap()
            .starts_with("### BEGIN FROZEN: a ###"));
    }

    #[test]
    fn python_literals() {
        let v = serde_json::json!({"a": [1, 2.5, null, true], "b": "x\"y"});
        assert_eq!(py_literal(&v), r#"{"a": [1, 2.5, None, True], "b": "x\"y"}"#);
    }

    fn spec() -> TaskSpec {
        TaskSpec {
            target: "y".into(),
            metric: Metric::Auc,
            id_column: Some("id".into()),
            submission_file: "submission.csv".into(),
            seed: 42,
        }
    }

    #[test]
    fn generic_skeleton_shape() {
        let s = assemble_skeleton(&spec(), &Backend::Generic, false).unwrap();
        assert_eq!(s.user_regions(), vec!["preprocessing", "modeling"]);
        let frozen: Vec<_> = s.protected_regions().map(|r| r.label.as_str()).collect();
        assert_eq!(frozen, vec!["setup", "metrics", "io", "main"]);
        assert!(s.body().contains("TARGET = \"y\""));
        assert!(s.body().contains("TEST_PATH = None"));
        assert!(s.body().contains("PREDICTION_KIND = \"probability\""));
        let main = s.protected_regions().find(|r| r.label == "main").unwrap();
        assert!(s.region_text(main).contains("LADS_METRIC"));
        assert!(s.check_protected(s.body()).is_ok());
        assert!(!s.body().contains("@@"));
    }

    #[test]
    fn engine_skeleton_freezes_engine() {
        let region = "### BEGIN FROZEN: engine ###\ndef fit(X, y):\n    return None\n\n\ndef predict(model, X):\n    return [0.5] * len(X)\n### END FROZEN: engine ###\n";
        let s = assemble_skeleton(
            &spec(),
            &Backend::Engine {
                engine_id: "t".into(),
                region: region.into(),
            },
            true,
        )
        .unwrap();
        assert_eq!(s.user_regions(), vec!["preprocessing"]);
        assert!(s.protected_regions().any(|r| r.label == "engine"));
        assert!(s.body().contains("TEST_PATH = \"data/test.csv\""));
    }

    #[test]
    fn submission_name_from_reflection() {
        assert_eq!(
            submission_name_re()
                .captures("A CSV file named `preds.csv` with id and y")
                .map(|c| c[1].to_string()),
            Some("preds.csv".to_string())
        );
        assert!(submission_name_re().captures("see sample_submission.csv").is_none());
    }
}
