//! Session lifecycle and the turn loop: dispatch, route, build or answer,
//! report and export.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automl::{self, AutomlError, EngineRegistry, RouteToken};
use crate::bench::{CellRunner, NpsRecord, TaskBundle};
use crate::codegen::{
    run_codegen, CodegenError, PipelineArtifact, RefineLoop, VerdictStatus, Workspace, DEFAULT_MAX_FIX_ITERATIONS,
    DEFAULT_SEED,
};
use crate::dataset::{self, split_train_val, DatasetError, TableHandle};
use crate::gateway::{bind, Gateway, LlmError};
use crate::reflection::{self, ReflectionError};
use crate::report::{self, EventLog, FinalReport, ReportError, StepSink, Summarizer};
use crate::sandbox::Sandbox;

pub const WORKDIR_ENV: &str = "LADS_WORKDIR_ROOT";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORT_FILE: &str = "report.md";
pub const INFERENCE_DIR: &str = "inference";
const HISTORY_CHARS: usize = 6000;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("the query is empty")]
    EmptyQuery,
    #[error("a BUILD turn needs a dataset; upload one first")]
    NoDatasetBound,
    #[error("the session has ended")]
    SessionEnded,
    #[error("a turn is already running in this session")]
    TurnInProgress,
    #[error("no user message is waiting for a reply")]
    NothingToAnswer,
    #[error("dispatch answer `{raw}` is not one of INTERACT, BUILD, END")]
    UnparseableDecision { raw: String },
    #[error("no VALID pipeline after {iterations} fix iteration(s); best-so-far kept unvalidated")]
    LoopBudgetExhausted {
        iterations: u32,
        best: Box<PipelineArtifact>,
    },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session store unavailable: {0}")]
    StoreUnavailable(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(LlmError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error(transparent)]
    Codegen(CodegenError),
    #[error(transparent)]
    Automl(AutomlError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LlmError> for SessionError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::UnparseableToken { raw, .. } => Self::UnparseableDecision { raw },
            other => Self::Llm(other),
        }
    }
}

impl From<CodegenError> for SessionError {
    fn from(e: CodegenError) -> Self {
        match e {
            CodegenError::LoopBudgetExhausted { iterations, best } => Self::LoopBudgetExhausted { iterations, best },
            other => Self::Codegen(other),
        }
    }
}

impl From<AutomlError> for SessionError {
    fn from(e: AutomlError) -> Self {
        match e {
            AutomlError::Codegen(c) => c.into(),
            other => Self::Automl(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    System,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub agent_name: Option<String>,
    pub content: String,
    /// Seconds since the session started, from a monotonic clock.
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActiveRoute {
    None,
    Interact,
    Codegen,
    Automl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Open,
    Running,
    /// A BUILD turn finished; a new user message reopens the session.
    Done,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Interact,
    Build,
    End,
}

impl Decision {
    pub const WIRE: [&'static str; 3] = ["INTERACT", "BUILD", "END"];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Interact => "INTERACT",
            Self::Build => "BUILD",
            Self::End => "END",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a BUILD turn picks its route.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RouteChoice {
    /// Ask the router prompt.
    #[default]
    Router,
    Codegen,
    Engine(String),
}

impl RouteChoice {
    /// `codegen` or an engine id.
    pub fn from_tool(tool: &str) -> Self {
        if tool.eq_ignore_ascii_case("codegen") {
            Self::Codegen
        } else {
            Self::Engine(tool.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMode {
    #[default]
    Template,
    Llm,
    Off,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub workdir_root: PathBuf,
    pub sandbox: Sandbox,
    pub max_fix_iterations: u32,
    pub seed: u64,
    pub summaries: SummaryMode,
    pub registry: EngineRegistry,
    pub route: RouteChoice,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            workdir_root: std::env::var_os(WORKDIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("lads-work")),
            sandbox: Sandbox::default(),
            max_fix_iterations: DEFAULT_MAX_FIX_ITERATIONS,
            seed: DEFAULT_SEED,
            summaries: SummaryMode::default(),
            registry: EngineRegistry::from_env().unwrap_or_else(|e| {
                tracing::error!(error = %e, "engine registry override rejected, using the built-in registry");
                EngineRegistry::builtin()
            }),
            route: RouteChoice::default(),
        }
    }
}

/// Files a finished BUILD turn left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub turn: u32,
    pub route: ActiveRoute,
    pub engine_id: Option<String>,
    pub verdict: VerdictStatus,
    pub validated: bool,
    pub metrics: std::collections::BTreeMap<String, f64>,
    pub code_path: PathBuf,
    pub run_dir: PathBuf,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub inference_package: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub created_at: String,
    pub workdir: PathBuf,
    pub messages: Vec<Message>,
    #[serde(skip)]
    pub dataset: Option<Arc<TableHandle>>,
    #[serde(skip)]
    pub test_dataset: Option<Arc<TableHandle>>,
    pub active_route: ActiveRoute,
    pub artifacts: Vec<ArtifactRecord>,
    pub status: Status,
    pub turns: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub turn: u32,
    pub decision: Option<Decision>,
    pub route: Option<ActiveRoute>,
    /// Submission file (P).
    pub predictions: Option<PathBuf>,
    /// Final pipeline code (C).
    pub code: Option<String>,
    /// Markdown report (R).
    pub report: Option<String>,
    /// Chat answer (O).
    pub answer: Option<String>,
    pub nps: Option<NpsRecord>,
    pub verdict: Option<VerdictStatus>,
    pub metrics: std::collections::BTreeMap<String, f64>,
    pub inference_package: Option<PathBuf>,
}

pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn truncate_front(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

pub struct Session {
    state: SessionState,
    gateway: Arc<Gateway>,
    config: SessionConfig,
    events: Arc<EventLog>,
    clock: Instant,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("state", &self.state).finish()
    }
}

/// Starts a session seeded with `query`, loading `dataset_path` if given.
pub fn start_session(
    query: &str,
    dataset_path: Option<&Path>,
    gateway: Arc<Gateway>,
    config: SessionConfig,
) -> Result<Session, SessionError> {
    if query.trim().is_empty() {
        return Err(SessionError::EmptyQuery);
    }
    let table = dataset_path.map(dataset::load).transpose()?;
    let mut session = Session::create(new_session_id(), gateway, config)?;
    if let Some(t) = table {
        session.bind_table(t);
    }
    session.post_user_message(query)?;
    Ok(session)
}

impl Session {
    /// An empty session; the first user message becomes the query.
    pub fn create(session_id: String, gateway: Arc<Gateway>, config: SessionConfig) -> Result<Self, SessionError> {
        let workdir = config.workdir_root.join(&session_id);
        fs::create_dir_all(&workdir)?;
        let summarizer = match config.summaries {
            SummaryMode::Template => Summarizer::Template,
            SummaryMode::Llm => Summarizer::Llm(Arc::clone(&gateway)),
            SummaryMode::Off => Summarizer::Off,
        };
        let events = Arc::new(EventLog::open(&session_id, &workdir.join(EVENTS_FILE), summarizer)?);
        Ok(Self {
            state: SessionState {
                session_id,
                created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
                workdir,
                messages: Vec::new(),
                dataset: None,
                test_dataset: None,
                active_route: ActiveRoute::None,
                artifacts: Vec::new(),
                status: Status::Open,
                turns: 0,
            },
            gateway,
            config,
            events,
            clock: Instant::now(),
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn id(&self) -> &str {
        &self.state.session_id
    }

    pub fn events(&self) -> &Arc<EventLog> {
        &self.events
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut SessionConfig {
        &mut self.config
    }

    fn ensure_mutable(&self) -> Result<(), SessionError> {
        match self.state.status {
            Status::Ended => Err(SessionError::SessionEnded),
            Status::Running => Err(SessionError::TurnInProgress),
            _ => Ok(()),
        }
    }

    fn push(&mut self, role: Role, agent_name: Option<&str>, content: &str) {
        let content = if content.trim().is_empty() { "(empty)" } else { content };
        let last = self.state.messages.last().map(|m| m.timestamp).unwrap_or(0.0);
        self.state.messages.push(Message {
            role,
            agent_name: agent_name.map(str::to_string),
            content: content.to_string(),
            timestamp: self.clock.elapsed().as_secs_f64().max(last),
        });
    }

    /// Binds a table, replacing any earlier binding.
    pub fn bind_table(&mut self, table: TableHandle) {
        let detail = format!(
            "{}: {} rows x {} columns ({})",
            table.file_name(),
            table.n_rows,
            table.n_cols,
            table.header().join(", ")
        );
        self.state.dataset = Some(Arc::new(table));
        self.events.emit_step("load_dataset", &detail);
    }

    pub fn bind_dataset(&mut self, path: &Path) -> Result<Arc<TableHandle>, SessionError> {
        self.ensure_mutable()?;
        let table = dataset::load(path)?;
        self.bind_table(table);
        Ok(Arc::clone(self.state.dataset.as_ref().expect("just bound")))
    }

    /// Binds a test table whose predictions become the submission.
    pub fn bind_test_dataset(&mut self, path: &Path) -> Result<(), SessionError> {
        self.ensure_mutable()?;
        let table = dataset::load(path)?;
        self.events.emit_step(
            "load_dataset",
            &format!("test table {}: {} rows", table.file_name(), table.n_rows),
        );
        self.state.test_dataset = Some(Arc::new(table));
        Ok(())
    }

    /// Appends a user message; a DONE session reopens.
    pub fn post_user_message(&mut self, text: &str) -> Result<(), SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyQuery);
        }
        self.ensure_mutable()?;
        self.push(Role::User, None, text.trim());
        self.state.status = Status::Open;
        Ok(())
    }

    fn last_user_message(&self) -> Option<&str> {
        self.state
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    fn history(&self) -> String {
        let text: String = self
            .state
            .messages
            .iter()
            .map(|m| {
                let who = match (m.role, &m.agent_name) {
                    (Role::Agent, Some(name)) => name.clone(),
                    (role, _) => format!("{role:?}").to_lowercase(),
                };
                format!("[{who}] {}\n", m.content)
            })
            .collect();
        truncate_front(&text, HISTORY_CHARS).to_string()
    }

    /// Classifies the latest user message.
    pub fn dispatch(&self) -> Result<Decision, SessionError> {
        match self.state.status {
            Status::Ended => return Err(SessionError::SessionEnded),
            Status::Open | Status::Running => {}
            Status::Done => return Err(SessionError::NothingToAnswer),
        }
        let query = self.last_user_message().ok_or(SessionError::NothingToAnswer)?;
        let dataset_status = match &self.state.dataset {
            Some(t) => format!("yes ({}, {} rows)", t.file_name(), t.n_rows),
            None => "no".into(),
        };
        let prompt = self.gateway.render(
            "dispatch",
            &bind([
                ("dataset_status", dataset_status),
                ("history", self.history()),
                ("query", query.to_string()),
            ]),
        )?;
        let token = self
            .gateway
            .complete_token(&self.gateway.structured_profile(), &prompt, &Decision::WIRE)?;
        Ok(match token.as_str() {
            "INTERACT" => Decision::Interact,
            "BUILD" => Decision::Build,
            _ => Decision::End,
        })
    }

    /// One dispatch and the work it selects.
    pub fn run_turn(&mut self) -> Result<WorkflowResult, SessionError> {
        self.ensure_mutable()?;
        if self.state.status == Status::Done {
            return Err(SessionError::NothingToAnswer);
        }
        self.state.status = Status::Running;
        self.state.turns += 1;
        let turn = self.state.turns;
        let outcome = self.dispatch().and_then(|decision| {
            self.events.emit_step("dispatch", &format!("turn {turn}: {decision}"));
            match decision {
                Decision::End => Ok(self.end_turn(turn)),
                Decision::Interact => self.interact_turn(turn),
                Decision::Build => self.build_turn(turn, self.config.route.clone()),
            }
        });
        self.finish_turn(outcome)
    }

    /// A BUILD turn without dispatch, on an explicit route.
    pub fn run_build(&mut self, route: RouteChoice) -> Result<WorkflowResult, SessionError> {
        self.ensure_mutable()?;
        if self.last_user_message().is_none() {
            return Err(SessionError::NothingToAnswer);
        }
        self.state.status = Status::Running;
        self.state.turns += 1;
        let turn = self.state.turns;
        let outcome = self.build_turn(turn, route);
        self.finish_turn(outcome)
    }

    fn finish_turn(&mut self, outcome: Result<WorkflowResult, SessionError>) -> Result<WorkflowResult, SessionError> {
        self.state.active_route = ActiveRoute::None;
        match &outcome {
            Ok(r) => {
                self.state.status = match (self.state.status, r.decision, r.route) {
                    (Status::Ended, _, _) => Status::Ended,
                    (_, _, Some(ActiveRoute::Codegen | ActiveRoute::Automl)) => Status::Done,
                    _ => Status::Open,
                };
            }
            Err(e) => {
                self.push(Role::System, None, &format!("The turn failed: {e}"));
                self.events.emit_step("error", &e.to_string());
                self.state.status = match e {
                    SessionError::LoopBudgetExhausted { .. } => Status::Done,
                    _ => Status::Open,
                };
            }
        }
        outcome
    }

    fn end_turn(&mut self, turn: u32) -> WorkflowResult {
        let answer = "Session closed. Artifacts stay available for download.".to_string();
        self.push(Role::Agent, Some("interactor"), &answer);
        self.events
            .emit_step("end", &format!("turn {turn}: session ended by the user"));
        self.state.status = Status::Ended;
        WorkflowResult {
            turn,
            decision: Some(Decision::End),
            answer: Some(answer),
            ..Default::default()
        }
    }

    fn context_text(&self) -> String {
        let mut text = String::new();
        match &self.state.dataset {
            Some(t) => text.push_str(&format!(
                "Dataset: {} with {} rows; columns: {}\n",
                t.file_name(),
                t.n_rows,
                t.header().join(", ")
            )),
            None => text.push_str("No dataset uploaded yet.\n"),
        }
        for a in &self.state.artifacts {
            text.push_str(&format!(
                "Turn {} built a {:?} pipeline{}: verdict {}, metrics {}\n",
                a.turn,
                a.route,
                a.engine_id
                    .as_deref()
                    .map(|e| format!(" with engine {e}"))
                    .unwrap_or_default(),
                a.verdict.as_str(),
                report::metrics_text(&a.metrics)
            ));
        }
        let recent: Vec<String> = self
            .events
            .events()
            .iter()
            .rev()
            .take(12)
            .rev()
            .map(|e| format!("- {}: {}", e.step_name, e.technical_detail.lines().next().unwrap_or("")))
            .collect();
        if !recent.is_empty() {
            text.push_str("Recent steps:\n");
            text.push_str(&recent.join("\n"));
            text.push('\n');
        }
        text
    }

    fn interact_turn(&mut self, turn: u32) -> Result<WorkflowResult, SessionError> {
        self.state.active_route = ActiveRoute::Interact;
        let query = self.last_user_message().unwrap_or_default().to_string();
        let prompt = self.gateway.render(
            "interact",
            &bind([
                ("context", self.context_text()),
                ("history", self.history()),
                ("query", query),
            ]),
        )?;
        let answer = self
            .gateway
            .complete(self.gateway.profile(), &prompt)?
            .trim()
            .to_string();
        self.push(Role::Agent, Some("interactor"), &answer);
        self.events.emit_step(
            "interact",
            &format!("turn {turn}: answered in {} characters", answer.len()),
        );
        Ok(WorkflowResult {
            turn,
            decision: Some(Decision::Interact),
            route: Some(ActiveRoute::Interact),
            answer: Some(answer),
            ..Default::default()
        })
    }

    fn clarify(&mut self, turn: u32, question: String) -> WorkflowResult {
        self.state.active_route = ActiveRoute::Interact;
        self.push(Role::Agent, Some("planner"), &question);
        self.events.emit_step("clarify", &question);
        WorkflowResult {
            turn,
            decision: Some(Decision::Build),
            route: Some(ActiveRoute::Interact),
            answer: Some(question),
            ..Default::default()
        }
    }

    fn route_token(&self, route: &RouteChoice, query: &str) -> Result<(RouteToken, Option<String>), SessionError> {
        Ok(match route {
            RouteChoice::Codegen => (RouteToken::No, None),
            RouteChoice::Engine(id) => {
                self.config.registry.engine(id)?;
                (RouteToken::Lama, Some(id.clone()))
            }
            RouteChoice::Router => {
                let tok = automl::route(&self.gateway, query)?;
                let engine = self.config.registry.engine_for(tok).map(str::to_string);
                match (tok, engine) {
                    (RouteToken::No, _) => (tok, None),
                    (_, Some(e)) => (tok, Some(e)),
                    (_, None) => return Err(AutomlError::UnknownEngine(format!("no engine mapped to {tok}")).into()),
                }
            }
        })
    }

    fn build_turn(&mut self, turn: u32, route: RouteChoice) -> Result<WorkflowResult, SessionError> {
        let table = self.state.dataset.clone().ok_or(SessionError::NoDatasetBound)?;
        let test = self.state.test_dataset.clone();
        let query = self.last_user_message().unwrap_or_default().to_string();
        let gateway = Arc::clone(&self.gateway);
        let gw = gateway.as_ref();
        let events = Arc::clone(&self.events);
        let sink: &dyn StepSink = events.as_ref();

        let (token, engine_id) = self.route_token(&route, &query)?;
        sink.emit(
            "route",
            &match &engine_id {
                Some(e) => format!("router token {token}: AutoML engine `{e}`"),
                None => format!("router token {token}: LLM code generation"),
            },
        );
        let split = split_train_val(&table, self.config.seed)?;
        sink.emit(
            "split",
            &format!(
                "8:2, seed {} ({} train / {} validation rows)",
                split.seed,
                split.train.len(),
                split.val.len()
            ),
        );
        let eda = dataset::profile(&table);
        sink.emit(
            "profile",
            &format!(
                "{} columns profiled; target candidates: {}",
                eda.columns.len(),
                eda.target_candidates.join(", ")
            ),
        );
        let mut extra = Vec::new();
        if let Some(t) = &test {
            extra.push((t.file_name(), format!("test data, {} rows, no target column", t.n_rows)));
        }
        let inventory = reflection::file_inventory(&table, &extra);
        let reflection = reflection::reflect(gw, &query, &inventory, &eda, &table)?;
        sink.emit(
            "reflect",
            &format!(
                "target: {}, metric: {}, missing sections: {}",
                reflection.target_variable.as_deref().unwrap_or("?"),
                reflection
                    .evaluation_metric
                    .map(|m| m.to_string())
                    .unwrap_or_else(|| "?".into()),
                reflection.absent_sections.len()
            ),
        );
        self.push(Role::Agent, Some("planner"), &reflection.raw_text);

        let turn_dir = self.state.workdir.join(format!("turn-{turn}"));
        if turn_dir.exists() {
            fs::remove_dir_all(&turn_dir)?;
        }
        let runs_root = turn_dir.join("runs");
        let sandbox = self.config.sandbox.clone();
        let registry = self.config.registry.clone();
        fs::create_dir_all(&runs_root)?;
        let workspace = Workspace {
            table: &table,
            test: test.as_deref(),
            split: &split,
        };
        let refine = RefineLoop {
            gateway: gw,
            sandbox: &sandbox,
            workspace,
            runs_root: &runs_root,
            max_fix_iterations: self.config.max_fix_iterations,
            sink,
        };

        let (pipeline, plan_text) = match &engine_id {
            None => {
                if let Some(question) = reflection.clarification() {
                    return Ok(self.clarify(turn, question));
                }
                self.state.active_route = ActiveRoute::Codegen;
                let plan = reflection::plan(gw, &reflection)?;
                let plan_text = plan.render();
                sink.emit("plan", &plan_text);
                self.push(Role::Agent, Some("planner"), &plan_text);
                let guidance = format!("{}\n\n# Plan\n{}", reflection.prompt_text(), plan_text);
                (
                    run_codegen(&refine, &reflection, &guidance).map_err(SessionError::from),
                    plan_text,
                )
            }
            Some(engine_id) => {
                self.state.active_route = ActiveRoute::Automl;
                let config =
                    automl::extract_config(gw, &query, &table.file_name(), table.header(), &table.head_text(5))?;
                sink.emit(
                    "configure",
                    &format!(
                        "task_type {}, target `{}`, metric {}",
                        config.task_type, config.target, config.task_metric
                    ),
                );
                let engine = registry.engine(engine_id)?;
                let ceiling = sandbox.config.timeout;
                let params = automl::gen_params(gw, &reflection.prompt_text(), engine, ceiling)?;
                sink.emit(
                    "params",
                    &format!(
                        "engine `{}`: time budget {} s, extra {}",
                        params.engine_id,
                        params.time_budget,
                        serde_json::Value::Object(params.extra.clone().into_iter().collect())
                    ),
                );
                let plan_text = format!(
                    "1. configure: {} task on `{}` scored by {}\n2. model_fitting: engine `{}` with a {} s budget\n\
                     3. validation: score the hold-out split\n4. submission: write predictions",
                    config.task_type, config.target, config.task_metric, params.engine_id, params.time_budget
                );
                let result = automl::run_automl(
                    &refine,
                    &registry,
                    &config,
                    &params,
                    Some(&reflection),
                    &reflection.prompt_text(),
                )
                .map_err(SessionError::from);
                (result, plan_text)
            }
        };

        let pipeline = match pipeline {
            Ok(p) => p,
            Err(SessionError::LoopBudgetExhausted { iterations, best }) => {
                let code_path = turn_dir.join(crate::codegen::SOLUTION_FILE);
                fs::write(&code_path, best.code())?;
                self.record(turn, &best, code_path, None, None, None);
                self.push(
                    Role::Agent,
                    Some("validator"),
                    &format!(
                        "No valid pipeline after {iterations} fix iteration(s). Best attempt: {} ({}).",
                        best.verdict().status.as_str(),
                        best.verdict().details
                    ),
                );
                return Err(SessionError::LoopBudgetExhausted { iterations, best });
            }
            Err(e) => return Err(e),
        };

        let report = match report::compile_report(gw, &pipeline, &plan_text) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "report generation failed, using the built-in report");
                report::fallback_report(&pipeline, &plan_text)
            }
        };
        self.finish_build(turn, &turn_dir, pipeline, report, engine_id)
    }

    fn record(
        &mut self,
        turn: u32,
        pipeline: &PipelineArtifact,
        code_path: PathBuf,
        predictions: Option<PathBuf>,
        report: Option<PathBuf>,
        inference_package: Option<PathBuf>,
    ) {
        let engine_id = match &pipeline.route {
            crate::codegen::RouteKind::Automl { engine_id } => Some(engine_id.clone()),
            crate::codegen::RouteKind::Codegen => None,
        };
        self.state.artifacts.push(ArtifactRecord {
            turn,
            route: if engine_id.is_some() {
                ActiveRoute::Automl
            } else {
                ActiveRoute::Codegen
            },
            engine_id,
            verdict: pipeline.verdict().status,
            validated: pipeline.validated,
            metrics: pipeline.metrics().clone(),
            code_path,
            run_dir: pipeline.run_dir().to_path_buf(),
            predictions,
            report,
            inference_package,
        });
    }

    fn finish_build(
        &mut self,
        turn: u32,
        turn_dir: &Path,
        pipeline: PipelineArtifact,
        report: FinalReport,
        engine_id: Option<String>,
    ) -> Result<WorkflowResult, SessionError> {
        let report_path = turn_dir.join(REPORT_FILE);
        fs::write(&report_path, &report.markdown)?;
        self.events.emit_step(
            "report",
            &format!(
                "{} sections written to {}",
                report.sections_present.len(),
                report_path.display()
            ),
        );
        let code_path = turn_dir.join(crate::codegen::SOLUTION_FILE);
        fs::write(&code_path, pipeline.code())?;
        let predictions = match pipeline.submission_path() {
            Some(src) => {
                let dest = turn_dir.join(&pipeline.spec.submission_file);
                fs::copy(&src, &dest)?;
                Some(dest)
            }
            None => None,
        };
        let package = report::export_inference(&pipeline, &turn_dir.join(INFERENCE_DIR))?;
        self.events.emit_step(
            "export",
            &format!(
                "inference package at {}: {}",
                package.dir.display(),
                package.input_contract
            ),
        );
        let metric = pipeline.spec.metric;
        let value = pipeline.metrics().get(metric.name()).copied();
        let nps = value.and_then(|v| NpsRecord::for_metric(metric, v).ok());
        self.record(
            turn,
            &pipeline,
            code_path,
            predictions.clone(),
            Some(report_path),
            Some(package.dir.clone()),
        );
        let summary = format!(
            "Built a {} pipeline{} for `{}`: {} = {} (naive baseline {}), verdict {} after {} execution(s).",
            if engine_id.is_some() {
                "AutoML"
            } else {
                "code-generated"
            },
            engine_id.as_deref().map(|e| format!(" with `{e}`")).unwrap_or_default(),
            pipeline.spec.target,
            metric,
            value.map(report::format_metric).unwrap_or_else(|| "n/a".into()),
            report::format_metric(pipeline.baseline),
            pipeline.verdict().status.as_str(),
            pipeline.executions()
        );
        self.push(Role::Agent, Some("interpreter"), &summary);
        Ok(WorkflowResult {
            turn,
            decision: Some(Decision::Build),
            route: Some(if engine_id.is_some() {
                ActiveRoute::Automl
            } else {
                ActiveRoute::Codegen
            }),
            predictions,
            code: Some(pipeline.code().to_string()),
            report: Some(report.markdown),
            answer: None,
            nps,
            verdict: Some(pipeline.verdict().status),
            metrics: pipeline.metrics().clone(),
            inference_package: Some(package.dir),
        })
    }
}

/// Snapshot readable while a turn runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub created_at: String,
    pub status: Status,
    pub running: bool,
    pub messages: Vec<Message>,
    pub artifacts: Vec<ArtifactRecord>,
    pub dataset: Option<String>,
    pub last_result: Option<WorkflowResult>,
    pub last_error: Option<String>,
}

/// A shared session: one turn at a time, observable while it runs.
pub struct SessionHandle {
    id: String,
    events: Arc<EventLog>,
    session: Mutex<Session>,
    running: AtomicBool,
    summary: Mutex<SessionSummary>,
}

impl fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionHandle").field("id", &self.id).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTicket {
    pub session_id: String,
    pub turn_id: String,
}

fn summarize_session(s: &Session, running: bool) -> SessionSummary {
    SessionSummary {
        session_id: s.state.session_id.clone(),
        created_at: s.state.created_at.clone(),
        status: s.state.status,
        running,
        messages: s.state.messages.clone(),
        artifacts: s.state.artifacts.clone(),
        dataset: s.state.dataset.as_ref().map(|t| t.file_name()),
        last_result: None,
        last_error: None,
    }
}

impl SessionHandle {
    pub fn new(session: Session) -> Self {
        let summary = summarize_session(&session, false);
        Self {
            id: session.id().to_string(),
            events: Arc::clone(session.events()),
            session: Mutex::new(session),
            running: AtomicBool::new(false),
            summary: Mutex::new(summary),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn events(&self) -> &Arc<EventLog> {
        &self.events
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    pub fn summary(&self) -> SessionSummary {
        self.summary.lock().unwrap().clone()
    }

    fn refresh(&self, session: &Session) {
        let mut summary = self.summary.lock().unwrap();
        let keep = (summary.last_result.take(), summary.last_error.take());
        *summary = summarize_session(session, self.is_running());
        summary.last_result = keep.0;
        summary.last_error = keep.1;
    }

    /// Binds a dataset; rejected while a turn runs.
    pub fn bind_dataset(&self, path: &Path) -> Result<Arc<TableHandle>, SessionError> {
        if self.is_running() {
            return Err(SessionError::TurnInProgress);
        }
        let mut session = self.session.lock().unwrap();
        let table = session.bind_dataset(path)?;
        self.refresh(&session);
        Ok(table)
    }

    /// Appends a user message and reserves the turn; run it with
    /// [`Self::run_turn`].
    pub fn begin_turn(&self, text: &str) -> Result<TurnTicket, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyQuery);
        }
        if self
            .running
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(SessionError::TurnInProgress);
        }
        let mut session = self.session.lock().unwrap();
        if let Err(e) = session.post_user_message(text) {
            self.running.store(false, Ordering::SeqCst);
            return Err(e);
        }
        self.refresh(&session);
        Ok(TurnTicket {
            session_id: self.id.clone(),
            turn_id: format!("{}-{}", session.state.turns + 1, new_session_id()),
        })
    }

    /// Runs the reserved turn and releases the reservation.
    pub fn run_turn(&self, _ticket: &TurnTicket) -> Result<WorkflowResult, SessionError> {
        let mut session = self.session.lock().unwrap();
        let result = session.run_turn();
        self.running.store(false, Ordering::SeqCst);
        self.refresh(&session);
        let mut summary = self.summary.lock().unwrap();
        match &result {
            Ok(r) => {
                summary.last_result = Some(r.clone());
                summary.last_error = None;
            }
            Err(e) => summary.last_error = Some(e.to_string()),
        }
        result
    }
}

/// All live sessions of one process.
pub struct SessionStore {
    gateway: Arc<Gateway>,
    config: SessionConfig,
    capacity: usize,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionStore")
            .field("capacity", &self.capacity)
            .finish()
    }
}

impl SessionStore {
    pub fn new(gateway: Arc<Gateway>, config: SessionConfig, capacity: usize) -> Self {
        Self {
            gateway,
            config,
            capacity,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn create(&self) -> Result<Arc<SessionHandle>, SessionError> {
        let mut sessions = self
            .sessions
            .write()
            .map_err(|_| SessionError::StoreUnavailable("lock poisoned".into()))?;
        if sessions.len() >= self.capacity {
            return Err(SessionError::StoreUnavailable(format!(
                "{} sessions open",
                sessions.len()
            )));
        }
        let session = Session::create(new_session_id(), Arc::clone(&self.gateway), self.config.clone())
            .map_err(|e| SessionError::StoreUnavailable(e.to_string()))?;
        let handle = Arc::new(SessionHandle::new(session));
        sessions.insert(handle.id().to_string(), Arc::clone(&handle));
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, SessionError> {
        self.sessions
            .read()
            .map_err(|_| SessionError::StoreUnavailable("lock poisoned".into()))?
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs benchmark cells as BUILD turns on fresh sessions.
pub struct SessionCellRunner {
    pub gateway: Arc<Gateway>,
    pub config: SessionConfig,
}

impl CellRunner for SessionCellRunner {
    fn run_cell(&self, bundle: &TaskBundle, tool: &str, seed: u64) -> Result<f64, String> {
        let metric = bundle.metric().map_err(|e| e.to_string())?;
        let mut config = self.config.clone();
        config.seed = seed;
        let query = format!(
            "{}\n\nBuild a model for this task. Evaluation metric: {}.",
            bundle.description.trim(),
            metric
        );
        let mut session = start_session(&query, Some(&bundle.train_path), Arc::clone(&self.gateway), config)
            .map_err(|e| e.to_string())?;
        if let Some(test) = &bundle.test_path {
            session.bind_test_dataset(test).map_err(|e| e.to_string())?;
        }
        let started = Instant::now();
        let result = session
            .run_build(RouteChoice::from_tool(tool))
            .map_err(|e| e.to_string())?;
        tracing::info!(dataset = %bundle.name, tool, elapsed = ?started.elapsed(), "benchmark cell finished");
        result
            .metrics
            .get(metric.name())
            .copied()
            .ok_or_else(|| format!("the run reported no `{metric}` value"))
    }
}
