//! The AutoML branch: routing, configuration extraction, backend parameters
//! and engine adapters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::codegen::{
    assemble_skeleton, generate, py_literal, Backend, CodeArtifact, CodegenError, PipelineArtifact, RefineLoop,
    RouteKind, Skeleton, TaskSpec, DEFAULT_SEED, DEFAULT_SUBMISSION_FILE,
};
use crate::gateway::{bind, extract_json_object, match_token, normalize_token, repair_prompt, Gateway, LlmError};
use crate::metrics::Metric;
use crate::reflection::TaskReflection;
use crate::sandbox::Sandbox;

/// Extra wall time granted to an engine run on top of its fitting budget.
pub const ENGINE_OVERHEAD: Duration = Duration::from_secs(60);
pub const REGISTRY_ENV: &str = "LADS_ENGINE_REGISTRY";

const BUILTIN_REGISTRY: &str = include_str!("../assets/engines/registry.toml");
const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    ("stub.py", include_str!("../assets/engines/stub.py")),
    ("lightautoml.py", include_str!("../assets/engines/lightautoml.py")),
    ("fedot.py", include_str!("../assets/engines/fedot.py")),
];

#[derive(Debug, Error)]
pub enum AutomlError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid AutoML config: {0}")]
    InvalidConfig(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("engine `{engine}` does not support task type `{task_type}`")]
    CapabilityMismatch { engine: String, task_type: TaskType },
    #[error("engine registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteToken {
    #[serde(rename = "NO")]
    No,
    #[serde(rename = "LAMA")]
    Lama,
    #[serde(rename = "FEDOT")]
    Fedot,
}

impl RouteToken {
    pub const WIRE: [&'static str; 3] = ["NO", "LAMA", "FEDOT"];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::No => "NO",
            Self::Lama => "LAMA",
            Self::Fedot => "FEDOT",
        }
    }
}

impl fmt::Display for RouteToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouteToken {
    type Err = AutomlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "NO" => Ok(Self::No),
            "LAMA" => Ok(Self::Lama),
            "FEDOT" => Ok(Self::Fedot),
            other => Err(AutomlError::Llm(LlmError::UnparseableToken {
                raw: other.to_string(),
                allowed: Self::WIRE.iter().map(|s| s.to_string()).collect(),
            })),
        }
    }
}

/// A response naming both engines and nothing else is a free choice; take LAMA.
fn engine_tie_break(raw: &str) -> Option<RouteToken> {
    let words: BTreeSet<String> = raw
        .split(|c: char| !c.is_alphanumeric())
        .map(|w| w.to_ascii_uppercase())
        .collect();
    (words.contains("LAMA") && words.contains("FEDOT") && !words.contains("NO")).then_some(RouteToken::Lama)
}

/// Decides between the CODEGEN route (`NO`) and an AutoML engine.
pub fn route(gateway: &Gateway, query: &str) -> Result<RouteToken, AutomlError> {
    if query.trim().is_empty() {
        return Err(AutomlError::Llm(LlmError::EmptyPrompt));
    }
    let profile = gateway.structured_profile();
    let prompt = gateway.render("automl_router", &bind([("query", query.trim())]))?;
    let raw = gateway.complete(&profile, &prompt)?;
    if let Some(tok) = match_token(&raw, &RouteToken::WIRE) {
        return tok.parse();
    }
    if let Some(tok) = engine_tie_break(&raw) {
        return Ok(tok);
    }
    let repair = repair_prompt(&prompt, "Answer with exactly one of: NO, LAMA, FEDOT.");
    let raw = gateway.complete(&profile, &repair)?;
    match match_token(&raw, &RouteToken::WIRE) {
        Some(tok) => tok.parse(),
        None => engine_tie_break(&raw).ok_or_else(|| {
            AutomlError::Llm(LlmError::UnparseableToken {
                raw,
                allowed: RouteToken::WIRE.iter().map(|s| s.to_string()).collect(),
            })
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "reg")]
    Reg,
    #[serde(rename = "binary")]
    Binary,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reg => "reg",
            Self::Binary => "binary",
        }
    }

    /// The only metric each task type is paired with.
    pub fn metric(self) -> Metric {
        match self {
            Self::Reg => Metric::R2,
            Self::Binary => Metric::Auc,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = AutomlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "reg" => Ok(Self::Reg),
            "binary" => Ok(Self::Binary),
            other => Err(AutomlError::InvalidConfig(format!("unsupported task type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoMLConfig {
    pub task_type: TaskType,
    pub target: String,
    pub task_metric: Metric,
}

impl AutoMLConfig {
    /// Validates a raw JSON config against the pairing and target rules.
    pub fn from_json(map: &Map<String, Value>, columns: &[String]) -> Result<Self, AutomlError> {
        let text = |key: &str| -> Result<String, AutomlError> {
            map.get(key)
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| AutomlError::InvalidConfig(format!("`{key}` must be a string")))
        };
        let task_type: TaskType = text("task_type")?.parse()?;
        let metric_raw = text("task_metric")?;
        let task_metric = match metric_raw.as_str() {
            "r2-score" => Metric::R2,
            "auc" => Metric::Auc,
            other => return Err(AutomlError::InvalidConfig(format!("unsupported task metric `{other}`"))),
        };
        if task_metric != task_type.metric() {
            return Err(AutomlError::InvalidConfig(format!(
                "metric pairing: task type `{task_type}` requires `{}`, got `{metric_raw}`",
                task_type.metric()
            )));
        }
        let target = text("target")?;
        if !columns.contains(&target) {
            return Err(AutomlError::InvalidConfig(format!(
                "target `{target}` is not a column of the table"
            )));
        }
        Ok(Self {
            task_type,
            target,
            task_metric,
        })
    }
}

/// Renders the config prompt, then validates the answer, with one repair.
pub fn extract_config(
    gateway: &Gateway,
    task: &str,
    file_name: &str,
    columns: &[String],
    head: &str,
) -> Result<AutoMLConfig, AutomlError> {
    if columns.is_empty() {
        return Err(AutomlError::InvalidConfig("the table has no columns".into()));
    }
    let profile = gateway.structured_profile();
    let prompt = gateway.render(
        "automl_config",
        &bind([
            ("task", task.trim().to_string()),
            ("file_name", file_name.to_string()),
            ("df_columns", format!("{columns:?}")),
            ("df_head", head.to_string()),
        ]),
    )?;
    const KEYS: [&str; 3] = ["task_type", "target", "task_metric"];
    let map = gateway.complete_json(&profile, &prompt, &KEYS)?;
    match AutoMLConfig::from_json(&map, columns) {
        Ok(cfg) => Ok(cfg),
        Err(AutomlError::InvalidConfig(reason)) => {
            tracing::debug!(%reason, "config rejected, issuing repair prompt");
            let repair = repair_prompt(
                &prompt,
                &format!(
                    "{reason}. Use \"reg\" with \"r2-score\" for regression, \"binary\" with \"auc\" for \
                     classification, and a target taken from the column names. Respond only with the JSON object."
                ),
            );
            let map = gateway.complete_json(&profile, &repair, &KEYS)?;
            AutoMLConfig::from_json(&map, columns)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendParams {
    pub engine_id: String,
    pub time_budget: u64,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSpec {
    pub id: String,
    pub template: String,
    pub capabilities: BTreeSet<TaskType>,
    pub default_time_budget: u64,
    pub min_time_budget: u64,
    pub max_time_budget: u64,
    pub knobs: BTreeMap<String, Value>,
    /// Ask the model to complete the engine skeleton instead of running the
    /// template as is.
    pub llm_completion: bool,
}

/// Emits a pipeline scaffold for an engine.
pub trait EngineAdapter {
    fn engine_id(&self) -> &str;
    fn capabilities(&self) -> &BTreeSet<TaskType>;
    /// The frozen `engine` region for `config` and `params`.
    fn engine_region(&self, config: &AutoMLConfig, params: &BackendParams) -> String;
    fn llm_completion(&self) -> bool {
        false
    }
}

impl EngineAdapter for EngineSpec {
    fn engine_id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> &BTreeSet<TaskType> {
        &self.capabilities
    }

    fn engine_region(&self, config: &AutoMLConfig, params: &BackendParams) -> String {
        let knobs = Value::Object(params.extra.clone().into_iter().collect());
        self.template
            .replace(
                "@@TASK_TYPE@@",
                &py_literal(&Value::String(config.task_type.as_str().into())),
            )
            .replace("@@TIME_BUDGET@@", &params.time_budget.to_string())
            .replace("@@ENGINE_PARAMS@@", &py_literal(&knobs))
    }

    fn llm_completion(&self) -> bool {
        self.llm_completion
    }
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    tokens: BTreeMap<String, String>,
    #[serde(default)]
    engine: Vec<EngineEntry>,
}

#[derive(Debug, Deserialize)]
struct EngineEntry {
    id: String,
    template: String,
    capabilities: Vec<String>,
    default_time_budget: u64,
    #[serde(default = "one")]
    min_time_budget: u64,
    #[serde(default = "u64_max")]
    max_time_budget: u64,
    #[serde(default)]
    knobs: BTreeMap<String, toml::Value>,
    #[serde(default)]
    llm_completion: bool,
}

fn one() -> u64 {
    1
}

fn u64_max() -> u64 {
    u64::MAX
}

#[derive(Debug, Clone)]
pub struct EngineRegistry {
    engines: BTreeMap<String, EngineSpec>,
    tokens: BTreeMap<RouteToken, String>,
}

impl EngineRegistry {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_REGISTRY, |name| {
            BUILTIN_TEMPLATES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| format!("no built-in template `{name}`"))
        })
        .expect("built-in engine registry is valid")
    }

    /// Loads a registry file; templates resolve relative to its directory,
    /// falling back to the built-in templates.
    pub fn from_file(path: &Path) -> Result<Self, AutomlError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AutomlError::Registry(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, |name| {
            let p = dir.join(name);
            if p.is_file() {
                return std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()));
            }
            BUILTIN_TEMPLATES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| format!("template `{name}` not found next to the registry"))
        })
    }

    /// `LADS_ENGINE_REGISTRY` when set, otherwise the built-in registry.
    pub fn from_env() -> Result<Self, AutomlError> {
        match std::env::var(REGISTRY_ENV) {
            Ok(path) => Self::from_file(Path::new(&path)),
            Err(_) => Ok(Self::builtin()),
        }
    }

    fn parse(text: &str, load: impl Fn(&str) -> Result<String, String>) -> Result<Self, AutomlError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| AutomlError::Registry(e.to_string()))?;
        let mut engines = BTreeMap::new();
        for e in file.engine {
            let template = load(&e.template).map_err(AutomlError::Registry)?;
            Skeleton::parse(&template).map_err(|err| AutomlError::Registry(format!("{}: {err}", e.template)))?;
            let capabilities = e
                .capabilities
                .iter()
                .map(|c| c.parse::<TaskType>())
                .collect::<Result<_, _>>()
                .map_err(|err| AutomlError::Registry(format!("engine `{}`: {err}", e.id)))?;
            let knobs = e
                .knobs
                .into_iter()
                .map(|(k, v)| {
                    serde_json::to_value(v)
                        .map(|v| (k, v))
                        .map_err(|err| AutomlError::Registry(err.to_string()))
                })
                .collect::<Result<_, _>>()?;
            if e.min_time_budget > e.max_time_budget
                || !(e.min_time_budget..=e.max_time_budget).contains(&e.default_time_budget)
            {
                return Err(AutomlError::Registry(format!(
                    "engine `{}` has inconsistent time budgets",
                    e.id
                )));
            }
            engines.insert(
                e.id.clone(),
                EngineSpec {
                    id: e.id,
                    template,
                    capabilities,
                    default_time_budget: e.default_time_budget,
                    min_time_budget: e.min_time_budget,
                    max_time_budget: e.max_time_budget,
                    knobs,
                    llm_completion: e.llm_completion,
                },
            );
        }
        let mut tokens = BTreeMap::new();
        for (tok, id) in file.tokens {
            let tok: RouteToken = tok
                .parse()
                .map_err(|_| AutomlError::Registry(format!("unknown router token `{tok}`")))?;
            if !engines.contains_key(&id) {
                return Err(AutomlError::Registry(format!(
                    "token {tok} maps to unknown engine `{id}`"
                )));
            }
            tokens.insert(tok, id);
        }
        Ok(Self { engines, tokens })
    }

    pub fn engine(&self, id: &str) -> Result<&EngineSpec, AutomlError> {
        self.engines
            .get(id)
            .ok_or_else(|| AutomlError::UnknownEngine(id.to_string()))
    }

    pub fn engine_ids(&self) -> Vec<&str> {
        self.engines.keys().map(String::as_str).collect()
    }

    pub fn insert(&mut self, spec: EngineSpec) {
        self.engines.insert(spec.id.clone(), spec);
    }

    pub fn map_token(&mut self, token: RouteToken, engine_id: &str) -> Result<(), AutomlError> {
        self.engine(engine_id)?;
        self.tokens.insert(token, engine_id.to_string());
        Ok(())
    }

    /// Engine used for a router token; `None` for `NO`.
    pub fn engine_for(&self, token: RouteToken) -> Option<&str> {
        self.tokens.get(&token).map(String::as_str)
    }
}

fn number(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => {
            static RE: OnceLock<Regex> = OnceLock::new();
            let re = RE.get_or_init(|| Regex::new(r"^\s*([0-9]+(?:\.[0-9]+)?)").unwrap());
            re.captures(s).and_then(|c| c[1].parse().ok())
        }
        _ => None,
    }
}

/// Clamps a proposal to the engine's bounds and the sandbox ceiling.
pub fn resolve_params(engine: &EngineSpec, proposal: &Map<String, Value>, ceiling: Duration) -> BackendParams {
    let hi = engine
        .max_time_budget
        .min(ceiling.as_secs())
        .max(engine.min_time_budget.min(ceiling.as_secs()));
    let lo = engine.min_time_budget.min(hi);
    let requested = proposal
        .get("time_budget")
        .and_then(number)
        .filter(|v| v.is_finite() && *v > 0.0)
        .map(|v| v.round() as u64);
    let time_budget = requested
        .unwrap_or(engine.default_time_budget)
        .clamp(lo.max(1), hi.max(1));
    let mut extra = engine.knobs.clone();
    if let Some(Value::Object(given)) = proposal.get("extra") {
        for (k, v) in given {
            extra.insert(k.clone(), v.clone());
        }
    }
    BackendParams {
        engine_id: engine.id.clone(),
        time_budget,
        extra,
    }
}

/// Asks for a fitting budget and engine knobs, then clamps them.
pub fn gen_params(
    gateway: &Gateway,
    reflection_text: &str,
    engine: &EngineSpec,
    ceiling: Duration,
) -> Result<BackendParams, AutomlError> {
    let prompt = gateway.render("automl_params", &bind([("reflection", reflection_text)]))?;
    let raw = gateway.complete(&gateway.structured_profile(), &prompt)?;
    let proposal = extract_json_object(&raw).unwrap_or_else(|e| {
        tracing::warn!(error = %e, "parameter proposal is not JSON, using engine defaults");
        Map::new()
    });
    Ok(resolve_params(engine, &proposal, ceiling))
}

/// Attribute calls on framework objects that the scaffold never makes.
pub fn unknown_engine_calls(skeleton: &Skeleton, code: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"\b(Fedot|TabularAutoML|TabularUtilizedAutoML|Pipeline|PipelineBuilder|automl|model)\.([A-Za-z_]\w*)\s*\(",
        )
        .unwrap()
    });
    let known: BTreeSet<String> = re.captures_iter(skeleton.body()).map(|c| c[2].to_string()).collect();
    let mut out: Vec<String> = re
        .captures_iter(code)
        .filter(|c| !known.contains(&c[2]))
        .map(|c| format!("{}.{}", &c[1], &c[2]))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// The AUTOML route: engine scaffold, optional completion, then the shared
/// refine loop with the engine's wall-time allowance.
pub fn run_automl(
    refine: &RefineLoop<'_>,
    registry: &EngineRegistry,
    config: &AutoMLConfig,
    params: &BackendParams,
    reflection: Option<&TaskReflection>,
    guidance: &str,
) -> Result<PipelineArtifact, AutomlError> {
    let engine = registry.engine(&params.engine_id)?;
    if !engine.capabilities().contains(&config.task_type) {
        return Err(AutomlError::CapabilityMismatch {
            engine: engine.id.clone(),
            task_type: config.task_type,
        });
    }
    let table = refine.workspace.table;
    if table.column_index(&config.target).is_none() {
        return Err(AutomlError::InvalidConfig(format!(
            "target `{}` is not a column",
            config.target
        )));
    }
    let spec = match reflection.and_then(|r| TaskSpec::from_reflection(r, table).ok()) {
        Some(from_reflection) => TaskSpec {
            target: config.target.clone(),
            metric: config.task_metric,
            id_column: from_reflection.id_column.filter(|c| *c != config.target),
            ..from_reflection
        },
        None => TaskSpec {
            target: config.target.clone(),
            metric: config.task_metric,
            id_column: reflection
                .map(|r| r.id_columns().into_iter().map(str::to_string).collect::<Vec<_>>())
                .unwrap_or_default()
                .into_iter()
                .find(|c| *c != config.target && table.column_index(c).is_some()),
            submission_file: DEFAULT_SUBMISSION_FILE.into(),
            seed: DEFAULT_SEED,
        },
    };
    let backend = Backend::Engine {
        engine_id: engine.id.clone(),
        region: engine.engine_region(config, params),
    };
    let skeleton = assemble_skeleton(&spec, &backend, refine.workspace.test.is_some())?;
    refine.sink.emit(
        "assemble_skeleton",
        &format!(
            "engine `{}` skeleton, task {}, target `{}`, metric {}, time budget {} s",
            engine.id, config.task_type, config.target, config.task_metric, params.time_budget
        ),
    );
    let initial = if engine.llm_completion() {
        let artifact = generate(refine.gateway, "fedot_solution", &skeleton, guidance)?;
        let unknown = unknown_engine_calls(&skeleton, &artifact.code);
        if !unknown.is_empty() {
            tracing::warn!(engine = %engine.id, calls = ?unknown, "generated code calls engine methods the scaffold does not use");
        }
        artifact
    } else {
        CodeArtifact::root(skeleton.body().to_string(), format!("engine:{}", engine.id))
    };
    let sandbox: Sandbox = refine
        .sandbox
        .clone()
        .with_timeout(Duration::from_secs(params.time_budget) + ENGINE_OVERHEAD);
    let local = RefineLoop {
        sandbox: &sandbox,
        ..*refine
    };
    Ok(local.run(
        RouteKind::Automl {
            engine_id: engine.id.clone(),
        },
        &spec,
        &skeleton,
        initial,
        guidance,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn config_pairing() {
        let columns = cols(&["Id", "SalePrice"]);
        let ok = AutoMLConfig::from_json(
            &obj(serde_json::json!({"task_type": "reg", "target": "SalePrice", "task_metric": "r2-score"})),
            &columns,
        )
        .unwrap();
        assert_eq!((ok.task_type, ok.task_metric), (TaskType::Reg, Metric::R2));
        let bad = AutoMLConfig::from_json(
            &obj(serde_json::json!({"task_type": "reg", "target": "SalePrice", "task_metric": "auc"})),
            &columns,
        )
        .unwrap_err();
        assert!(
            matches!(bad, AutomlError::InvalidConfig(ref r) if r.contains("metric pairing")),
            "{bad}"
        );
        let missing_target = AutoMLConfig::from_json(
            &obj(serde_json::json!({"task_type": "binary", "target": "Nope", "task_metric": "auc"})),
            &columns,
        );
        assert!(matches!(missing_target, Err(AutomlError::InvalidConfig(_))));
        let multiclass = AutoMLConfig::from_json(
            &obj(serde_json::json!({"task_type": "multiclass", "target": "SalePrice", "task_metric": "auc"})),
            &columns,
        );
        assert!(matches!(multiclass, Err(AutomlError::InvalidConfig(_))));
    }

    #[test]
    fn builtin_registry() {
        let r = EngineRegistry::builtin();
        assert_eq!(r.engine_ids(), vec!["fedot", "lightautoml", "stub"]);
        assert_eq!(r.engine_for(RouteToken::Lama), Some("stub"));
        assert_eq!(r.engine_for(RouteToken::Fedot), Some("stub"));
        assert_eq!(r.engine_for(RouteToken::No), None);
        assert!(matches!(r.engine("nonexistent"), Err(AutomlError::UnknownEngine(_))));
        assert!(r.engine("fedot").unwrap().llm_completion);
    }

    #[test]
    fn params_default_and_clamp() {
        let r = EngineRegistry::builtin();
        let stub = r.engine("stub").unwrap();
        let ceiling = Duration::from_secs(600);
        assert_eq!(resolve_params(stub, &Map::new(), ceiling).time_budget, 300);
        let p = resolve_params(stub, &obj(serde_json::json!({"time_budget": 60})), ceiling);
        assert_eq!(p.time_budget, 60);
        let p = resolve_params(stub, &obj(serde_json::json!({"time_budget": 1e6})), ceiling);
        assert_eq!(p.time_budget, 600);
        let p = resolve_params(stub, &obj(serde_json::json!({"time_budget": "90 seconds"})), ceiling);
        assert_eq!(p.time_budget, 90);
        let lama = r.engine("lightautoml").unwrap();
        let p = resolve_params(
            lama,
            &obj(serde_json::json!({"extra": {"cpu_limit": 2, "foo": "bar"}})),
            ceiling,
        );
        assert_eq!(p.extra["cpu_limit"], 2);
        assert_eq!(p.extra["foo"], "bar");
    }

    #[test]
    fn engine_region_rendering() {
        let r = EngineRegistry::builtin();
        let stub = r.engine("stub").unwrap();
        let cfg = AutoMLConfig {
            task_type: TaskType::Binary,
            target: "y".into(),
            task_metric: Metric::Auc,
        };
        let params = resolve_params(stub, &Map::new(), Duration::from_secs(600));
        let region = stub.engine_region(&cfg, &params);
        assert!(region.contains("TASK_TYPE = \"binary\""));
        assert!(region.contains("TIME_BUDGET = 300"));
        assert!(region.contains("ENGINE_PARAMS = {}"));
        assert!(!region.contains("@@"));
    }

    #[test]
    fn tie_break() {
        assert_eq!(engine_tie_break("LAMA or FEDOT"), Some(RouteToken::Lama));
        assert_eq!(engine_tie_break("NO, not LAMA or FEDOT"), None);
        assert_eq!(engine_tie_break("LAMA"), None);
    }

    #[test]
    fn registry_rejects_bad_token_target() {
        let text = "[tokens]\nLAMA = \"ghost\"\n\n[[engine]]\nid = \"stub\"\ntemplate = \"stub.py\"\ncapabilities = [\"binary\"]\ndefault_time_budget = 10\n";
        let err = EngineRegistry::parse(text, |_| Ok(BUILTIN_TEMPLATES[0].1.to_string())).unwrap_err();
        assert!(matches!(err, AutomlError::Registry(_)));
    }

    #[test]
    fn unknown_calls_are_listed() {
        let s = Skeleton::parse("### BEGIN FROZEN: e ###\nmodel.fit(X)\n### END FROZEN: e ###\n").unwrap();
        let code = "model.fit(X)\nmodel.plot_pareto()\nmodel.fit(Y)\n";
        assert_eq!(unknown_engine_calls(&s, code), vec!["model.plot_pareto"]);
    }
}
