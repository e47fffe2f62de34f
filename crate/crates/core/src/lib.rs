//! Agentic workflow for tabular machine learning: a session loop that routes
//! each request to LLM code generation or an AutoML engine, repairs pipelines
//! in a sandbox, and produces predictions, code, reports and benchmark scores.

pub mod automl;
pub mod bench;
pub mod codegen;
pub mod dataset;
pub mod gateway;
pub mod metrics;
pub mod reflection;
pub mod report;
pub mod sandbox;
pub mod session;

pub use automl::{AutoMLConfig, AutomlError, EngineRegistry, RouteToken, TaskType};
pub use bench::{normalize_score, summarize, BenchError, BenchmarkRow, NpsRecord, TaskBundle};
pub use codegen::{CodegenError, PipelineArtifact, Skeleton, VerdictStatus};
pub use dataset::{DatasetError, TableHandle};
pub use gateway::{Gateway, LlmError};
pub use metrics::{Direction, Metric};
pub use report::{EventLog, FinalReport, InferencePackage, ReportError, StepEvent};
pub use sandbox::{ExecutionResult, Sandbox, SandboxConfig};
pub use session::{start_session, Decision, Session, SessionConfig, SessionError, SessionStore, WorkflowResult};
