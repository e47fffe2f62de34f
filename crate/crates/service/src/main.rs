use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use lads_core::bench::{load_bundles, read_quartiles, read_rows, run_benchmark, ResultsFile, RESULTS_FILE};
use lads_core::gateway::ScriptedProvider;
use lads_core::session::{RouteChoice, SessionCellRunner};
use lads_core::{start_session, summarize, Gateway, SessionConfig, SessionError, SessionStore};
use lads_service::{serve, ApiConfig, AppState, DEFAULT_MAX_UPLOAD_BYTES};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "lads", version, about = "Agentic tabular ML: build, benchmark and serve")]
struct Cli {
    /// Replay LLM answers from a JSON fixture instead of calling a provider.
    #[arg(long, global = true, value_name = "FIXTURE")]
    scripted: Option<PathBuf>,
    /// Root directory for session work directories.
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,
    /// Fix iterations allowed after the first generation.
    #[arg(long, global = true)]
    max_fix: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one turn on a dataset and a query.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        query: String,
        /// Optional test table whose predictions become the submission.
        #[arg(long)]
        test: Option<PathBuf>,
        /// `router` (dispatch and route as usual), `codegen`, or an engine id.
        #[arg(long, default_value = "router")]
        route: String,
        #[arg(long, default_value_t = lads_core::codegen::DEFAULT_SEED)]
        seed: u64,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run every (bundle, tool) cell and append rows to the results file.
    Bench {
        #[arg(long, value_name = "DIR")]
        bundles: PathBuf,
        /// Comma-separated tools: `codegen` or engine ids.
        #[arg(long, value_delimiter = ',', required = true)]
        tools: Vec<String>,
        #[arg(long, default_value_t = lads_core::codegen::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = RESULTS_FILE)]
        results: PathBuf,
        #[arg(long)]
        quartiles: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the summary table of a results file.
    Summarize {
        #[arg(long, default_value = RESULTS_FILE)]
        results: PathBuf,
        #[arg(long)]
        quartiles: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 64)]
        capacity: usize,
        #[arg(long, default_value = RESULTS_FILE)]
        results: PathBuf,
        #[arg(long)]
        quartiles: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD_BYTES / (1024 * 1024))]
        max_upload_mb: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Llm(#[from] lads_core::LlmError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Bench(#[from] lads_core::BenchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn gateway(cli: &Cli) -> Result<Arc<Gateway>, CliError> {
    let gw = match &cli.scripted {
        Some(path) => Gateway::new(Arc::new(ScriptedProvider::from_file(path)?), "scripted"),
        None => Gateway::from_env()?,
    };
    Ok(Arc::new(gw))
}

fn session_config(cli: &Cli) -> SessionConfig {
    let mut config = SessionConfig::default();
    if let Some(dir) = &cli.workdir {
        config.workdir_root = dir.clone();
    }
    if let Some(n) = cli.max_fix {
        config.max_fix_iterations = n;
    }
    config
}

fn show(label: &str, value: Option<impl std::fmt::Display>) {
    if let Some(v) = value {
        println!("{label:<12} {v}");
    }
}

fn run(
    cli: &Cli,
    dataset: &Path,
    query: &str,
    test: Option<&Path>,
    route: &str,
    seed: u64,
    json: bool,
) -> Result<(), CliError> {
    let mut config = session_config(cli);
    config.seed = seed;
    let mut session = start_session(query, Some(dataset), gateway(cli)?, config)?;
    if let Some(t) = test {
        session.bind_test_dataset(t)?;
    }
    let outcome = if route.eq_ignore_ascii_case("router") {
        session.run_turn()
    } else {
        session.run_build(RouteChoice::from_tool(route))
    };
    let result = outcome?;
    if json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    println!("{:<12} {}", "session", session.id());
    show("decision", result.decision);
    let route_name = result.route.map(serde_json::to_value).transpose()?;
    show("route", route_name.as_ref().and_then(|v| v.as_str()));
    show("verdict", result.verdict.map(|v| v.as_str()));
    for (k, v) in &result.metrics {
        println!("{:<12} {k} = {v}", "metric");
    }
    show("nps", result.nps.map(|n| n.nps));
    show("submission", result.predictions.as_ref().map(|p| p.display()));
    show("package", result.inference_package.as_ref().map(|p| p.display()));
    if let Some(record) = session.state().artifacts.last() {
        show("report", record.report.as_ref().map(|p| p.display()));
    }
    if let Some(answer) = &result.answer {
        println!("\n{answer}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    cli: &Cli,
    bundles: &Path,
    tools: &[String],
    seed: u64,
    results: &Path,
    quartiles: Option<&Path>,
    workers: usize,
) -> Result<(), CliError> {
    let bundles = load_bundles(bundles)?;
    let runner = SessionCellRunner {
        gateway: gateway(cli)?,
        config: session_config(cli),
    };
    let file = ResultsFile::new(results);
    let rows = run_benchmark(&bundles, tools, seed, &runner, &file, workers)?;
    tracing::info!(rows = rows.len(), results = %results.display(), "benchmark finished");
    summarize_file(results, quartiles)
}

fn summarize_file(results: &Path, quartiles: Option<&Path>) -> Result<(), CliError> {
    let rows = read_rows(results)?;
    let q = quartiles.map(read_quartiles).transpose()?;
    print!("{}", summarize(&rows, q.as_ref()).render());
    Ok(())
}

fn serve_cmd(
    cli: &Cli,
    addr: SocketAddr,
    capacity: usize,
    results: &Path,
    quartiles: Option<&Path>,
    max_upload_mb: usize,
) -> Result<(), CliError> {
    let store = SessionStore::new(gateway(cli)?, session_config(cli), capacity);
    let state = AppState::new(
        store,
        ApiConfig {
            results_path: results.to_path_buf(),
            quartiles_path: quartiles.map(Path::to_path_buf),
            max_upload_bytes: max_upload_mb.saturating_mul(1024 * 1024),
        },
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(addr, state))?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            dataset,
            query,
            test,
            route,
            seed,
            json,
        } => run(&cli, dataset, query, test.as_deref(), route, *seed, *json),
        Command::Bench {
            bundles,
            tools,
            seed,
            results,
            quartiles,
            workers,
        } => bench(&cli, bundles, tools, *seed, results, quartiles.as_deref(), *workers),
        Command::Summarize { results, quartiles } => summarize_file(results, quartiles.as_deref()),
        Command::Serve {
            addr,
            capacity,
            results,
            quartiles,
            max_upload_mb,
        } => serve_cmd(&cli, *addr, *capacity, results, quartiles.as_deref(), *max_upload_mb),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
