//! `procgate`: headless replay, graph export, checklist verification, the
//! HTTP service, and a client for it.
//!
//! Exit codes: 0 success, 1 checklist mismatch, 2 usage error, 3 config or
//! input error, 4 runtime or service error.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use futures::StreamExt;
use serde_json::json;

use procgate_client::{Client, ClientError, DEFAULT_URL};
use procgate_core::audit::AuditLog;
use procgate_core::iekg::{ExportFormat, InterfaceGraph};
use procgate_core::perception::{ingest, Telemetry};
use procgate_core::procedure::{parse_checklist, parse_observations, verify_checklist};
use procgate_core::replay::{run_headless, ApprovalScript};
use procgate_core::runtime::{Decision, RuntimeError};
use procgate_core::scenario::{read_file, ConfigError, Scenario};
use procgate_server::{serve, start, ServerConfig};

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "procgate", version, about = "Risk-gated procedure support runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and write report.json and audit.jsonl.
    Replay(ReplayArgs),
    /// Export an interface graph as JSON or DOT.
    GraphExport(GraphExportArgs),
    /// Compare observed valve states against a checklist.
    Checklist(ChecklistArgs),
    /// Serve the HTTP API over one scenario.
    Serve(ServeArgs),
    /// Print the runtime state of a server.
    Status(Remote),
    /// Print audit records of a server as JSON lines.
    Audit(AuditArgs),
    /// Print the procedure with compiled paths and assessments.
    Procedure(Remote),
    /// Approve or reject a pending approval.
    Approve(ApproveArgs),
    /// Start the server's replay.
    Run(Remote),
    /// Evaluate the current step again.
    Evaluate(Remote),
    /// Execute the current step after an Allow verdict.
    Execute(Remote),
    /// Stream audit and risk events as JSON lines.
    Watch(AuditArgs),
}

#[derive(Args)]
struct ReplayArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory the scenario's relative paths resolve against; defaults to
    /// the scenario file's directory.
    #[arg(long)]
    config_dir: Option<PathBuf>,
    /// Telemetry CSV; defaults to the one the scenario names.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// Approvals script (JSON). Without one, the first gated step waits.
    #[arg(long)]
    approvals: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "replay-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Args)]
struct GraphExportArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChecklistArgs {
    /// Checklist CSV: index,valve_code,valve_name,expected.
    #[arg(long)]
    checklist: PathBuf,
    /// Observations CSV: valve_code,observed.
    #[arg(long)]
    observed: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory holding the scenario and its configs.
    #[arg(long)]
    config_dir: PathBuf,
    /// Scenario file; defaults to scenario.toml in the config directory.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Append the audit trail to this JSON-lines file.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Start the replay immediately.
    #[arg(long)]
    run: bool,
}

#[derive(Args)]
struct Remote {
    #[arg(long, env = "PROCGATE_URL", default_value = DEFAULT_URL)]
    url: String,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    remote: Remote,
    /// Only records with a greater sequence number.
    #[arg(long)]
    since: Option<u64>,
}

#[derive(Args)]
struct ApproveArgs {
    #[command(flatten)]
    remote: Remote,
    approval_id: String,
    /// Reject instead of approve.
    #[arg(long)]
    reject: bool,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::config(e)
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Perception(_) => Self::config(e),
            other => Self::runtime(other),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Self::runtime(e)
    }
}

type Outcome = Result<u8, Failure>;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Replay(a) => replay(a),
        Command::GraphExport(a) => graph_export(a),
        Command::Checklist(a) => checklist(a),
        Command::Serve(a) => serve_cmd(a).await,
        Command::Status(r) => print_json(Client::new(&r.url).state().await),
        Command::Audit(a) => audit(a).await,
        Command::Procedure(r) => print_json(Client::new(&r.url).procedure().await),
        Command::Approve(a) => {
            let decision = if a.reject {
                Decision::Rejected
            } else {
                Decision::Approved
            };
            print_json(Client::new(&a.remote.url).approve(&a.approval_id, decision).await)
        }
        Command::Run(r) => print_json(Client::new(&r.url).run().await),
        Command::Evaluate(r) => print_json(Client::new(&r.url).evaluate().await),
        Command::Execute(r) => print_json(Client::new(&r.url).execute().await),
        Command::Watch(a) => watch(a).await,
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn print_json<T: serde::Serialize>(r: Result<T, ClientError>) -> Outcome {
    let value = r?;
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
    Ok(0)
}

fn load_telemetry(path: &Path) -> Result<Telemetry, Failure> {
    let text = read_file(path)?;
    ingest(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn replay(a: ReplayArgs) -> Outcome {
    let config_dir = match a.config_dir {
        Some(d) => d,
        None => a.scenario.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let scenario = Scenario::load(&a.scenario, &config_dir)?;
    let telemetry_path = a
        .telemetry
        .or_else(|| scenario.default_telemetry())
        .ok_or_else(|| Failure::config("no --telemetry given and the scenario names none"))?;
    let telemetry = load_telemetry(&telemetry_path)?;
    let script = match &a.approvals {
        Some(p) => {
            ApprovalScript::from_json(&read_file(p)?).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => ApprovalScript::default(),
    };

    fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    let audit_path = a.out.join("audit.jsonl");
    let file = fs::File::create(&audit_path).map_err(|e| Failure::runtime(format!("{}: {e}", audit_path.display())))?;
    let audit = AuditLog::with_sink(Box::new(BufWriter::new(file)));
    let (mut report, mut rt) = run_headless(Arc::new(scenario), &telemetry, &script, audit)?;
    rt.audit_mut()
        .flush()
        .map_err(|e| Failure::runtime(format!("{}: {e}", audit_path.display())))?;
    report.audit_path = Some(audit_path.display().to_string());

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out.join("report.json"), format!("{text}\n").as_bytes())?;
    println!("{text}");
    Ok(0)
}

fn graph_export(a: GraphExportArgs) -> Outcome {
    let text = read_file(&a.graph)?;
    let graph = InterfaceGraph::from_json(&text).map_err(|e| Failure::config(format!("{}: {e}", a.graph.display())))?;
    let format = match a.format {
        Format::Json => ExportFormat::Json,
        Format::Dot => ExportFormat::Dot,
    };
    let bytes = graph.export(format);
    let counts = format!("nodes: {} edges: {}", graph.len(), graph.edges().len());
    match &a.out {
        Some(path) => {
            write_file(path, &bytes)?;
            println!("{counts}");
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes).map_err(Failure::runtime)?;
            eprintln!("{counts}");
        }
    }
    Ok(0)
}

fn checklist(a: ChecklistArgs) -> Outcome {
    let items = parse_checklist(&read_file(&a.checklist)?)
        .map_err(|e| Failure::config(format!("{}: {e}", a.checklist.display())))?;
    let observed = parse_observations(&read_file(&a.observed)?)
        .map_err(|e| Failure::config(format!("{}: {e}", a.observed.display())))?;
    let mismatches = verify_checklist(&items, &observed);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "valves": items.len(),
            "mismatches": mismatches,
        }))
        .expect("serializable")
    );
    Ok(if mismatches.is_empty() { 0 } else { EXIT_MISMATCH })
}

async fn serve_cmd(a: ServeArgs) -> Outcome {
    let scenario_path = a.scenario.unwrap_or_else(|| a.config_dir.join("scenario.toml"));
    let scenario = Scenario::load(&scenario_path, &a.config_dir)?;
    let telemetry_path = a
        .telemetry
        .or_else(|| scenario.default_telemetry())
        .ok_or_else(|| Failure::config("no --telemetry given and the scenario names none"))?;
    let telemetry = load_telemetry(&telemetry_path)?;
    let audit_sink: Option<Box<dyn Write + Send>> = match &a.audit {
        Some(p) => {
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
            Some(Box::new(BufWriter::new(f)))
        }
        None => None,
    };
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::config(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::runtime(format!("cannot listen on {addr}: {e}")))?;
    let app = start(ServerConfig {
        scenario: Arc::new(scenario),
        telemetry,
        audit_sink,
        autorun: a.run,
    })?;
    eprintln!(
        "listening on http://{}",
        listener.local_addr().map_err(Failure::runtime)?
    );
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve(listener, app, shutdown).await.map_err(Failure::runtime)?;
    Ok(0)
}

async fn audit(a: AuditArgs) -> Outcome {
    let records = Client::new(&a.remote.url).audit(a.since).await?;
    let mut out = std::io::stdout().lock();
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(Failure::runtime)?;
    }
    Ok(0)
}

async fn watch(a: AuditArgs) -> Outcome {
    let mut events = Client::new(&a.remote.url).events(a.since).await?;
    while let Some(ev) = events.next().await {
        let ev = ev?;
        println!("{}", serde_json::to_string(&ev).expect("event serializes"));
    }
    Ok(0)
}
