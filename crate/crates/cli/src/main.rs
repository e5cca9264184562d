//! `graphologue`: offline and scripted access to the pipeline.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 unreadable input,
//! 3 validation found detectable errors, 4 contract violation, 5 transport
//! failure.

mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphologue_core::graph::ExportFormat;
use graphologue_core::prompts::PromptKind;
use graphologue_core::{detect, parse_all, score_against_gold, SessionGraph};
use graphologue_transport::Chunking;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "graphologue", version, about = "Concept graphs from inline-annotated LLM responses")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an annotated response into events (default) or a graph.
    Parse {
        file: PathBuf,
        #[arg(long, conflicts_with = "graph")]
        events: bool,
        #[arg(long)]
        graph: bool,
    },
    /// Report machine-detectable annotation errors.
    Validate { file: PathBuf },
    /// Export the concept graph of a response.
    Export {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Score a predicted annotation against a gold one.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Prompt templates.
    Prompts {
        #[command(subcommand)]
        action: PromptsAction,
    },
    /// Run a recorded fixture through the full pipeline and compare the
    /// deterministic event log with a golden file.
    Replay {
        fixture: PathBuf,
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Overwrite the golden file instead of comparing.
        #[arg(long, requires = "golden")]
        write_golden: bool,
        /// "recorded", a fixed chunk size in chars, or a comma-separated cycle.
        #[arg(long, default_value = "recorded", value_parser = parse_chunking)]
        chunking: Chunking,
        /// Needed when the fixture does not record its question.
        #[arg(long)]
        question: Option<String>,
    },
    /// Ask a model and record every stream into a fixture.
    Record {
        #[arg(long)]
        question: String,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        live: LiveArgs,
    },
    /// Ask a question and print the response as it streams.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long, value_enum, default_value_t = TransportKind::Live)]
        transport: TransportKind,
        /// Fixture read in replay mode.
        #[arg(long, required_if_eq("transport", "replay"))]
        fixture: Option<PathBuf>,
        #[command(flatten)]
        live: LiveArgs,
    },
    /// Serve sessions over HTTP.
    Serve {
        #[arg(long, env = "GRAPHOLOGUE_ADDR", default_value = "127.0.0.1:8787")]
        addr: String,
        #[arg(long, env = "GRAPHOLOGUE_TRANSPORT", value_enum, default_value_t = ServeTransport::Replay)]
        transport: ServeTransport,
        /// Replay reads `<slug>.ndjson` (or `default.ndjson`) here; record writes here.
        #[arg(long, env = "GRAPHOLOGUE_FIXTURE_DIR")]
        fixture_dir: Option<PathBuf>,
        /// Append each session's event log to `<dir>/<session id>.ndjson`.
        #[arg(long, env = "GRAPHOLOGUE_LOG_DIR")]
        log_dir: Option<PathBuf>,
        #[arg(long, env = "GRAPHOLOGUE_CORS_ORIGIN")]
        cors_origin: Option<String>,
        #[command(flatten)]
        live: LiveArgs,
    },
}

#[derive(Debug, Subcommand)]
enum PromptsAction {
    /// Print the template text of one prompt kind.
    Show { kind: String },
    /// List the prompt kinds.
    List,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ServeTransport {
    Live,
    Replay,
    Record,
}

/// Connection settings for a chat-completions endpoint. The key itself is
/// only ever read from the named environment variable.
#[derive(Debug, Clone, clap::Args)]
struct LiveArgs {
    #[arg(long, env = "GRAPHOLOGUE_ENDPOINT", default_value = "https://api.openai.com/v1")]
    endpoint: String,
    #[arg(long, env = "GRAPHOLOGUE_MODEL", default_value = "gpt-4")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
}

fn parse_chunking(s: &str) -> Result<Chunking, String> {
    if s == "recorded" {
        return Ok(Chunking::Recorded);
    }
    let sizes: Vec<usize> = s
        .split(',')
        .map(|n| n.trim().parse::<usize>().ok().filter(|n| *n > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| format!("expected \"recorded\", a chunk size or a comma-separated cycle, got {s:?}"))?;
    Ok(match sizes.as_slice() {
        [n] => Chunking::Fixed(*n),
        _ => Chunking::Cycle(sizes),
    })
}

/// A failed command: its exit code and message.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn unreadable(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: 2, message: format!("cannot read {}: {e}", path.display()) }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

type Outcome = Result<u8, Failure>;

pub fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::unreadable(path, e))
}

pub fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn main() -> ExitCode {
    // Die quietly when piped into `head` and the like.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are contract violations; help and version are not.
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let json = cli.json;
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if json {
                println!("{}", json!({ "error": f.message, "exit_code": f.code }));
            }
            eprintln!("graphologue: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let json = cli.json;
    match cli.command {
        Command::Parse { file, graph, .. } => {
            let events = parse_all(&read(&file)?);
            if graph {
                println!("{}", SessionGraph::from_events(&events).to_json());
            } else {
                print_json(&events);
            }
            Ok(0)
        }
        Command::Validate { file } => validate(&file, json),
        Command::Export { file, format } => {
            let graph = SessionGraph::from_events(&parse_all(&read(&file)?));
            let format = match format {
                Format::Json => ExportFormat::GraphJson,
                Format::Dot => ExportFormat::Dot,
            };
            let out = graph.export(format);
            if json && matches!(format, ExportFormat::Dot) {
                println!("{}", json!({ "dot": out }));
            } else {
                println!("{out}");
            }
            Ok(0)
        }
        Command::Eval { pred, gold } => {
            let report = score_against_gold(&parse_all(&read(&pred)?), &parse_all(&read(&gold)?))
                .map_err(|e| Failure::contract(e.to_string()))?;
            if json {
                print_json(&json!({ "report": report, "table": report.table() }));
            } else {
                print!("{}", report.table());
                if report.saliency_mismatches > 0 {
                    println!("saliency disagreements: {}", report.saliency_mismatches);
                }
            }
            Ok(0)
        }
        Command::Prompts { action } => prompts(action, json),
        Command::Replay { fixture, golden, write_golden, chunking, question } => {
            run::replay(&fixture, golden.as_deref(), write_golden, chunking, question, json)
        }
        Command::Record { question, output, live } => {
            let mut config = live.config(graphologue_transport::Mode::Record);
            config.fixture = Some(output);
            run::ask(config, &question, json)
        }
        Command::Ask { question, transport, fixture, live } => {
            let config = match transport {
                TransportKind::Live => live.config(graphologue_transport::Mode::Live),
                TransportKind::Replay => {
                    let path = fixture.expect("required by clap");
                    graphologue_transport::TransportConfig::replay(path)
                }
            };
            run::ask(config, &question, json)
        }
        Command::Serve { addr, transport, fixture_dir, log_dir, cors_origin, live } => {
            let mode = match transport {
                ServeTransport::Live => graphologue_transport::Mode::Live,
                ServeTransport::Replay => graphologue_transport::Mode::Replay,
                ServeTransport::Record => graphologue_transport::Mode::Record,
            };
            let mut config = graphologue_server::ServerConfig::new(live.config(mode));
            config.fixture_dir = fixture_dir;
            config.log_dir = log_dir;
            config.cors_origin = cors_origin;
            run::serve(config, &addr)
        }
    }
}

impl LiveArgs {
    fn config(self, mode: graphologue_transport::Mode) -> graphologue_transport::TransportConfig {
        graphologue_transport::TransportConfig {
            mode,
            endpoint: Some(self.endpoint),
            model: self.model,
            api_key_env: self.api_key_env,
            temperature: self.temperature,
            ..Default::default()
        }
    }
}

fn validate(file: &Path, json: bool) -> Outcome {
    let diagnostics = detect(&parse_all(&read(file)?));
    let hard = diagnostics.iter().filter(|d| d.is_hard()).count();
    if json {
        print_json(&json!({ "diagnostics": diagnostics, "detectable": hard }));
    } else {
        for d in &diagnostics {
            let sentence = d.sentence.map(|s| format!(" sentence {s}")).unwrap_or_default();
            println!("{:?} paragraph {}{sentence}: {}: {}", d.severity, d.paragraph, d.kind.title(), d.message);
        }
        println!("{hard} detectable error(s), {} note(s)", diagnostics.len() - hard);
    }
    Ok(if hard > 0 { 3 } else { 0 })
}

fn prompts(action: PromptsAction, json: bool) -> Outcome {
    match action {
        PromptsAction::Show { kind } => {
            let kind: PromptKind = kind.parse().map_err(|e: graphologue_core::prompts::PromptError| Failure::contract(e.to_string()))?;
            if json {
                print_json(&json!({ "kind": kind.name(), "template": kind.template() }));
            } else {
                print!("{}", kind.template());
            }
        }
        PromptsAction::List => {
            let names: Vec<&str> = PromptKind::ALL.iter().map(|k| k.name()).collect();
            if json {
                print_json(&names);
            } else {
                names.iter().for_each(|n| println!("{n}"));
            }
        }
    }
    Ok(0)
}
