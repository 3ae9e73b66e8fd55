//! `roadwatch` operator binary.
//!
//! Every command prints JSON on stdout. Failures print one JSON line
//! `{"error", "message"}` on stderr and exit 1 for bad input or 2 for
//! internal faults.

mod args;

use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use roadwatch_core::{api, Actor, Service, ServiceError, Visibility};
use serde::Serialize;
use serde_json::json;

use args::{AccountCommand, Cli, Command, ExportKind, Settings};

/// A failure ready to be reported.
#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
    internal: bool,
}

impl Failure {
    fn user(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            internal: false,
        }
    }

    fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            internal: true,
        }
    }

    fn read(path: &Path, e: std::io::Error) -> Self {
        Self::user("io", format!("cannot read {}: {e}", path.display()))
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Self {
            code: e.code(),
            message: e.to_string(),
            internal: !e.is_user_error(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string(value).map_err(|e| Failure::internal("internal", e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn open(settings: &Settings) -> Result<Service, Failure> {
    Ok(Service::open(settings.config())?)
}

fn read_text(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::read(path, e))
}

fn read_password() -> Result<String, Failure> {
    let stdin = std::io::stdin();
    let password = if stdin.is_terminal() {
        rpassword::prompt_password("password: ")
            .map_err(|e| Failure::user("io", format!("cannot read password: {e}")))?
    } else {
        let mut line = String::new();
        stdin
            .lock()
            .read_line(&mut line)
            .map_err(|e| Failure::user("io", format!("cannot read password from stdin: {e}")))?;
        line.trim_end_matches(['\r', '\n']).to_string()
    };
    if password.is_empty() {
        return Err(Failure::user("invalid_input", "empty password"));
    }
    Ok(password)
}

fn run(cli: Cli) -> Outcome {
    let settings = &cli.settings;
    let now = settings.now();
    match cli.command {
        Command::Ingest { detections, gps } => {
            let det = read_text(&detections)?;
            let gps = std::fs::read(&gps).map_err(|e| Failure::read(&gps, e))?;
            let report = open(settings)?.ingest(&det, &gps, Actor::Operator, now)?;
            print_json(&report)
        }
        Command::Serve { port, bind } => serve(settings, &bind, port),
        Command::Report { segment } => print_json(&open(settings)?.report(segment, now, true)?),
        Command::Account {
            action: AccountCommand::Create { username, role },
        } => {
            let service = open(settings)?;
            let password = read_password()?;
            let account = service.create_account(&username, &password, role, Actor::Operator, now)?;
            print_json(&account)
        }
        Command::Tick => print_json(&open(settings)?.tick(now)?),
        Command::Dispatch => {
            let events = open(settings)?.dispatch_pending(now)?;
            print_json(&json!({"dispatched": events.len(), "events": events}))
        }
        Command::Export { visibility, out } => {
            let vis = match visibility {
                ExportKind::Public => Visibility::Public,
                ExportKind::Private => Visibility::Private,
            };
            let text = open(settings)?.export(vis)?;
            match out {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| Failure::user("io", format!("cannot write {}: {e}", path.display()))),
                None => {
                    let mut stdout = std::io::stdout().lock();
                    writeln!(stdout, "{text}").map_err(|e| Failure::internal("io", e.to_string()))
                }
            }
        }
        Command::Import { file } => {
            let text = read_text(&file)?;
            let (segments, potholes) = open(settings)?.import(&text, Actor::Operator, now)?;
            print_json(&json!({"segments": segments, "potholes": potholes}))
        }
    }
}

fn serve(settings: &Settings, bind: &str, port: u16) -> Outcome {
    let service = open(settings)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::internal("internal", e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind, port))
            .await
            .map_err(|e| Failure::user("io", format!("cannot listen on {bind}:{port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::internal("io", e.to_string()))?;
        tracing::info!(%addr, "serving");
        eprintln!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        api::serve(listener, api::router(service), shutdown)
            .await
            .map_err(|e| Failure::internal("io", e.to_string()))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default();
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.code, "message": f.message}));
            ExitCode::from(if f.internal { 2 } else { 1 })
        }
    }
}
