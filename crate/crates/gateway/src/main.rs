use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use margin_core::DocumentStore;
use margin_gateway::app::{JOURNAL_FILE, TELEMETRY_FILE};
use margin_gateway::auth::UserRecord;
use margin_gateway::telemetry::{EventType, TelemetryEvent, TelemetryLog};
use margin_gateway::{Gateway, GatewayConfig};

#[derive(Parser)]
#[command(name = "margin", version, about = "LaTeX writing-assistant gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Print a `[[users]]` entry for the config file. Reads the password from
    /// `MARGIN_PASSWORD` or the first line of stdin.
    HashPassword {
        #[arg(long)]
        username: String,
        #[arg(long)]
        admin: bool,
    },
    /// Append a new user to the config file and log its registration.
    AddUser {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        username: String,
        #[arg(long)]
        admin: bool,
    },
    /// Import `.tex` files into a new project owned by `owner`.
    Ingest {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        project: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Aggregate a telemetry log into a usage summary (JSON).
    Usage {
        #[arg(long)]
        log: PathBuf,
        /// Evaluation time in Unix seconds; defaults to the latest event.
        #[arg(long)]
        now: Option<i64>,
    },
}

fn read_password() -> Result<String, String> {
    if let Ok(p) = std::env::var("MARGIN_PASSWORD") {
        return Ok(p);
    }
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).map_err(|e| e.to_string())?;
    let p = line.trim_end_matches(['\r', '\n']).to_string();
    if p.is_empty() {
        return Err("empty password".into());
    }
    Ok(p)
}

fn users_block(u: &UserRecord) -> Result<String, String> {
    #[derive(serde::Serialize)]
    struct Block<'a> {
        users: [&'a UserRecord; 1],
    }
    toml::to_string(&Block { users: [u] }).map_err(|e| e.to_string())
}

fn data_dir(cfg: &GatewayConfig) -> Result<&Path, String> {
    cfg.data_dir.as_deref().ok_or_else(|| "the config sets no data_dir".to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(&config).map_err(|e| e.to_string())?;
            let bind = cfg.bind.clone();
            let gateway = Arc::new(Gateway::from_config(cfg).map_err(|e| e.to_string())?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| format!("{bind}: {e}"))?;
                tracing::info!(addr = %listener.local_addr().map_err(|e| e.to_string())?, "listening");
                tokio::select! {
                    r = margin_gateway::serve(gateway, listener) => r.map_err(|e| e.to_string()),
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })
        }
        Command::HashPassword { username, admin } => {
            let u = UserRecord::create(&username, &read_password()?, admin);
            print!("{}", users_block(&u)?);
            Ok(())
        }
        Command::AddUser { config, username, admin } => {
            let cfg = GatewayConfig::load(&config).map_err(|e| e.to_string())?;
            if cfg.users.iter().any(|u| u.username == username) {
                return Err(format!("user `{username}` already exists"));
            }
            let u = UserRecord::create(&username, &read_password()?, admin);
            let mut f = std::fs::OpenOptions::new().append(true).open(&config).map_err(|e| e.to_string())?;
            write!(f, "\n{}", users_block(&u)?).map_err(|e| e.to_string())?;
            if let Some(dir) = &cfg.data_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let log = TelemetryLog::open(&dir.join(TELEMETRY_FILE)).map_err(|e| e.to_string())?;
                let now = margin_core::clock::Clock::now(&margin_core::clock::SystemClock);
                log.record_at(EventType::UserRegistered, &u.user_id, "cli", now).map_err(|e| e.to_string())?;
            }
            println!("{}", u.user_id);
            Ok(())
        }
        Command::Ingest { config, owner, project, files } => {
            let cfg = GatewayConfig::load(&config).map_err(|e| e.to_string())?;
            let user = cfg.users.iter().find(|u| u.username == owner).ok_or_else(|| format!("unknown user `{owner}`"))?;
            let dir = data_dir(&cfg)?;
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            let store = DocumentStore::open(dir.join(JOURNAL_FILE)).map_err(|e| e.to_string())?;
            let p = store.create_project(&project, &user.user_id).map_err(|e| e.to_string())?;
            println!("project {}", p.project_id);
            for file in files {
                let content = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
                let name = file.file_name().map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned());
                let v = store.put_document(&p.project_id, &name, &content).map_err(|e| e.to_string())?;
                println!("document {} {} v{}", v.document_id, name, v.version_id);
            }
            Ok(())
        }
        Command::Usage { log, now } => {
            let log = TelemetryLog::open(&log).map_err(|e| e.to_string())?;
            let events = log.events();
            let now = now.unwrap_or_else(|| events.iter().map(|e: &TelemetryEvent| e.timestamp).max().unwrap_or(0));
            let summary = log.summary(now);
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("margin: {e}");
            ExitCode::FAILURE
        }
    }
}
