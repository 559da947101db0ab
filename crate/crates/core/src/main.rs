use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::Response;
use axum::Router;
use clap::{Parser, Subcommand};
use tokio::sync::watch;

use moth_fed::api::Server;
use moth_fed::cli::{self, CliError};
use moth_fed::config::Config;
use moth_fed::http::HttpRequest;
use moth_fed::transport::{HttpTransport, SystemClock};

/// Largest request body accepted by `serve`.
const MAX_BODY: usize = 1 << 20;

#[derive(Parser)]
#[command(name = "moth-fed", version, about = "Mastodon-compatible ActivityPub server")]
struct Cli {
    /// JSON config file. MOTH_DOMAIN, MOTH_PORT and MOTH_STORE override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve HTTP and run the delivery queue until SIGTERM or ctrl-c.
    Serve,
    /// Manage local users.
    User {
        #[command(subcommand)]
        action: UserAction,
    },
    /// Walk WebFinger, actor fetch and key checks for a remote handle.
    Probe { handle: String },
    /// Generate a fresh keypair for a local user.
    Keygen { name: String },
}

#[derive(Subcommand)]
enum UserAction {
    /// Create a local user and print its API token.
    Create { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = Config::load(cli.config.as_deref(), &|k| std::env::var(k).ok())?;
    match cli.command {
        Command::Serve => serve(config)?,
        Command::User {
            action: UserAction::Create { name },
        } => {
            let created = cli::user_create(&config, &name)?;
            println!("id: {}", created.account.id.0);
            println!("actor: {}", created.account.actor_uri);
            println!("token: {}", created.token);
        }
        Command::Probe { handle } => {
            let transport = cli::probe_transport(&config);
            let report = cli::probe(&handle, &transport, config.test_mode);
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Keygen { name } => {
            let key_id = cli::keygen(&config, &name)?;
            println!("new key: {key_id}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(config: Config) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(serve_async(config))
}

async fn serve_async(config: Config) -> Result<(), CliError> {
    let store = Arc::new(cli::open_store(&config)?);
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| CliError::BindFailed(format!("{}:{}: {e}", config.bind, config.port)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::BindFailed(format!("{addr}: {e}")))?;
    let transport = HttpTransport::new(Duration::from_secs(config.request_timeout_secs));
    let server = Arc::new(Server::new(config, store, Arc::new(transport), Arc::new(SystemClock), None));
    log::info!("listening on {} as {}", listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?, server.base_url());

    let (stop_tx, stop_rx) = watch::channel(false);
    let queue = tokio::spawn(run_queue(server.clone(), stop_rx));

    let app = Router::new().fallback(handle).with_state(server);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    // Handlers have drained; let the queue finish its current pass.
    let _ = stop_tx.send(true);
    let _ = queue.await;
    log::info!("stopped");
    Ok(())
}

async fn run_queue(server: Arc<Server>, mut stop: watch::Receiver<bool>) {
    let mut tick = tokio::time::interval(Duration::from_secs(1));
    loop {
        tokio::select! {
            _ = tick.tick() => {}
            _ = stop.changed() => return,
        }
        let s = server.clone();
        match tokio::task::spawn_blocking(move || s.process_queue()).await {
            Ok(Ok(report)) if report.attempted > 0 => log::info!("queue: {report:?}"),
            Ok(Ok(_)) => {}
            Ok(Err(e)) => log::error!("queue: {e}"),
            Err(e) => log::error!("queue task panicked: {e}"),
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

async fn handle(State(server): State<Arc<Server>>, request: Request) -> Response {
    let (parts, body) = request.into_parts();
    let body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return plain(StatusCode::PAYLOAD_TOO_LARGE, e.to_string()),
    };
    let target = parts
        .uri
        .path_and_query()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| "/".into());
    let mut req = HttpRequest::new(parts.method.as_str(), &target);
    for (name, value) in &parts.headers {
        if let Ok(v) = value.to_str() {
            req.headers.set(name.as_str(), v);
        }
    }
    req.body = body.to_vec();

    let resp = match tokio::task::spawn_blocking(move || server.handle(req)).await {
        Ok(r) => r,
        Err(e) => return plain(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let mut out = Response::new(Body::from(resp.body));
    *out.status_mut() = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    for (name, value) in resp.headers.iter() {
        if name.eq_ignore_ascii_case("content-length") {
            continue;
        }
        if let (Ok(n), Ok(v)) = (HeaderName::try_from(name), HeaderValue::try_from(value)) {
            out.headers_mut().append(n, v);
        }
    }
    out
}

fn plain(status: StatusCode, text: String) -> Response {
    let mut out = Response::new(Body::from(text));
    *out.status_mut() = status;
    out
}
