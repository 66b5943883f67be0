use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use xapp_store_core::archive::PackageArchive;
use xapp_store_core::pseudo_ric::DEFAULT_TICK_MS;
use xapp_store_core::store::{Store, StoreConfig, StoreError};
use xapp_store_gateway::client::{ClientError, StoreClient};
use xapp_store_gateway::{serve, AppState, ScenarioDefaults};

const EXIT_API: u8 = 1;
/// Files, sockets or the data directory could not be used.
const EXIT_ENV: u8 = 3;

#[derive(Parser)]
#[command(name = "xapp-store", version, about = "xApp store server and client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TICK_MS as u32)]
        tick_ms: u32,
        /// Seed for scenarios uploaded without one.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Salvage a damaged data directory instead of refusing to start.
        #[arg(long)]
        recover: bool,
        /// Directory of dashboard assets to serve at `/`.
        #[arg(long)]
        dashboard_dir: Option<PathBuf>,
    },
    /// Upload a package archive and print the record id.
    Submit {
        archive: PathBuf,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Print the latest conformance report of a record.
    Report {
        id: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Build a package archive from a directory holding manifest.json,
    /// behavior.json and optional assets/.
    Pack {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn client_failure(e: ClientError) -> ExitCode {
    match e {
        ClientError::Api(api) => fail(
            EXIT_API,
            format!("{} {}: {}", api.status, api.code, api.detail),
        ),
        e @ ClientError::Transport { .. } => fail(EXIT_ENV, e),
    }
}

fn open_store(dir: &Path, config: StoreConfig, recover: bool) -> Result<Store, String> {
    std::fs::create_dir_all(dir)
        .map_err(|e| format!("cannot create data dir {}: {e}", dir.display()))?;
    if recover {
        let (store, report) = Store::open_recovering(dir, config).map_err(|e| e.to_string())?;
        if report != Default::default() {
            tracing::warn!(?report, "data directory was repaired");
        }
        return Ok(store);
    }
    Store::open(dir, config).map_err(|e| match e {
        StoreError::Persist(p) => format!("{p} (start with --recover to salvage what is readable)"),
        e => e.to_string(),
    })
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
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

#[allow(clippy::too_many_arguments)]
async fn run_serve(
    host: String,
    port: u16,
    data_dir: PathBuf,
    tick_ms: u32,
    seed: u64,
    recover: bool,
    dashboard_dir: Option<PathBuf>,
) -> ExitCode {
    if tick_ms == 0 {
        return fail(2, "--tick-ms must be positive");
    }
    let config = StoreConfig {
        tick_ms: u64::from(tick_ms),
        ..StoreConfig::default()
    };
    let store = match open_store(&data_dir, config, recover) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_ENV, e),
    };
    let listener = match tokio::net::TcpListener::bind((host.as_str(), port)).await {
        Ok(l) => l,
        Err(e) => return fail(EXIT_ENV, format!("cannot bind {host}:{port}: {e}")),
    };
    let bound = match listener.local_addr() {
        Ok(a) => a,
        Err(e) => return fail(EXIT_ENV, e),
    };
    println!("{}", bound.port());
    let _ = std::io::stdout().flush();
    tracing::info!(%bound, data_dir = %data_dir.display(), "serving");

    let defaults = ScenarioDefaults {
        seed,
        tick_ms: u64::from(tick_ms),
    };
    let state = AppState::new(store, defaults);
    match serve(listener, state, dashboard_dir, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_ENV, e),
    }
}

async fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Serve {
            port,
            host,
            data_dir,
            tick_ms,
            seed,
            recover,
            dashboard_dir,
        } => run_serve(host, port, data_dir, tick_ms, seed, recover, dashboard_dir).await,
        Command::Submit { archive, server } => {
            let bytes = match std::fs::read(&archive) {
                Ok(b) => b,
                Err(e) => return fail(EXIT_ENV, format!("cannot read {}: {e}", archive.display())),
            };
            match StoreClient::new(&server).submit(bytes).await {
                Ok(summary) => {
                    println!("{}", summary.id);
                    ExitCode::SUCCESS
                }
                Err(e) => client_failure(e),
            }
        }
        Command::Report { id, server } => match StoreClient::new(&server).report(&id).await {
            Ok(report) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
                ExitCode::SUCCESS
            }
            Err(e) => client_failure(e),
        },
        Command::Pack { dir, output } => {
            let pkg = match PackageArchive::from_dir(&dir) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_ENV, format!("{}: {e}", dir.display())),
            };
            if let Err(e) = std::fs::write(&output, pkg.pack()) {
                return fail(EXIT_ENV, format!("cannot write {}: {e}", output.display()));
            }
            println!("{}", pkg.record_id());
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail(EXIT_ENV, e),
    };
    rt.block_on(run(cli))
}
