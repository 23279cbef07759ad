use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use dlms_api::{open_registry, AppState, ServerConfig};
use tracing_subscriber::EnvFilter;

/// Departmental records service.
#[derive(Debug, Parser)]
#[command(name = "dlms-server", version)]
struct Args {
    /// TOML configuration file.
    #[arg(long, env = "DLMS_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `bind` from the configuration.
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    /// Overrides `data_dir` from the configuration.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn load(args: &Args) -> Result<ServerConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ServerConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ServerConfig::default(),
    };
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    if let Some(dir) = &args.data_dir {
        config.data_dir = Some(dir.clone());
    }
    Ok(config)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let password = config
        .bootstrap
        .as_ref()
        .and_then(|b| std::env::var(&b.password_env).ok());
    if config.bootstrap.is_some() && password.is_none() {
        tracing::warn!("bootstrap configured but its password variable is unset; skipping");
    }
    let registry = match open_registry(&config, password.as_deref()) {
        Ok(r) => Arc::new(r),
        Err(e) => {
            eprintln!("cannot open store: {e}");
            return ExitCode::from(1);
        }
    };
    if config.data_dir.is_none() {
        tracing::warn!("no data_dir configured; records live in memory only");
    }
    let listener = match tokio::net::TcpListener::bind(config.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {}: {e}", config.bind);
            return ExitCode::from(1);
        }
    };
    tracing::info!(addr = %config.bind, admin_path = %config.admin_prefix(), "listening");
    let state = AppState::new(registry.clone(), config);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = dlms_api::serve(listener, state, shutdown).await {
        eprintln!("server error: {e}");
        return ExitCode::from(1);
    }
    if let Err(e) = registry.store().checkpoint() {
        eprintln!("checkpoint on shutdown failed: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
