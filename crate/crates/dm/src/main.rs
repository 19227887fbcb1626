use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use lm2m_core::auth::{load_or_create_secret, TokenKey};
use lm2m_core::directory::LedgerDirectory;
use lm2m_core::ledger::{ChainConfig, Ledger};
use lm2m_dm::api::{router, ApiState};
use lm2m_dm::{DmOptions, DmServer};
use tracing_subscriber::EnvFilter;

/// LwM2M device-management server with a token-gated REST API.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// UDP address for devices.
    #[arg(long, env = "LM2M_DM_UDP_BIND", default_value = "127.0.0.1:5683")]
    udp_bind: SocketAddr,
    /// HTTP address for the REST API.
    #[arg(long, env = "LM2M_DM_HTTP_BIND", default_value = "127.0.0.1:8081")]
    http_bind: SocketAddr,
    /// Chain journal written by the management service.
    #[arg(long, env = "LM2M_DM_CHAIN")]
    chain: PathBuf,
    /// Optional chain settings file (key=value).
    #[arg(long, env = "LM2M_DM_CHAIN_CONFIG")]
    chain_config: Option<PathBuf>,
    /// Token secret shared with the management service.
    #[arg(long, env = "LM2M_DM_TOKEN_SECRET_FILE", default_value = "data/token.secret")]
    token_secret_file: PathBuf,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = ChainConfig::load(args.chain_config.as_deref()).context("chain settings")?;
    let ledger = Ledger::open_follower(&args.chain, config)
        .with_context(|| format!("opening chain journal {}", args.chain.display()))?;
    let secret = load_or_create_secret(&args.token_secret_file)
        .with_context(|| format!("token secret {}", args.token_secret_file.display()))?;

    let opts = DmOptions {
        udp_bind: args.udp_bind,
        ..DmOptions::default()
    };
    let server = DmServer::spawn(opts, Arc::new(LedgerDirectory::new(Arc::new(ledger))))
        .await
        .with_context(|| format!("binding {}", args.udp_bind))?;
    tracing::info!(addr = %server.local_addr(), "device endpoint listening");

    let app = router(ApiState {
        core: server.core().clone(),
        tokens: TokenKey::new(&secret),
    });
    let listener = tokio::net::TcpListener::bind(args.http_bind)
        .await
        .with_context(|| format!("binding {}", args.http_bind))?;
    tracing::info!(addr = %listener.local_addr()?, "REST API listening");
    tokio::select! {
        r = axum::serve(listener, app) => r.context("http server")?,
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        _ = server.join() => {}
    }
    Ok(())
}
