use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use lm2m_core::auth::{load_or_create_secret, TokenKey, DEFAULT_TOKEN_TTL};
use lm2m_core::ledger::{ChainConfig, Ledger};
use lm2m_mgmt::{bootstrap_admin, router, CorsOrigins, MgmtState, SeedAdmin, SeedOutcome};
use tracing_subscriber::EnvFilter;

/// Management service: login, device and user administration, anomalies.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// HTTP address to listen on.
    #[arg(long, env = "LM2M_MGMT_HTTP_BIND", default_value = "127.0.0.1:8080")]
    http_bind: SocketAddr,
    /// Chain journal; this service is its only writer.
    #[arg(long, env = "LM2M_MGMT_CHAIN", default_value = "data/chain.journal")]
    chain: PathBuf,
    /// Optional chain settings file (key=value).
    #[arg(long, env = "LM2M_MGMT_CHAIN_CONFIG")]
    chain_config: Option<PathBuf>,
    /// Token secret, created on first start.
    #[arg(long, env = "LM2M_MGMT_TOKEN_SECRET_FILE", default_value = "data/token.secret")]
    token_secret_file: PathBuf,
    /// First-run administrator (username, email, password as key=value).
    #[arg(long, env = "LM2M_MGMT_SEED_ADMIN")]
    seed_admin: Option<PathBuf>,
    /// Allowed CORS origins: `*` or a comma-separated list.
    #[arg(long, env = "LM2M_MGMT_CORS_ORIGINS", default_value = "*")]
    cors_origins: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = ChainConfig::load(args.chain_config.as_deref()).context("chain settings")?;
    if let Some(dir) = args.chain.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let ledger = Arc::new(
        Ledger::open(&args.chain, config).with_context(|| format!("opening chain journal {}", args.chain.display()))?,
    );
    let _miner = ledger.spawn_miner();
    let secret = load_or_create_secret(&args.token_secret_file)
        .with_context(|| format!("token secret {}", args.token_secret_file.display()))?;

    if let Some(path) = &args.seed_admin {
        let seed = SeedAdmin::load(path).with_context(|| format!("seed admin file {}", path.display()))?;
        let wait = ledger.config().block_interval() * 4 + Duration::from_secs(30);
        match bootstrap_admin(&ledger, &seed, wait).await {
            Ok(SeedOutcome::Created) => tracing::info!(username = %seed.username, "administrator created"),
            Ok(SeedOutcome::AlreadySeeded) => tracing::info!("administrator already present"),
            Err(e) => tracing::warn!(error = %e, "administrator not seeded"),
        }
    }

    let state = MgmtState {
        ledger: ledger.clone(),
        tokens: TokenKey::new(&secret),
        token_ttl: DEFAULT_TOKEN_TTL,
    };
    let app = router(state, &CorsOrigins::parse(&args.cors_origins));
    let listener = tokio::net::TcpListener::bind(args.http_bind)
        .await
        .with_context(|| format!("binding {}", args.http_bind))?;
    tracing::info!(addr = %listener.local_addr()?, "management service listening");
    tokio::select! {
        r = axum::serve(listener, app) => r.context("http server")?,
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}
