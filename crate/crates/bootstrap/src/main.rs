use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Parser;
use lm2m_bootstrap::{BootstrapOptions, BootstrapServer};
use lm2m_core::contracts::CLIENT_STORE;
use lm2m_core::directory::LedgerDirectory;
use lm2m_core::ledger::{ChainConfig, Ledger};
use tracing_subscriber::EnvFilter;

/// LwM2M bootstrap server backed by the ClientStore contract.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// UDP address to listen on.
    #[arg(long, env = "LM2M_BS_BIND", default_value = "127.0.0.1:5783")]
    bind: SocketAddr,
    /// Chain journal written by the management service.
    #[arg(long, env = "LM2M_BS_CHAIN")]
    chain: PathBuf,
    /// Optional chain settings file (key=value).
    #[arg(long, env = "LM2M_BS_CHAIN_CONFIG")]
    chain_config: Option<PathBuf>,
    /// Name of the credential contract.
    #[arg(long, env = "LM2M_BS_CONTRACT", default_value = CLIENT_STORE)]
    contract: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    if args.contract != CLIENT_STORE {
        bail!("unsupported credential contract {:?}; only {CLIENT_STORE} is deployed", args.contract);
    }
    let config = ChainConfig::load(args.chain_config.as_deref()).context("chain settings")?;
    let ledger = Ledger::open_follower(&args.chain, config)
        .with_context(|| format!("opening chain journal {}", args.chain.display()))?;
    let directory = Arc::new(LedgerDirectory::new(Arc::new(ledger)));
    let opts = BootstrapOptions {
        bind: args.bind,
        ..BootstrapOptions::default()
    };
    let server = BootstrapServer::spawn(opts, directory)
        .await
        .with_context(|| format!("binding {}", args.bind))?;
    tracing::info!(addr = %server.local_addr(), "bootstrap server listening");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        _ = server.join() => {}
    }
    Ok(())
}
