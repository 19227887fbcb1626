use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lm2m_core::wire::RetryPolicy;
use lm2m_sim::control::{self, ControlCommand};
use lm2m_sim::{parse_psk_file, spawn_fleet, FleetConfig};
use tracing_subscriber::EnvFilter;

/// Runs and controls a fleet of simulated LwM2M devices.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Control address of the running fleet.
    #[arg(long, global = true, env = "LM2M_SIM_CONTROL", default_value = "127.0.0.1:5790")]
    control: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a fleet in the foreground.
    Spawn {
        /// Number of devices.
        #[arg(long)]
        n: usize,
        /// Endpoint prefix; devices are named <prefix>-0001...
        #[arg(long, default_value = "sim")]
        prefix: String,
        #[arg(long, default_value = "coap://127.0.0.1:5783")]
        bootstrap_uri: String,
        /// One `endpoint,identity,hex-secret` line per device.
        #[arg(long)]
        psk_file: PathBuf,
        /// Registration lifetime in seconds.
        #[arg(long, default_value_t = lm2m_sim::DEFAULT_LIFETIME_S)]
        lifetime: u64,
        /// Temperature sampling and notification period in seconds.
        #[arg(long, default_value_t = 2.0)]
        temp_period: f64,
    },
    /// Reboot one device of the running fleet.
    ExecReboot { endpoint: String },
    /// Trigger a registration update on one device.
    ExecUpdate { endpoint: String },
    /// Print the phase and registration id of every device.
    Status,
    /// Deregister every device and stop the fleet.
    Stop,
}

async fn remote(addr: &str, cmd: ControlCommand) -> anyhow::Result<()> {
    let lines = control::send(addr, &cmd)
        .await
        .with_context(|| format!("contacting fleet at {addr}"))?;
    for l in &lines {
        println!("{l}");
    }
    match lines.last() {
        Some(l) if l == "ok" => Ok(()),
        Some(l) => bail!("{l}"),
        None => bail!("fleet closed the connection"),
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Spawn {
            n,
            prefix,
            bootstrap_uri,
            psk_file,
            lifetime,
            temp_period,
        } => {
            let text = std::fs::read_to_string(&psk_file)
                .with_context(|| format!("reading {}", psk_file.display()))?;
            let creds = parse_psk_file(&text).with_context(|| format!("parsing {}", psk_file.display()))?;
            let mut cfg = FleetConfig::new(&bootstrap_uri, creds);
            cfg.lifetime_s = lifetime;
            cfg.temp_period = Duration::from_secs_f64(temp_period);
            cfg.retry = RetryPolicy::default();
            let listener = tokio::net::TcpListener::bind(&cli.control)
                .await
                .with_context(|| format!("binding control address {}", cli.control))?;
            let fleet = Arc::new(spawn_fleet(n, &prefix, &cfg).await?);
            tracing::info!(devices = n, control = %cli.control, "fleet running");
            tokio::select! {
                r = control::serve(listener, fleet.clone()) => r?,
                _ = tokio::signal::ctrl_c() => {}
            }
            tracing::info!("stopping fleet");
            fleet.stop().await;
            Ok(())
        }
        Command::ExecReboot { endpoint } => remote(&cli.control, ControlCommand::Reboot(endpoint)).await,
        Command::ExecUpdate { endpoint } => remote(&cli.control, ControlCommand::Update(endpoint)).await,
        Command::Status => remote(&cli.control, ControlCommand::Status).await,
        Command::Stop => remote(&cli.control, ControlCommand::Stop).await,
    }
}
