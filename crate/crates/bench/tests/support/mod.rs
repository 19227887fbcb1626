#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use lm2m_bootstrap::{BootstrapOptions, BootstrapServer};
use lm2m_core::auth::TokenKey;
use lm2m_core::contracts::{ClientRecord, ContractCall};
use lm2m_core::directory::{ClientDirectory, LedgerDirectory};
use lm2m_core::ledger::{ChainConfig, Ledger, MinerHandle};
use lm2m_core::wire::RetryPolicy;
use lm2m_dm::{DmOptions, DmServer};
use lm2m_mgmt::{CorsOrigins, MgmtState};
use lm2m_sim::{SimConfig, SimHandle};
use reqwest::{Method, StatusCode};
use serde_json::Value;

pub fn psk(kind: &str, ep: &str) -> Vec<u8> {
    let mut s = format!("{kind}:{ep}:").into_bytes();
    s.resize(32, b'~');
    s
}

async fn serve(app: axum::Router) -> (SocketAddr, tokio::task::JoinHandle<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind http");
    let addr = listener.local_addr().expect("local addr");
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    (addr, task)
}

/// Ledger, management service, bootstrap server and DM server on loopback,
/// sharing one token key.
pub struct Deployment {
    pub ledger: Arc<Ledger>,
    pub bs: BootstrapServer,
    pub dm: DmServer,
    pub mgmt_addr: SocketAddr,
    pub api_addr: SocketAddr,
    pub http: reqwest::Client,
    pub tokens: TokenKey,
    miner: Option<MinerHandle>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl Drop for Deployment {
    fn drop(&mut self) {
        self.tasks.iter().for_each(|t| t.abort());
        if let Some(m) = self.miner.take() {
            // the miner thread may be mid-block
            std::thread::spawn(move || m.shutdown());
        }
    }
}

impl Deployment {
    pub async fn start(config: ChainConfig) -> anyhow::Result<Self> {
        let ledger = Arc::new(Ledger::in_memory(config));
        let dir: Arc<dyn ClientDirectory> = Arc::new(LedgerDirectory::new(ledger.clone()));
        Self::with_directories(ledger, dir.clone(), dir).await
    }

    pub async fn with_directories(
        ledger: Arc<Ledger>,
        bootstrap_dir: Arc<dyn ClientDirectory>,
        dm_dir: Arc<dyn ClientDirectory>,
    ) -> anyhow::Result<Self> {
        let lo: SocketAddr = "127.0.0.1:0".parse()?;
        let miner = ledger.spawn_miner();
        let bs = BootstrapServer::spawn(
            BootstrapOptions {
                bind: lo,
                retry: RetryPolicy::fast(),
                tap: None,
            },
            bootstrap_dir,
        )
        .await?;
        let dm = DmServer::spawn(
            DmOptions {
                udp_bind: lo,
                retry: RetryPolicy::fast(),
                ..DmOptions::default()
            },
            dm_dir,
        )
        .await?;
        let tokens = TokenKey::new(b"acceptance-token-secret-32-bytes");
        let mgmt = lm2m_mgmt::router(
            MgmtState {
                ledger: ledger.clone(),
                tokens: tokens.clone(),
                token_ttl: Duration::from_secs(600),
            },
            &CorsOrigins::Any,
        );
        let api = lm2m_dm::api::router(lm2m_dm::api::ApiState {
            core: dm.core().clone(),
            tokens: tokens.clone(),
        });
        let (mgmt_addr, t1) = serve(mgmt).await;
        let (api_addr, t2) = serve(api).await;
        Ok(Self {
            ledger,
            bs,
            dm,
            mgmt_addr,
            api_addr,
            http: reqwest::Client::new(),
            tokens,
            miner: Some(miner),
            tasks: vec![t1, t2],
        })
    }

    pub fn record(&self, ep: &str) -> ClientRecord {
        ClientRecord {
            endpoint: ep.into(),
            bootstrap_uri: self.bs.uri(),
            server_uri: self.dm.uri(),
            bootstrap_psk_identity: format!("{ep}-bs"),
            bootstrap_psk_secret: psk("bs", ep),
            server_psk_identity: format!("{ep}-dm"),
            server_psk_secret: psk("dm", ep),
        }
    }

    /// Stores a record directly on the ledger and waits for its receipt.
    pub async fn store(&self, record: &ClientRecord) -> anyhow::Result<()> {
        let tx = self.ledger.submit_call("operator", ContractCall::add_client(record))?;
        let timeout = self.ledger.config().block_interval() * 4 + Duration::from_secs(10);
        self.ledger.wait_for_receipt(tx, timeout).await?;
        Ok(())
    }

    pub fn sim_config(&self, record: &ClientRecord) -> SimConfig {
        let mut cfg = SimConfig::new(
            &record.endpoint,
            &record.bootstrap_uri,
            &record.bootstrap_psk_identity,
            &record.bootstrap_psk_secret,
        );
        cfg.retry = RetryPolicy::fast();
        cfg.backoff_initial = Duration::from_millis(100);
        cfg.backoff_max = Duration::from_millis(500);
        cfg
    }

    pub async fn registered_sim(&self, ep: &str) -> anyhow::Result<SimHandle> {
        let rec = self.record(ep);
        self.store(&rec).await?;
        let sim = SimHandle::spawn(self.sim_config(&rec)).await?;
        sim.wait_registered(Duration::from_secs(10))
            .await
            .with_context(|| format!("{ep} did not register"))?;
        Ok(sim)
    }

    pub fn mgmt(&self, path: &str) -> String {
        format!("http://{}{}", self.mgmt_addr, path)
    }

    pub fn api(&self, path: &str) -> String {
        format!("http://{}{}", self.api_addr, path)
    }

    pub async fn call(
        &self,
        method: Method,
        url: String,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> anyhow::Result<(StatusCode, Value)> {
        let mut req = self.http.request(method, url).timeout(Duration::from_secs(10));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let is_stream = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .is_some_and(|v| v.as_bytes().starts_with(b"text/event-stream"));
        // an event stream never ends; the status is all that matters here
        let body = if is_stream { Value::Null } else { resp.json().await.unwrap_or(Value::Null) };
        Ok((status, body))
    }

    pub async fn login(&self, wildcard: &str, password: &str) -> anyhow::Result<String> {
        let body = serde_json::json!({ "wildcard": wildcard, "password": password });
        let (status, body) = self.call(Method::POST, self.mgmt("/mgmt/login"), None, Some(&body)).await?;
        if status != StatusCode::OK {
            bail!("login {wildcard}: {status} {body}");
        }
        Ok(body["token"].as_str().context("token in login body")?.to_owned())
    }

    /// Polls the transaction route until the receipt is in.
    pub async fn settle(&self, token: &str, accepted: &Value, timeout: Duration) -> anyhow::Result<(StatusCode, Value)> {
        let tx = accepted["tx_id"].as_str().context("tx_id in 202 body")?;
        let deadline = Instant::now() + timeout;
        loop {
            let (status, body) = self.call(Method::GET, self.mgmt(&format!("/mgmt/tx/{tx}")), Some(token), None).await?;
            if status != StatusCode::ACCEPTED {
                return Ok((status, body));
            }
            if Instant::now() > deadline {
                bail!("transaction {tx} still pending after {timeout:?}");
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }
}

pub async fn eventually<F, Fut>(timeout: Duration, mut f: F) -> bool
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = bool>,
{
    let deadline = Instant::now() + timeout;
    loop {
        if f().await {
            return true;
        }
        if Instant::now() > deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
}
