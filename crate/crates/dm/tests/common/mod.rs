#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use lm2m_bootstrap::{BootstrapOptions, BootstrapServer};
use lm2m_core::contracts::{ClientRecord, ContractCall};
use lm2m_core::directory::{ClientDirectory, LedgerDirectory};
use lm2m_core::ledger::{ChainConfig, Ledger};
use lm2m_core::wire::RetryPolicy;
use lm2m_dm::{DmOptions, DmServer};
use lm2m_sim::{SimConfig, SimHandle};

pub const REGISTER_TIMEOUT: Duration = Duration::from_secs(10);

pub fn secret(kind: &str, ep: &str) -> Vec<u8> {
    let mut s = format!("{kind}:{ep}:").into_bytes();
    s.resize(32, b'#');
    s
}

/// Ledger, bootstrap server and DM server wired together on loopback.
pub struct Stack {
    pub ledger: Arc<Ledger>,
    pub bs: BootstrapServer,
    pub dm: DmServer,
}

impl Stack {
    pub async fn start() -> Self {
        let ledger = Arc::new(Ledger::in_memory(ChainConfig::instant()));
        let dir: Arc<dyn ClientDirectory> = Arc::new(LedgerDirectory::new(ledger.clone()));
        Self::with_directories(ledger, dir.clone(), dir).await
    }

    pub async fn with_directories(
        ledger: Arc<Ledger>,
        bootstrap_dir: Arc<dyn ClientDirectory>,
        dm_dir: Arc<dyn ClientDirectory>,
    ) -> Self {
        let lo = "127.0.0.1:0".parse().unwrap();
        let bs = BootstrapServer::spawn(
            BootstrapOptions {
                bind: lo,
                retry: RetryPolicy::fast(),
                tap: None,
            },
            bootstrap_dir,
        )
        .await
        .unwrap();
        let dm = DmServer::spawn(
            DmOptions {
                udp_bind: lo,
                retry: RetryPolicy::fast(),
                ..DmOptions::default()
            },
            dm_dir,
        )
        .await
        .unwrap();
        Self { ledger, bs, dm }
    }

    pub fn record(&self, ep: &str) -> ClientRecord {
        ClientRecord {
            endpoint: ep.into(),
            bootstrap_uri: self.bs.uri(),
            server_uri: self.dm.uri(),
            bootstrap_psk_identity: format!("{ep}-bs"),
            bootstrap_psk_secret: secret("bs", ep),
            server_psk_identity: format!("{ep}-dm"),
            server_psk_secret: secret("dm", ep),
        }
    }

    /// Stores records for `eps` and mines them.
    pub fn add_clients(&self, eps: &[&str]) {
        for ep in eps {
            self.ledger
                .submit_call("admin", ContractCall::add_client(&self.record(ep)))
                .unwrap();
        }
        self.ledger.mine_block().unwrap();
    }

    pub fn sim_config(&self, ep: &str) -> SimConfig {
        let mut c = SimConfig::new(ep, &self.bs.uri(), &format!("{ep}-bs"), &secret("bs", ep));
        c.retry = RetryPolicy::fast();
        c.backoff_initial = Duration::from_millis(100);
        c.backoff_max = Duration::from_millis(500);
        c.temp_period = Duration::from_millis(500);
        c
    }

    /// Starts a sim for `ep` and waits for its registration.
    pub async fn registered_sim(&self, ep: &str) -> SimHandle {
        let sim = SimHandle::spawn(self.sim_config(ep)).await.unwrap();
        sim.wait_registered(REGISTER_TIMEOUT)
            .await
            .unwrap_or_else(|| panic!("{ep} did not register: {:?}", sim.status()));
        sim
    }

    pub fn listed(&self) -> Vec<String> {
        self.dm.core().clients().into_iter().map(|e| e.endpoint).collect()
    }
}

/// Polls `f` until it holds or `timeout` passes.
pub async fn eventually(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    loop {
        if f() {
            return true;
        }
        if tokio::time::Instant::now() >= deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
