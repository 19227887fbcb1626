use std::sync::Arc;
use std::time::{Duration, Instant};

use lm2m_bootstrap::{BootstrapOptions, BootstrapServer};
use lm2m_core::auth::{make_user, TokenKey};
use lm2m_core::contracts::{AnomalyRecord, ClientRecord, ContractCall, Role};
use lm2m_core::directory::{ClientDirectory, InMemoryDirectory, LedgerDirectory};
use lm2m_core::ledger::{Ledger, LedgerError, ReceiptStatus};
use lm2m_core::wire::RetryPolicy;
use lm2m_dm::{DmOptions, DmServer};
use lm2m_sim::{fleet_endpoint, SimConfig, SimHandle};

use crate::report::Row;
use crate::scenario::{BenchScenario, Profile, ScenarioName};

const REGISTER_TIMEOUT: Duration = Duration::from_secs(30);
const BENCH_PASSWORD: &str = "bench-password";
const PROBE: &str = "bench-probe";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("scenario setup failed: {0}")]
    ScenarioSetupFailed(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn setup(msg: impl Into<String>) -> BenchError {
    BenchError::ScenarioSetupFailed(msg.into())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Runs every size of `s` on a fresh chain, one operation at a time.
pub async fn run_scenario(s: &BenchScenario) -> Result<Vec<Row>, BenchError> {
    let mut rows = Vec::with_capacity(s.sizes.len() * s.repetitions as usize);
    for &size in &s.sizes {
        tracing::info!(scenario = %s.name, size, reps = s.repetitions, "measuring");
        let samples = match s.name {
            ScenarioName::RegisterVsStored => register(s.profile, size, s.repetitions, false).await?,
            ScenarioName::InMemoryBaseline => register(s.profile, size, s.repetitions, true).await?,
            ScenarioName::ClientAddRemove => client_add_remove(s.profile, size, s.repetitions).await?,
            ScenarioName::LoginVsUsers => login_vs_users(s.profile, size, s.repetitions).await?,
            ScenarioName::AnomalyQueryVsCount => anomaly_query(s.profile, size, s.repetitions).await?,
            ScenarioName::AnomalyAdd => anomaly_add(s.profile, size, s.repetitions).await?,
        };
        rows.extend(
            samples
                .into_iter()
                .enumerate()
                .map(|(rep, d)| Row::new(s.name, size, rep as u32, ms(d))),
        );
    }
    Ok(rows)
}

fn fresh_ledger(profile: Profile) -> Arc<Ledger> {
    Arc::new(Ledger::in_memory(profile.chain_config()))
}

/// Submits `calls` and mines them into one block.
async fn preload(ledger: &Arc<Ledger>, calls: Vec<ContractCall>) -> Result<(), BenchError> {
    if calls.is_empty() {
        return Ok(());
    }
    let ids = calls
        .into_iter()
        .map(|c| ledger.submit_call("bench", c))
        .collect::<Result<Vec<_>, _>>()?;
    let l = ledger.clone();
    tokio::task::spawn_blocking(move || l.mine_block())
        .await
        .map_err(|e| setup(e.to_string()))??;
    for id in ids {
        let r = ledger.receipt(id)?.mined().ok_or_else(|| setup("preload not mined"))?;
        if r.status != ReceiptStatus::Applied {
            return Err(setup(format!("preload reverted: {:?}", r.revert_reason)));
        }
    }
    Ok(())
}

fn psk(kind: &str, ep: &str) -> Vec<u8> {
    let mut s = format!("{kind}/{ep}/").into_bytes();
    s.resize(32, b'.');
    s
}

fn record(ep: &str, bootstrap_uri: &str, server_uri: &str) -> ClientRecord {
    ClientRecord {
        endpoint: ep.to_owned(),
        bootstrap_uri: bootstrap_uri.to_owned(),
        server_uri: server_uri.to_owned(),
        bootstrap_psk_identity: format!("{ep}-bs"),
        bootstrap_psk_secret: psk("bs", ep),
        server_psk_identity: format!("{ep}-dm"),
        server_psk_secret: psk("dm", ep),
    }
}

fn anomaly(i: u64) -> AnomalyRecord {
    AnomalyRecord {
        timestamp_ms: 1_700_000_000_000 + i,
        endpoint: fleet_endpoint("bench", i as usize),
        payload: format!("temperature out of range: reading {i} exceeded 40.0 C for 3 samples"),
    }
}

async fn confirm(ledger: &Ledger, call: ContractCall) -> Result<Duration, BenchError> {
    let timeout = ledger.config().block_interval() * 4 + Duration::from_secs(30);
    let started = Instant::now();
    let tx = ledger.submit_call("bench", call)?;
    let receipt = ledger.wait_for_receipt(tx, timeout).await?;
    let elapsed = started.elapsed();
    if receipt.status != ReceiptStatus::Applied {
        return Err(setup(format!("transaction not applied: {:?}", receipt.revert_reason)));
    }
    Ok(elapsed)
}

async fn stop_miner(miner: lm2m_core::ledger::MinerHandle) {
    let _ = tokio::task::spawn_blocking(move || miner.shutdown()).await;
}

/// Bootstrap plus registration of one device, with `size` records held in
/// either the ledger or a plain map.
async fn register(profile: Profile, size: u64, reps: u32, in_memory: bool) -> Result<Vec<Duration>, BenchError> {
    if size == 0 {
        return Err(setup("registration needs at least one stored record"));
    }
    let ledger = fresh_ledger(profile);
    let map = Arc::new(InMemoryDirectory::new());
    let directory: Arc<dyn ClientDirectory> = if in_memory {
        map.clone()
    } else {
        Arc::new(LedgerDirectory::new(ledger.clone()))
    };
    let lo = "127.0.0.1:0".parse().expect("loopback address");
    let bs = BootstrapServer::spawn(
        BootstrapOptions {
            bind: lo,
            retry: RetryPolicy::fast(),
            tap: None,
        },
        directory.clone(),
    )
    .await
    .map_err(|e| setup(format!("bootstrap server: {e}")))?;
    let dm = DmServer::spawn(
        DmOptions {
            udp_bind: lo,
            retry: RetryPolicy::fast(),
            ..DmOptions::default()
        },
        directory,
    )
    .await
    .map_err(|e| setup(format!("dm server: {e}")))?;

    let records: Vec<ClientRecord> = (0..size)
        .map(|i| record(&fleet_endpoint("bench", i as usize), &bs.uri(), &dm.uri()))
        .collect();
    if in_memory {
        records.iter().cloned().for_each(|r| map.insert(r));
    } else {
        preload(&ledger, records.iter().map(ContractCall::add_client).collect()).await?;
    }

    let mut samples = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let rec = &records[rep as usize % records.len()];
        let mut cfg = SimConfig::new(
            &rec.endpoint,
            &rec.bootstrap_uri,
            &rec.bootstrap_psk_identity,
            &rec.bootstrap_psk_secret,
        );
        cfg.retry = RetryPolicy::fast();
        cfg.backoff_initial = Duration::from_millis(100);
        cfg.backoff_max = Duration::from_millis(500);
        let started = Instant::now();
        let sim = SimHandle::spawn(cfg).await.map_err(|e| setup(format!("sim socket: {e}")))?;
        let registered = sim.wait_registered(REGISTER_TIMEOUT).await;
        let elapsed = started.elapsed();
        sim.stop().await;
        registered.ok_or_else(|| setup(format!("{} did not register", rec.endpoint)))?;
        samples.push(elapsed);
    }
    Ok(samples)
}

/// Alternates addClient and removeClient of one probe record; each
/// operation is one sample.
async fn client_add_remove(profile: Profile, size: u64, reps: u32) -> Result<Vec<Duration>, BenchError> {
    let ledger = fresh_ledger(profile);
    let uri = "coaps://127.0.0.1:5684";
    let calls = (0..size)
        .map(|i| ContractCall::add_client(&record(&fleet_endpoint("bench", i as usize), uri, uri)))
        .collect();
    preload(&ledger, calls).await?;
    let miner = ledger.spawn_miner();
    let probe = record(PROBE, uri, uri);
    let mut samples = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let call = if rep % 2 == 0 {
            ContractCall::add_client(&probe)
        } else {
            ContractCall::remove_client(PROBE)
        };
        match confirm(&ledger, call).await {
            Ok(d) => samples.push(d),
            Err(e) => {
                stop_miner(miner).await;
                return Err(e);
            }
        }
    }
    stop_miner(miner).await;
    Ok(samples)
}

async fn login_vs_users(profile: Profile, size: u64, reps: u32) -> Result<Vec<Duration>, BenchError> {
    if size == 0 {
        return Err(setup("login needs at least one stored user"));
    }
    let ledger = fresh_ledger(profile);
    let calls = (0..size)
        .map(|i| {
            let u = make_user(&format!("user{i}"), &format!("user{i}@bench.example"), BENCH_PASSWORD, Role::User);
            ContractCall::add_user(&u)
        })
        .collect();
    preload(&ledger, calls).await?;
    let tokens = TokenKey::new(b"bench-token-secret-bench-token-s");
    let ttl = Duration::from_secs(60);
    let mut samples = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let who = format!("user{}", u64::from(rep) % size);
        let started = Instant::now();
        lm2m_mgmt::login(&ledger, &tokens, ttl, &who, BENCH_PASSWORD)
            .await
            .map_err(|e| setup(format!("login {who}: {e}")))?;
        samples.push(started.elapsed());
    }
    Ok(samples)
}

async fn anomaly_query(profile: Profile, size: u64, reps: u32) -> Result<Vec<Duration>, BenchError> {
    let ledger = fresh_ledger(profile);
    preload(&ledger, (0..size).map(|i| ContractCall::add_anomaly(&anomaly(i))).collect()).await?;
    let call = ContractCall::get_all_anomalies();
    let mut samples = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let started = Instant::now();
        let all: Vec<AnomalyRecord> = ledger.query_as(&call).await?;
        samples.push(started.elapsed());
        if all.len() as u64 != size {
            return Err(setup(format!("expected {size} anomalies, read {}", all.len())));
        }
    }
    Ok(samples)
}

async fn anomaly_add(profile: Profile, size: u64, reps: u32) -> Result<Vec<Duration>, BenchError> {
    let ledger = fresh_ledger(profile);
    preload(&ledger, (0..size).map(|i| ContractCall::add_anomaly(&anomaly(i))).collect()).await?;
    let miner = ledger.spawn_miner();
    let mut samples = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        match confirm(&ledger, ContractCall::add_anomaly(&anomaly(size + u64::from(rep)))).await {
            Ok(d) => samples.push(d),
            Err(e) => {
                stop_miner(miner).await;
                return Err(e);
            }
        }
    }
    stop_miner(miner).await;
    Ok(samples)
}
