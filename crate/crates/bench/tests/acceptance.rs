//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. An optional argument filters criteria by substring.

mod support;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context};
use futures::StreamExt;
use lm2m_bench::{report, run_scenario, BenchScenario, Profile, Row, ScenarioName};
use lm2m_core::auth::make_user;
use lm2m_core::contracts::{AnomalyRecord, ClientRecord, ContractCall, Role, UserRecord};
use lm2m_core::directory::{ClientDirectory, InMemoryDirectory, LedgerDirectory};
use lm2m_core::ledger::{journal, verify_journal_bytes, ChainConfig, Ledger, ReceiptStatus};
use lm2m_core::wire::{Code, Message, MessageType, Observe};
use lm2m_mgmt::{bootstrap_admin, SeedAdmin};
use lm2m_sim::SimHandle;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use support::{eventually, Deployment};

type Check = Pin<Box<dyn Future<Output = anyhow::Result<String>> + Send>>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Check>);

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("tokio runtime");
    let failures = runtime.block_on(run_all(filter));
    drop(runtime);
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

async fn run_all(filter: Option<String>) -> usize {
    let wanted = |name: &str| filter.as_deref().map_or(true, |f| name.contains(f));
    // the slow-chain half of the latency criterion sleeps for minutes; start it early
    let slow_chain = wanted("latency_trends").then(|| tokio::spawn(slow_chain_add_remove()));

    let criteria: Vec<Criterion> = vec![
        ("end_to_end_provisioning", Box::new(|| Box::pin(end_to_end_provisioning()))),
        ("contract_oracle_equivalence", Box::new(|| Box::pin(run_blocking(contract_oracle_equivalence)))),
        ("tamper_evidence", Box::new(|| Box::pin(run_blocking(tamper_evidence)))),
        ("revert_atomicity", Box::new(|| Box::pin(run_blocking(revert_atomicity)))),
        ("server_psk_double_check", Box::new(|| Box::pin(server_psk_double_check()))),
        ("latency_trends", Box::new(move || Box::pin(latency_trends(slow_chain)))),
        ("authz_matrix_and_login_indistinguishability", Box::new(|| Box::pin(authz_matrix()))),
        ("codec_fuzz", Box::new(|| Box::pin(run_blocking(codec_fuzz)))),
        ("observe_stream", Box::new(|| Box::pin(observe_stream()))),
    ];

    let mut failures = 0;
    for (name, check) in criteria {
        if !wanted(name) {
            continue;
        }
        let started = Instant::now();
        let outcome = match tokio::spawn(check()).await {
            Ok(r) => r,
            Err(e) if e.is_panic() => Err(anyhow::anyhow!("panicked: {}", panic_message(e.into_panic()))),
            Err(e) => Err(e.into()),
        };
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {name} ({secs:.1} s): {e:#}");
            }
        }
    }
    failures
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

async fn run_blocking(f: fn() -> anyhow::Result<String>) -> anyhow::Result<String> {
    tokio::task::spawn_blocking(f).await?
}

// ---- end-to-end provisioning -------------------------------------------------

async fn end_to_end_provisioning() -> anyhow::Result<String> {
    let started = Instant::now();
    let d = Deployment::start(ChainConfig::desk()).await?;
    let seed = SeedAdmin {
        username: "admin".into(),
        email: "admin@example.org".into(),
        password: "admin-first-run".into(),
    };
    bootstrap_admin(&d.ledger, &seed, Duration::from_secs(5)).await?;
    let admin = d.login("admin", "admin-first-run").await?;

    let record = d.record("e2e-device");
    let body = serde_json::to_value(&record)?;
    let (status, accepted) = d.call(Method::POST, d.mgmt("/mgmt/devices"), Some(&admin), Some(&body)).await?;
    ensure!(status == StatusCode::ACCEPTED, "add device: {status} {accepted}");
    let (status, receipt) = d.settle(&admin, &accepted, Duration::from_secs(5)).await?;
    ensure!(status == StatusCode::OK && receipt["status"] == "Applied", "receipt: {status} {receipt}");

    let sim = SimHandle::spawn(d.sim_config(&record)).await?;
    let listed = eventually(Duration::from_secs(8), || async {
        match d.call(Method::GET, d.api("/api/clients"), Some(&admin), None).await {
            Ok((StatusCode::OK, Value::Array(list))) => list.iter().any(|e| e["endpoint"] == "e2e-device"),
            _ => false,
        }
    })
    .await;
    let elapsed = started.elapsed();
    sim.stop().await;
    ensure!(listed, "device never listed by GET /api/clients");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("seed to listed in {:.2} s under desk profile", elapsed.as_secs_f64()))
}

// ---- contract oracle ---------------------------------------------------------

/// Reference model of the two stores: plain ordered maps.
#[derive(Default)]
struct StoreModel {
    clients: BTreeMap<String, ClientRecord>,
    users: BTreeMap<String, UserRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Branch {
    Applied,
    InvalidClient,
    DuplicateClient,
    MissingClient,
    DuplicateUser,
    MissingUser,
    EmailTaken,
}

impl StoreModel {
    fn identifier_taken(&self, id: &str, except: Option<&str>) -> bool {
        self.users
            .values()
            .filter(|u| Some(u.username.as_str()) != except)
            .any(|u| u.username == id || u.email == id)
    }

    fn apply(&mut self, rng: &mut StdRng) -> (ContractCall, Branch) {
        match rng.gen_range(0..4) {
            0 => {
                let ep = format!("ep{}", rng.gen_range(0..6));
                let psk_len = [16, 40, 64, 15, 65][rng.gen_range(0..5)];
                let rec = ClientRecord {
                    endpoint: ep.clone(),
                    bootstrap_uri: "coaps://10.0.0.1:5684".into(),
                    server_uri: "coaps://10.0.0.1:5683".into(),
                    bootstrap_psk_identity: format!("{ep}/b"),
                    bootstrap_psk_secret: vec![7; psk_len],
                    server_psk_identity: format!("{ep}/s"),
                    server_psk_secret: vec![9; 32],
                };
                let call = ContractCall::add_client(&rec);
                let branch = if !(16..=64).contains(&psk_len) {
                    Branch::InvalidClient
                } else {
                    match self.clients.entry(ep) {
                        Entry::Occupied(_) => Branch::DuplicateClient,
                        Entry::Vacant(slot) => {
                            slot.insert(rec);
                            Branch::Applied
                        }
                    }
                };
                (call, branch)
            }
            1 => {
                let ep = format!("ep{}", rng.gen_range(0..6));
                let branch = if self.clients.remove(&ep).is_some() {
                    Branch::Applied
                } else {
                    Branch::MissingClient
                };
                (ContractCall::remove_client(&ep), branch)
            }
            2 => {
                let name = format!("name{}", rng.gen_range(0..5));
                let email = email_slot(rng.gen_range(0..7));
                let rec = user_record(&name, &email, Role::User);
                let call = ContractCall::add_user(&rec);
                let branch = if self.identifier_taken(&name, None) || self.identifier_taken(&email, None) {
                    Branch::DuplicateUser
                } else {
                    self.users.insert(name, rec);
                    Branch::Applied
                };
                (call, branch)
            }
            _ => {
                let name = format!("name{}", rng.gen_range(0..5));
                let email = email_slot(rng.gen_range(0..7));
                let rec = user_record(&name, &email, Role::ALL[rng.gen_range(0..3)]);
                let call = ContractCall::update_user(&rec);
                let branch = if !self.users.contains_key(&name) {
                    Branch::MissingUser
                } else if self.identifier_taken(&email, Some(&name)) {
                    Branch::EmailTaken
                } else {
                    self.users.insert(name, rec);
                    Branch::Applied
                };
                (call, branch)
            }
        }
    }
}

/// Two of the seven email slots collide with usernames.
fn email_slot(i: usize) -> String {
    match i {
        5 => "name1".into(),
        6 => "name2".into(),
        i => format!("mail{i}@example.org"),
    }
}

fn user_record(name: &str, email: &str, role: Role) -> UserRecord {
    UserRecord {
        username: name.into(),
        email: email.into(),
        password_hash: [3; 32],
        salt: [4; 16],
        role,
    }
}

fn contract_oracle_equivalence() -> anyhow::Result<String> {
    let mut rng = StdRng::seed_from_u64(0x02ac1e);
    let mut hits: BTreeMap<Branch, usize> = BTreeMap::new();
    const SEQUENCES: usize = 1000;
    for seq in 0..SEQUENCES {
        let ledger = Ledger::in_memory(ChainConfig::instant());
        let mut model = StoreModel::default();
        let mut expected = Vec::new();
        for _ in 0..rng.gen_range(1..40) {
            let (call, branch) = model.apply(&mut rng);
            expected.push((ledger.submit_call("admin", call)?, branch));
            if rng.gen_bool(0.4) {
                ledger.mine_block()?;
            }
        }
        ledger.mine_block()?;
        for (tx, branch) in expected {
            let r = ledger.receipt(tx)?.mined().context("receipt")?;
            let applied = r.status == ReceiptStatus::Applied;
            ensure!(
                applied == (branch == Branch::Applied),
                "sequence {seq}: expected {branch:?}, got {:?} {:?}",
                r.status,
                r.revert_reason
            );
            *hits.entry(branch).or_default() += 1;
        }
        let clients: BTreeMap<_, _> = ledger.get_all_clients()?.into_iter().collect();
        let users: BTreeMap<_, _> = ledger.get_all_users()?.into_iter().collect();
        ensure!(clients == model.clients, "sequence {seq}: client store diverged");
        ensure!(users == model.users, "sequence {seq}: user store diverged");
        for u in model.users.values() {
            ensure!(ledger.validate_login(&u.username)? == *u, "lookup by username");
            ensure!(ledger.validate_login(&u.email)? == *u, "lookup by email");
        }
    }
    for b in [
        Branch::Applied,
        Branch::InvalidClient,
        Branch::DuplicateClient,
        Branch::MissingClient,
        Branch::DuplicateUser,
        Branch::MissingUser,
        Branch::EmailTaken,
    ] {
        ensure!(hits.get(&b).copied().unwrap_or(0) > 0, "branch {b:?} never exercised");
    }
    Ok(format!("{SEQUENCES} sequences, outcomes {hits:?}"))
}

// ---- tamper evidence ---------------------------------------------------------

fn tamper_evidence() -> anyhow::Result<String> {
    let config = ChainConfig {
        difficulty_bits: 8,
        ..ChainConfig::instant()
    };
    let ledger = Ledger::in_memory(config.clone());
    let mut rng = StdRng::seed_from_u64(20);
    while ledger.block_count() < 20 {
        for _ in 0..rng.gen_range(0..4) {
            let i = rng.gen::<u32>();
            let a = AnomalyRecord {
                timestamp_ms: 1 + u64::from(i),
                endpoint: format!("dev{i}"),
                payload: "x".repeat(rng.gen_range(1..200)),
            };
            ledger.submit_call("app", ContractCall::add_anomaly(&a))?;
        }
        ledger.mine_block()?;
    }
    let bytes = journal::encode_journal(&ledger.blocks());
    ensure!(verify_journal_bytes(&bytes, &config).valid, "pristine journal rejected");
    ensure!(ledger.verify_chain().valid, "pristine chain rejected");
    const MUTATIONS: usize = 500;
    for _ in 0..MUTATIONS {
        let pos = rng.gen_range(0..bytes.len());
        let delta = rng.gen_range(1..=255u8);
        let mut copy = bytes.clone();
        copy[pos] ^= delta;
        ensure!(
            !verify_journal_bytes(&copy, &config).valid,
            "mutation at byte {pos} (xor {delta:#04x}) went undetected"
        );
    }
    Ok(format!("{MUTATIONS} single-byte mutations of a 20-block, {}-byte journal all detected", bytes.len()))
}

// ---- revert atomicity --------------------------------------------------------

fn revert_atomicity() -> anyhow::Result<String> {
    let ledger = Ledger::in_memory(ChainConfig::instant());
    let mut rng = StdRng::seed_from_u64(0xa70);
    let (mut reverted, mut out_of_gas, mut applied) = (0, 0, 0);
    for i in 0..600 {
        let ep = format!("dev{}", rng.gen_range(0..8));
        let call = match rng.gen_range(0..4) {
            0 | 1 => ContractCall::add_client(&ClientRecord {
                endpoint: ep.clone(),
                bootstrap_uri: "coaps://h:1".into(),
                server_uri: "coaps://h:2".into(),
                bootstrap_psk_identity: "b".into(),
                bootstrap_psk_secret: vec![1; rng.gen_range(16..=64)],
                server_psk_identity: "s".into(),
                server_psk_secret: vec![2; 16],
            }),
            2 => ContractCall::remove_client(&ep),
            _ => ContractCall::add_anomaly(&AnomalyRecord {
                timestamp_ms: 1 + i,
                endpoint: ep.clone(),
                payload: "p".repeat(rng.gen_range(1..4096)),
            }),
        };
        let before = ledger.state_snapshot();
        let tx = if rng.gen_bool(0.2) {
            ledger.submit_call_with_gas("admin", call, rng.gen_range(21_000..60_000))?
        } else {
            ledger.submit_call("admin", call)?
        };
        ledger.mine_block()?;
        let r = ledger.receipt(tx)?.mined().context("receipt")?;
        match r.status {
            ReceiptStatus::Applied => applied += 1,
            failed => {
                ensure!(ledger.state_snapshot() == before, "tx {i} {failed:?} changed state");
                if failed == ReceiptStatus::OutOfGas {
                    out_of_gas += 1;
                } else {
                    reverted += 1;
                }
            }
        }
    }
    ensure!(reverted > 0 && out_of_gas > 0, "workload missed a failure kind");
    ensure!(ledger.verify_chain().valid, "chain invalid after workload");
    Ok(format!("{applied} applied, {reverted} reverted, {out_of_gas} out of gas; failures left state untouched"))
}

// ---- double check of the server credentials ----------------------------------

async fn server_psk_double_check() -> anyhow::Result<String> {
    let ledger = std::sync::Arc::new(Ledger::in_memory(ChainConfig::instant()));
    let stale = std::sync::Arc::new(InMemoryDirectory::new());
    let stale_dir: std::sync::Arc<dyn ClientDirectory> = stale.clone();
    let dm_dir: std::sync::Arc<dyn ClientDirectory> = std::sync::Arc::new(LedgerDirectory::new(ledger.clone()));
    let d = Deployment::with_directories(ledger, stale_dir, dm_dir).await?;

    // bootstrap hands out a server secret the ledger does not hold
    let good = d.record("honest");
    let forged = d.record("mismatch");
    d.store(&good).await?;
    d.store(&forged).await?;
    stale.insert(good.clone());
    stale.insert(ClientRecord {
        server_psk_secret: support::psk("forged", "mismatch"),
        ..forged.clone()
    });

    let honest = SimHandle::spawn(d.sim_config(&good)).await?;
    let bad = SimHandle::spawn(d.sim_config(&forged)).await?;
    let ok = honest.wait_registered(Duration::from_secs(10)).await.is_some();
    let watch_for = Duration::from_secs(6);
    let started = Instant::now();
    let mut ever_listed = false;
    while started.elapsed() < watch_for {
        ever_listed |= d.dm.core().client("mismatch").is_some();
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let bootstrapped = bad.counters();
    honest.stop().await;
    bad.stop().await;
    ensure!(ok, "control device with matching credentials did not register");
    ensure!(!ever_listed, "device with mismatching server PSK was listed");
    Ok(format!(
        "mismatching device never listed over {watch_for:?} ({bootstrapped:?}); matching device registered"
    ))
}

// ---- latency trends ----------------------------------------------------------

async fn slow_chain_add_remove() -> anyhow::Result<Vec<Row>> {
    let s = BenchScenario::new(ScenarioName::ClientAddRemove, vec![0], 3, Profile::PaperEmulation)?;
    Ok(run_scenario(&s).await?)
}

async fn desk_rows(name: ScenarioName, reps: u32) -> anyhow::Result<Vec<Row>> {
    let s = BenchScenario::new(name, vec![100, 200, 300, 400, 500], reps, Profile::Desk)?;
    Ok(run_scenario(&s).await?)
}

async fn latency_trends(slow: Option<tokio::task::JoinHandle<anyhow::Result<Vec<Row>>>>) -> anyhow::Result<String> {
    let baseline = report(&desk_rows(ScenarioName::InMemoryBaseline, 20).await?)?;
    let ledger = report(&desk_rows(ScenarioName::RegisterVsStored, 20).await?)?;
    let mut notes = Vec::new();
    for (b, l) in baseline.iter().zip(&ledger) {
        ensure!(b.size == l.size);
        ensure!(
            b.median_ms < l.median_ms,
            "size {}: in-memory median {:.2} ms not below ledger {:.2} ms",
            b.size,
            b.median_ms,
            l.median_ms
        );
        notes.push(format!("{}: {:.1}<{:.1}", b.size, b.median_ms, l.median_ms));
    }

    let query = report(&desk_rows(ScenarioName::AnomalyQueryVsCount, 50).await?)?;
    for w in query.windows(2) {
        ensure!(
            w[1].median_ms >= w[0].median_ms,
            "anomaly query median fell from {:.2} ms at {} to {:.2} ms at {}",
            w[0].median_ms,
            w[0].size,
            w[1].median_ms,
            w[1].size
        );
    }
    let query_notes: Vec<String> = query.iter().map(|q| format!("{:.1}", q.median_ms)).collect();

    let slow = slow.context("slow-chain run not started")?.await??;
    let summary = report(&slow)?;
    let median_s = summary[0].median_ms / 1000.0;
    ensure!((25.0..=35.0).contains(&median_s), "slow-chain add/remove median {median_s:.2} s outside 30 +/- 5 s");
    Ok(format!(
        "registration ms in-memory<ledger [{}]; anomaly query medians ms [{}]; 30 s-block add/remove median {median_s:.2} s",
        notes.join(", "),
        query_notes.join(", ")
    ))
}

// ---- authorization matrix ----------------------------------------------------

const ADMIN: (&str, &str) = ("ada", "ada-password");
const USER: (&str, &str) = ("ulf", "ulf-password");
const APP: (&str, &str) = ("app", "app-password");

struct Route {
    method: Method,
    path: String,
    body: Option<Value>,
    allowed: &'static [Role],
}

fn route(method: Method, path: impl Into<String>, body: Option<Value>, allowed: &'static [Role]) -> Route {
    Route {
        method,
        path: path.into(),
        body,
        allowed,
    }
}

const ADMIN_ONLY: &[Role] = &[Role::Admin];
const EVERYONE: &[Role] = &[Role::Admin, Role::User, Role::Application];
const WRITERS: &[Role] = &[Role::Admin, Role::Application];

async fn authz_matrix() -> anyhow::Result<String> {
    let d = Deployment::start(ChainConfig::instant()).await?;
    for ((name, pw), role) in [(ADMIN, Role::Admin), (USER, Role::User), (APP, Role::Application)] {
        let tx = d
            .ledger
            .submit_call("setup", ContractCall::add_user(&make_user(name, &format!("{name}@example.org"), pw, role)))?;
        d.ledger.wait_for_receipt(tx, Duration::from_secs(5)).await?;
    }
    let _sim = d.registered_sim("matrix-dev").await?;
    let tokens = [
        (Role::Admin, d.login(ADMIN.0, ADMIN.1).await?),
        (Role::User, d.login(USER.0, USER.1).await?),
        (Role::Application, d.login(APP.0, APP.1).await?),
    ];
    let probe = AnomalyRecord {
        timestamp_ms: 1,
        endpoint: "matrix-dev".into(),
        payload: "probe".into(),
    };
    let tx_probe = d.ledger.submit_call("setup", ContractCall::add_anomaly(&probe))?;
    d.ledger.wait_for_receipt(tx_probe, Duration::from_secs(5)).await?;
    let res = "/api/clients/matrix-dev";

    // the documented role matrix, one row per route
    let mgmt = [
        route(Method::GET, "/mgmt/devices", None, ADMIN_ONLY),
        route(Method::POST, "/mgmt/devices", Some(serde_json::to_value(d.record("matrix-new"))?), ADMIN_ONLY),
        route(Method::DELETE, "/mgmt/devices/matrix-new", None, ADMIN_ONLY),
        route(Method::GET, "/mgmt/users", None, ADMIN_ONLY),
        route(
            Method::POST,
            "/mgmt/users",
            Some(json!({"username": "new", "email": "new@example.org", "password": "pw", "role": "User"})),
            ADMIN_ONLY,
        ),
        route(Method::PUT, "/mgmt/users/ulf", Some(json!({"role": "User"})), ADMIN_ONLY),
        route(Method::GET, "/mgmt/anomalies", None, EVERYONE),
        route(Method::POST, "/mgmt/anomalies", Some(json!({"endpoint": "matrix-dev", "payload": "hot"})), WRITERS),
        route(Method::GET, format!("/mgmt/tx/{tx_probe}"), None, EVERYONE),
    ];
    let api = [
        route(Method::GET, "/api/clients", None, WRITERS),
        route(Method::GET, "/api/metrics", None, WRITERS),
        route(Method::GET, format!("{res}/3303/0/5700"), None, WRITERS),
        route(Method::PUT, format!("{res}/1/0/1"), Some(json!({"kind": "Integer", "value": 90})), WRITERS),
        route(Method::POST, format!("{res}/1/0/8/exec"), None, WRITERS),
        route(Method::POST, format!("{res}/3303/0/5700/observe"), None, WRITERS),
        route(Method::GET, format!("{res}/3303/0/5700/observe"), None, WRITERS),
        route(Method::DELETE, format!("{res}/3303/0/5700/observe"), None, WRITERS),
    ];

    let mut checked = 0;
    for (is_api, r) in mgmt.iter().map(|r| (false, r)).chain(api.iter().map(|r| (true, r))) {
        let url = if is_api { d.api(&r.path) } else { d.mgmt(&r.path) };
        let (status, _) = d.call(r.method.clone(), url.clone(), None, r.body.as_ref()).await?;
        ensure!(status == StatusCode::UNAUTHORIZED, "{} {} without token: {status}", r.method, r.path);
        let (status, _) = d.call(r.method.clone(), url.clone(), Some("not.a.token"), r.body.as_ref()).await?;
        ensure!(status == StatusCode::UNAUTHORIZED, "{} {} with forged token: {status}", r.method, r.path);
        checked += 2;
        for (role, token) in &tokens {
            let (status, body) = d.call(r.method.clone(), url.clone(), Some(token), r.body.as_ref()).await?;
            if r.allowed.contains(role) {
                ensure!(status.is_success(), "{role} {} {}: {status} {body}", r.method, r.path);
            } else {
                ensure!(status == StatusCode::FORBIDDEN, "{role} {} {}: {status}, expected 403", r.method, r.path);
            }
            checked += 1;
        }
    }

    // wrong password and unknown user must look the same from outside
    let attempt = |wildcard: &'static str| {
        let d = &d;
        async move {
            let started = Instant::now();
            let resp = d
                .http
                .post(d.mgmt("/mgmt/login"))
                .json(&json!({"wildcard": wildcard, "password": "not-the-password"}))
                .send()
                .await?;
            let status = resp.status();
            let ctype = resp.headers().get(reqwest::header::CONTENT_TYPE).cloned();
            let body = resp.bytes().await?;
            anyhow::Ok((started.elapsed(), status, ctype, body))
        }
    };
    let (mut wrong, mut unknown) = (Vec::new(), Vec::new());
    for _ in 0..40 {
        let a = attempt("ulf").await?;
        let b = attempt("nobody-by-that-name").await?;
        ensure!(a.1 == b.1 && a.2 == b.2 && a.3 == b.3, "responses differ: {:?} vs {:?}", (&a.1, &a.3), (&b.1, &b.3));
        ensure!(a.1 == StatusCode::UNAUTHORIZED);
        wrong.push(a.0.as_secs_f64() * 1000.0);
        unknown.push(b.0.as_secs_f64() * 1000.0);
    }
    let (mw, mu) = (lm2m_bench::median(&wrong).unwrap(), lm2m_bench::median(&unknown).unwrap());
    ensure!((mw - mu).abs() / mw.max(mu) <= 0.10, "login timing differs: {mw:.2} ms vs {mu:.2} ms");
    Ok(format!(
        "{checked} route/credential cells match; failed logins identical, medians {mw:.2} ms vs {mu:.2} ms"
    ))
}

// ---- codec fuzz --------------------------------------------------------------

const CODES: [Code; 13] = [
    Code::Empty,
    Code::Get,
    Code::Post,
    Code::Put,
    Code::Delete,
    Code::Created,
    Code::Deleted,
    Code::Changed,
    Code::Content,
    Code::Unauthorized,
    Code::NotFound,
    Code::MethodNotAllowed,
    Code::BadRequest,
];

fn valid_message(rng: &mut StdRng, max_payload: usize) -> Message {
    let types = [MessageType::Con, MessageType::Non, MessageType::Ack, MessageType::Rst];
    let observe = [Observe::None, Observe::Register, Observe::Deregister];
    let path_len = rng.gen_range(0..=255);
    let payload_len = if rng.gen_ratio(1, 200) { rng.gen_range(0..=max_payload) } else { rng.gen_range(0..128.min(max_payload + 1)) };
    let mut payload = vec![0u8; payload_len];
    rng.fill(&mut payload[..]);
    Message {
        mtype: types[rng.gen_range(0..4)],
        code: CODES[rng.gen_range(0..CODES.len())],
        message_id: rng.gen(),
        token: (0..rng.gen_range(0..=8)).map(|_| rng.gen()).collect(),
        observe: observe[rng.gen_range(0..3)],
        path: (0..path_len).map(|_| char::from(rng.gen_range(0x21u8..0x7f))).collect(),
        payload,
    }
}

fn codec_fuzz() -> anyhow::Result<String> {
    let mut rng = StdRng::seed_from_u64(0xf022);
    let mut decoded = 0usize;
    let mut buf = Vec::with_capacity(256);
    const NOISE: usize = 1_000_000;
    for i in 0..NOISE {
        buf.clear();
        match i % 3 {
            // valid frames with a few flipped bytes
            0 => {
                buf.extend(valid_message(&mut rng, 64).encode()?);
                for _ in 0..rng.gen_range(1..4) {
                    let p = rng.gen_range(0..buf.len());
                    buf[p] = rng.gen();
                }
            }
            _ => {
                buf.resize(rng.gen_range(0..128), 0);
                rng.fill(&mut buf[..]);
            }
        }
        let outcome = std::panic::catch_unwind(|| Message::decode(&buf));
        match outcome {
            Err(_) => bail!("decoder panicked on datagram {i}: {buf:02x?}"),
            Ok(Ok(m)) => {
                decoded += 1;
                ensure!(m.token.len() <= 8, "datagram {i}: token too long");
                ensure!(m.encode()? == buf, "datagram {i}: accepted frame does not re-encode identically");
            }
            Ok(Err(_)) => {}
        }
    }
    const VALID: usize = 100_000;
    for i in 0..VALID {
        let m = valid_message(&mut rng, 65_535);
        let bytes = m.encode()?;
        let back = Message::decode(&bytes).with_context(|| format!("valid message {i} rejected"))?;
        ensure!(back == m, "valid message {i} changed in round trip");
    }
    Ok(format!("{NOISE} random datagrams ({decoded} decoded, 0 panics); {VALID} valid messages round-trip"))
}

// ---- observe -----------------------------------------------------------------

async fn observe_stream() -> anyhow::Result<String> {
    let d = Deployment::start(ChainConfig::instant()).await?;
    let tx = d
        .ledger
        .submit_call("setup", ContractCall::add_user(&make_user(APP.0, "app@example.org", APP.1, Role::Application)))?;
    d.ledger.wait_for_receipt(tx, Duration::from_secs(5)).await?;
    let rec = d.record("observed");
    d.store(&rec).await?;
    let mut cfg = d.sim_config(&rec);
    cfg.temp_period = Duration::from_secs(2);
    let sim = SimHandle::spawn(cfg).await?;
    sim.wait_registered(Duration::from_secs(10)).await.context("sim did not register")?;
    let token = d.login(APP.0, APP.1).await?;
    let path = "/api/clients/observed/3303/0/5700/observe";

    let (status, body) = d.call(Method::POST, d.api(path), Some(&token), None).await?;
    ensure!(status == StatusCode::OK, "observe: {status} {body}");
    let resp = d.http.get(d.api(path)).bearer_auth(&token).send().await?;
    ensure!(resp.status() == StatusCode::OK, "stream: {}", resp.status());
    let mut stream = Box::pin(resp.bytes_stream());
    let mut pending = String::new();

    let during = read_events(&mut stream, &mut pending, Instant::now() + Duration::from_secs(10)).await?;
    let (status, _) = d.call(Method::DELETE, d.api(path), Some(&token), None).await?;
    ensure!(status == StatusCode::OK, "cancel: {status}");
    let after = read_events(&mut stream, &mut pending, Instant::now() + Duration::from_secs(5)).await?;
    let upstream_gone = eventually(Duration::from_secs(3), || async { sim.observed_paths().is_empty() }).await;
    sim.stop().await;

    ensure!(during.len() >= 3, "only {} notifications in 10 s: {during:?}", during.len());
    ensure!(after.is_empty(), "{} notifications after cancel: {after:?}", after.len());
    ensure!(upstream_gone, "device still has an observer after cancel");
    Ok(format!(
        "{} notifications in 10 s at a 2 s period (last {:?}); none in 5 s after cancel",
        during.len(),
        during.last().map(String::as_str).unwrap_or("")
    ))
}

/// Collects `data:` lines until `deadline` or the end of the stream.
async fn read_events<S, B, E>(stream: &mut S, pending: &mut String, deadline: Instant) -> anyhow::Result<Vec<String>>
where
    S: futures::Stream<Item = Result<B, E>> + Unpin,
    B: AsRef<[u8]>,
    E: std::error::Error + Send + Sync + 'static,
{
    let mut events = Vec::new();
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match tokio::time::timeout(left, stream.next()).await {
            Err(_) | Ok(None) => return Ok(events),
            Ok(Some(chunk)) => {
                pending.push_str(&String::from_utf8_lossy(chunk?.as_ref()));
                while let Some(i) = pending.find('\n') {
                    let line: String = pending.drain(..=i).collect();
                    if let Some(data) = line.trim_end().strip_prefix("data:") {
                        events.push(data.trim().to_owned());
                    }
                }
            }
        }
    }
}
