#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lm2m_core::auth::{make_user, TokenKey};
use lm2m_core::contracts::{ContractCall, Role};
use lm2m_core::ledger::{ChainConfig, Ledger, MinerHandle};
use lm2m_mgmt::{router, CorsOrigins, MgmtState};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

pub const ADMIN: (&str, &str) = ("root", "root-password-1");
pub const OPERATOR: (&str, &str) = ("operator", "operator-password-2");
pub const APP: (&str, &str) = ("analytics", "analytics-password-3");

/// Management service over an in-memory ledger with a background miner.
pub struct Service {
    pub ledger: Arc<Ledger>,
    pub addr: SocketAddr,
    pub http: reqwest::Client,
    _miner: MinerHandle,
    server: tokio::task::JoinHandle<()>,
}

impl Drop for Service {
    fn drop(&mut self) {
        self.server.abort();
    }
}

impl Service {
    pub async fn start() -> Self {
        Self::with(Ledger::in_memory(ChainConfig::instant()), CorsOrigins::Any).await
    }

    pub async fn with(ledger: Ledger, cors: CorsOrigins) -> Self {
        let ledger = Arc::new(ledger);
        let miner = ledger.spawn_miner();
        let state = MgmtState {
            ledger: ledger.clone(),
            tokens: TokenKey::new(b"test-secret-test-secret-test-sec"),
            token_ttl: Duration::from_secs(600),
        };
        let app = router(state, &cors);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let server = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            ledger,
            addr,
            http: reqwest::Client::new(),
            _miner: miner,
            server,
        }
    }

    /// Service with one user per role already on chain.
    pub async fn seeded() -> Self {
        let svc = Self::start().await;
        for ((name, pw), role) in [(ADMIN, Role::Admin), (OPERATOR, Role::User), (APP, Role::Application)] {
            let user = make_user(name, &format!("{name}@example.org"), pw, role);
            let tx = svc.ledger.submit_call("setup", ContractCall::add_user(&user)).unwrap();
            svc.ledger.wait_for_receipt(tx, Duration::from_secs(10)).await.unwrap();
        }
        svc
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub async fn login_raw(&self, wildcard: &str, password: &str) -> (StatusCode, Value) {
        let resp = self
            .http
            .post(self.url("/mgmt/login"))
            .json(&json!({ "wildcard": wildcard, "password": password }))
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn login(&self, who: (&str, &str)) -> String {
        let (status, body) = self.login_raw(who.0, who.1).await;
        assert_eq!(status, StatusCode::OK, "login {} failed: {body}", who.0);
        body["token"].as_str().unwrap().to_owned()
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, self.url(path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    /// Polls the transaction route until the receipt is in.
    pub async fn settle(&self, token: &str, accepted: &Value) -> (StatusCode, Value) {
        let tx = accepted["tx_id"].as_str().expect("tx_id in 202 body");
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            let (status, body) = self.call(Method::GET, &format!("/mgmt/tx/{tx}"), Some(token), None).await;
            if status != StatusCode::ACCEPTED {
                return (status, body);
            }
            assert!(Instant::now() < deadline, "transaction {tx} never mined");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Submits a mutation and waits for its receipt.
    pub async fn mutate(&self, method: Method, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        let (status, accepted) = self.call(method, path, Some(token), Some(body)).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{path}: {accepted}");
        self.settle(token, &accepted).await
    }
}

pub fn device(ep: &str) -> Value {
    json!({
        "endpoint": ep,
        "bootstrap_uri": "coaps://127.0.0.1:5684",
        "server_uri": "coaps://127.0.0.1:5683",
        "bootstrap_psk_identity": format!("{ep}-bs"),
        "bootstrap_psk_secret": hex_of(&format!("bootstrap-secret-{ep}")),
        "server_psk_identity": format!("{ep}-dm"),
        "server_psk_secret": hex_of(&format!("server-secret-{ep}--")),
    })
}

fn hex_of(s: &str) -> String {
    s.bytes().map(|b| format!("{b:02x}")).collect()
}
