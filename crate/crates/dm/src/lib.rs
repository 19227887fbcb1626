//! Device-management server.
//!
//! Devices reach the server over the sealed mini-CoAP transport:
//!
//! * `POST /rd?ep=<endpoint>&lt=<lifetime>` with a link-format payload
//!   registers and answers `2.01 Created` with the registration id.
//! * `POST /rd/<id>[?lt=<lifetime>]` refreshes a registration.
//! * `DELETE /rd/<id>` removes it.
//!
//! Registration is only accepted on a session keyed by the server
//! credentials held in `ClientStore`, and the record is looked up again when
//! the register request arrives. Applications drive devices through
//! [`DmCore`] or the REST API in [`api`].

pub mod api;
mod observe;
mod registry;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::Stream;
use lm2m_core::directory::{ClientDirectory, CredentialKind, DirectoryResolver};
use lm2m_core::ledger::now_ms;
use lm2m_core::wire::{
    parse_links, CoapEndpoint, Code, Inbound, Message, Observe, Path, ResourceValue, RetryPolicy,
    ServerHandshakes, Tap, TransportError,
};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

pub use observe::{Notification, ObservationHub, SUBSCRIBER_BUFFER};
pub use registry::{RegistrationEntry, Registry, DEFAULT_LIFETIME_S, REG_ID_LEN};

pub const REGISTER_PATH: &str = "/rd";
pub const SWEEP_INTERVAL: Duration = Duration::from_secs(1);
const OBSERVE_TOKEN_LEN: usize = 8;

#[derive(Clone)]
pub struct DmOptions {
    pub udp_bind: SocketAddr,
    pub retry: RetryPolicy,
    pub tap: Option<Tap>,
    pub sweep_interval: Duration,
}

impl Default for DmOptions {
    fn default() -> Self {
        Self {
            udp_bind: SocketAddr::from(([127, 0, 0, 1], 5683)),
            retry: RetryPolicy::default(),
            tap: None,
            sweep_interval: SWEEP_INTERVAL,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("endpoint is not registered")]
    NotRegistered,
    #[error("client did not answer")]
    ClientTimeout,
    #[error("client answered {0}")]
    ClientError(Code),
    #[error("malformed client response")]
    BadResponse,
}

impl DeviceError {
    pub fn http_status(&self) -> u16 {
        match self {
            DeviceError::NotRegistered => 404,
            DeviceError::ClientTimeout => 504,
            DeviceError::ClientError(code) => code.http_status(),
            DeviceError::BadResponse => 502,
        }
    }
}

impl From<TransportError> for DeviceError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => DeviceError::ClientTimeout,
            _ => DeviceError::BadResponse,
        }
    }
}

/// Server state shared by the UDP loop, the sweeper and the REST API.
pub struct DmCore {
    endpoint: Arc<CoapEndpoint>,
    directory: Arc<dyn ClientDirectory>,
    resolver: DirectoryResolver,
    handshakes: ServerHandshakes,
    registry: RwLock<Registry>,
    hub: Mutex<ObservationHub>,
    observe_setup: tokio::sync::Mutex<()>,
}

/// A running server. Dropping it stops every task.
pub struct DmServer {
    core: Arc<DmCore>,
    tasks: Vec<JoinHandle<()>>,
}

impl Drop for DmServer {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl DmServer {
    pub async fn spawn(opts: DmOptions, directory: Arc<dyn ClientDirectory>) -> std::io::Result<Self> {
        let (endpoint, inbound) = CoapEndpoint::bind_with_tap(opts.udp_bind, opts.retry, opts.tap).await?;
        let core = Arc::new(DmCore {
            endpoint,
            directory: directory.clone(),
            resolver: DirectoryResolver {
                directory,
                kind: CredentialKind::Server,
            },
            handshakes: ServerHandshakes::default(),
            registry: RwLock::new(Registry::default()),
            hub: Mutex::new(ObservationHub::default()),
            observe_setup: tokio::sync::Mutex::new(()),
        });
        let tasks = vec![
            tokio::spawn(serve(core.clone(), inbound)),
            tokio::spawn(sweep(core.clone(), opts.sweep_interval)),
        ];
        Ok(Self { core, tasks })
    }

    pub fn core(&self) -> &Arc<DmCore> {
        &self.core
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.core.endpoint.local_addr()
    }

    pub fn uri(&self) -> String {
        format!("coap://{}", self.local_addr())
    }

    /// Waits until the device loop stops.
    pub async fn join(mut self) {
        let first = self.tasks.remove(0);
        let _ = first.await;
    }
}

async fn serve(core: Arc<DmCore>, mut inbound: mpsc::Receiver<Inbound>) {
    while let Some(item) = inbound.recv().await {
        match item {
            Inbound::Request { peer, msg } => {
                let core = core.clone();
                tokio::spawn(async move {
                    if let Err(e) = core.handle(peer, msg).await {
                        tracing::warn!(%peer, error = %e, "device request failed");
                    }
                });
            }
            Inbound::Notification { peer, msg } => core.on_notification(peer, msg),
        }
    }
}

async fn sweep(core: Arc<DmCore>, every: Duration) {
    let mut tick = tokio::time::interval(every);
    loop {
        tick.tick().await;
        let expired = core.registry.write().sweep(now_ms());
        for e in expired {
            tracing::info!(endpoint = %e.endpoint, reg_id = %e.reg_id, "registration expired");
            core.hub.lock().drop_endpoint(&e.endpoint);
        }
    }
}

fn random_token() -> Vec<u8> {
    let mut t = vec![0u8; OBSERVE_TOKEN_LEN];
    rand::thread_rng().fill_bytes(&mut t);
    t
}

fn observe_key(endpoint: &str, path: Path) -> (String, Path) {
    (endpoint.to_owned(), path)
}

impl DmCore {
    async fn handle(&self, peer: SocketAddr, msg: Message) -> Result<(), TransportError> {
        if msg.is_handshake() {
            if let Some(s) = self
                .handshakes
                .handle(&self.endpoint, peer, &msg, &self.resolver)
                .await?
            {
                tracing::debug!(%peer, endpoint = %s.peer_identity, "device session established");
            }
            return Ok(());
        }
        let path = msg.path_only().to_owned();
        let (code, payload) = if path == REGISTER_PATH {
            if msg.code == Code::Post {
                self.on_register(peer, &msg).await
            } else {
                (Code::MethodNotAllowed, Vec::new())
            }
        } else if let Some(id) = path.strip_prefix("/rd/") {
            match msg.code {
                Code::Post => (self.on_update(peer, id, &msg), Vec::new()),
                Code::Delete => (self.on_deregister(peer, id), Vec::new()),
                _ => (Code::MethodNotAllowed, Vec::new()),
            }
        } else {
            (Code::NotFound, Vec::new())
        };
        self.endpoint.respond(peer, &msg, code, payload).await
    }

    fn session_identity(&self, peer: SocketAddr) -> Option<String> {
        self.endpoint.session(peer).map(|s| s.peer_identity)
    }

    async fn on_register(&self, peer: SocketAddr, msg: &Message) -> (Code, Vec<u8>) {
        let Some(ep) = msg.query("ep") else {
            return (Code::BadRequest, Vec::new());
        };
        if self.session_identity(peer).as_deref() != Some(ep) {
            tracing::info!(%peer, endpoint = ep, "registration refused: no matching session");
            return (Code::Unauthorized, Vec::new());
        }
        match self.directory.lookup(ep).await {
            Ok(Some(_)) => {}
            Ok(None) => {
                tracing::info!(%peer, endpoint = ep, "registration refused: not in ClientStore");
                return (Code::Unauthorized, Vec::new());
            }
            Err(e) => {
                tracing::warn!(error = %e, "ClientStore lookup failed");
                return (Code::Unauthorized, Vec::new());
            }
        }
        let lifetime = match msg.query("lt").map(str::parse::<u64>) {
            None => DEFAULT_LIFETIME_S,
            Some(Ok(lt)) if lt > 0 => lt,
            Some(_) => return (Code::BadRequest, Vec::new()),
        };
        let links = match std::str::from_utf8(&msg.payload).ok().map(parse_links) {
            Some(Ok(links)) if !links.is_empty() => links,
            _ => return (Code::BadRequest, Vec::new()),
        };
        let (reg_id, replaced) = self.registry.write().register(ep, peer, lifetime, links, now_ms());
        if replaced.is_some() {
            self.hub.lock().drop_endpoint(ep);
        }
        tracing::info!(%peer, endpoint = ep, %reg_id, lifetime, "client registered");
        (Code::Created, reg_id.into_bytes())
    }

    fn authorized_for(&self, peer: SocketAddr, reg_id: &str) -> Result<(), Code> {
        let reg = self.registry.read();
        let Some(entry) = reg.get(reg_id, now_ms()) else {
            return Err(Code::NotFound);
        };
        if self.session_identity(peer).as_deref() != Some(entry.endpoint.as_str()) {
            return Err(Code::Unauthorized);
        }
        Ok(())
    }

    fn on_update(&self, peer: SocketAddr, reg_id: &str, msg: &Message) -> Code {
        if let Err(code) = self.authorized_for(peer, reg_id) {
            return code;
        }
        let lifetime = match msg.query("lt").map(str::parse::<u64>) {
            None => None,
            Some(Ok(lt)) if lt > 0 => Some(lt),
            Some(_) => return Code::BadRequest,
        };
        match self.registry.write().update(reg_id, lifetime, peer, now_ms()) {
            Some(e) => {
                tracing::debug!(endpoint = %e.endpoint, reg_id, "registration updated");
                Code::Changed
            }
            None => Code::NotFound,
        }
    }

    fn on_deregister(&self, peer: SocketAddr, reg_id: &str) -> Code {
        if let Err(code) = self.authorized_for(peer, reg_id) {
            return code;
        }
        match self.registry.write().deregister(reg_id) {
            Some(e) => {
                self.hub.lock().drop_endpoint(&e.endpoint);
                tracing::info!(endpoint = %e.endpoint, reg_id, "client deregistered");
                Code::Deleted
            }
            None => Code::NotFound,
        }
    }

    fn on_notification(&self, peer: SocketAddr, msg: Message) {
        if msg.code != Code::Content {
            return;
        }
        let Ok(value) = ResourceValue::decode(&msg.payload) else {
            tracing::debug!(%peer, "undecodable notification");
            return;
        };
        // only accept notifications from the address the endpoint registered from
        let Some(ep) = self.session_identity(peer) else {
            return;
        };
        if self.registration_addr(&ep) != Some(peer) {
            return;
        }
        let n = Notification {
            timestamp_ms: now_ms(),
            value,
        };
        if !self.hub.lock().publish(&msg.token, n) {
            tracing::debug!(%peer, "notification for unknown observation");
        }
    }

    fn registration_addr(&self, endpoint: &str) -> Option<SocketAddr> {
        self.registry
            .read()
            .by_endpoint(endpoint, now_ms())
            .map(|e| e.remote_addr)
    }

    /// Live registrations ordered by endpoint.
    pub fn clients(&self) -> Vec<RegistrationEntry> {
        self.registry.read().list(now_ms())
    }

    pub fn client(&self, endpoint: &str) -> Option<RegistrationEntry> {
        self.registry.read().by_endpoint(endpoint, now_ms()).cloned()
    }

    async fn exchange(&self, endpoint: &str, msg: Message) -> Result<Message, DeviceError> {
        let addr = self.registration_addr(endpoint).ok_or(DeviceError::NotRegistered)?;
        let resp = self.endpoint.request(addr, msg).await?;
        if resp.code.is_success() {
            Ok(resp)
        } else {
            Err(DeviceError::ClientError(resp.code))
        }
    }

    pub async fn read(&self, endpoint: &str, path: Path) -> Result<ResourceValue, DeviceError> {
        let resp = self.exchange(endpoint, Message::request(Code::Get, path.to_string())).await?;
        if resp.code != Code::Content {
            return Err(DeviceError::BadResponse);
        }
        ResourceValue::decode(&resp.payload).map_err(|_| DeviceError::BadResponse)
    }

    pub async fn write(&self, endpoint: &str, path: Path, value: &ResourceValue) -> Result<(), DeviceError> {
        let msg = Message::request(Code::Put, path.to_string()).with_payload(value.encode());
        self.exchange(endpoint, msg).await.map(drop)
    }

    pub async fn execute(&self, endpoint: &str, path: Path) -> Result<(), DeviceError> {
        self.exchange(endpoint, Message::request(Code::Post, path.to_string()))
            .await
            .map(drop)
    }

    /// Subscribes `subscriber` to `path`, opening the upstream observation
    /// if needed. Returns false when the subscription already existed.
    pub async fn observe(&self, endpoint: &str, path: Path, subscriber: &str) -> Result<bool, DeviceError> {
        let key = observe_key(endpoint, path);
        let _setup = self.observe_setup.lock().await;
        if !self.hub.lock().has_upstream(&key) {
            let token = random_token();
            let msg = Message::request(Code::Get, path.to_string())
                .with_token(token.clone())
                .with_observe(Observe::Register);
            let resp = self.exchange(endpoint, msg).await?;
            if resp.code != Code::Content {
                return Err(DeviceError::BadResponse);
            }
            // the endpoint may have gone away while we waited
            if self.registration_addr(endpoint).is_none() {
                return Err(DeviceError::NotRegistered);
            }
            self.hub.lock().open_upstream(key.clone(), token);
        }
        Ok(self.hub.lock().subscribe(&key, subscriber))
    }

    /// Notification stream for an existing subscription.
    pub fn observe_stream(
        &self,
        endpoint: &str,
        path: Path,
        subscriber: &str,
    ) -> Option<impl Stream<Item = Notification> + Send + 'static> {
        self.hub.lock().stream(&observe_key(endpoint, path), subscriber)
    }

    pub fn is_observing(&self, endpoint: &str, path: Path, subscriber: &str) -> bool {
        self.hub.lock().is_subscribed(&observe_key(endpoint, path), subscriber)
    }

    /// Cancels one subscription. The device is told to stop once nobody is
    /// left. Returns false if there was no such subscription.
    pub async fn cancel_observe(&self, endpoint: &str, path: Path, subscriber: &str) -> bool {
        let outcome = self.hub.lock().unsubscribe(&observe_key(endpoint, path), subscriber);
        match outcome {
            None => false,
            Some(None) => true,
            Some(Some(token)) => {
                let msg = Message::request(Code::Get, path.to_string())
                    .with_token(token)
                    .with_observe(Observe::Deregister);
                if let Err(e) = self.exchange(endpoint, msg).await {
                    tracing::debug!(endpoint, %path, error = %e, "observe cancel not acknowledged");
                }
                true
            }
        }
    }

    pub fn metrics(&self) -> Metrics {
        let hub = self.hub.lock();
        Metrics {
            registrations: self.registry.read().list(now_ms()).len(),
            observations: hub.upstream_count(),
            notifications_dropped: hub.dropped(),
            datagrams_dropped: self.endpoint.dropped(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Metrics {
    pub registrations: usize,
    pub observations: usize,
    pub notifications_dropped: u64,
    pub datagrams_dropped: u64,
}
