use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lm2m_bootstrap::request_bootstrap;
use lm2m_core::wire::{
    format_links, resolve_uri, BootstrapConfig, CoapEndpoint, Code, Inbound, Message, MessageType,
    Observe, Path, ResourceValue, RetryPolicy, Tap,
};
use parking_lot::Mutex;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::objects::{self, Action, ObjectStore};
use crate::temperature::TemperatureModel;

pub const DEFAULT_LIFETIME_S: u64 = 60;
pub const DEFAULT_TEMP_PERIOD: Duration = Duration::from_secs(2);
pub const BACKOFF_INITIAL: Duration = Duration::from_secs(1);
pub const BACKOFF_MAX: Duration = Duration::from_secs(60);

#[derive(Clone)]
pub struct SimConfig {
    pub endpoint: String,
    pub bootstrap_uri: String,
    pub bootstrap_identity: String,
    pub bootstrap_secret: Vec<u8>,
    pub lifetime_s: u64,
    pub temp_period: Duration,
    pub temp_seed: u64,
    pub retry: RetryPolicy,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    pub bind: SocketAddr,
    pub tap: Option<Tap>,
}

impl SimConfig {
    pub fn new(endpoint: &str, bootstrap_uri: &str, identity: &str, secret: &[u8]) -> Self {
        Self {
            endpoint: endpoint.to_owned(),
            bootstrap_uri: bootstrap_uri.to_owned(),
            bootstrap_identity: identity.to_owned(),
            bootstrap_secret: secret.to_vec(),
            lifetime_s: DEFAULT_LIFETIME_S,
            temp_period: DEFAULT_TEMP_PERIOD,
            temp_seed: 0,
            retry: RetryPolicy::default(),
            backoff_initial: BACKOFF_INITIAL,
            backoff_max: BACKOFF_MAX,
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            tap: None,
        }
    }

    fn temperature(&self) -> TemperatureModel {
        TemperatureModel::new(self.temp_seed)
    }

    fn fixture(&self) -> ObjectStore {
        ObjectStore::fixture(
            &self.endpoint,
            &self.bootstrap_uri,
            self.lifetime_s,
            self.temperature().at(0),
        )
    }
}

/// Delay before retry number `attempt` (0-based): 1, 2, 4, ... capped.
pub fn backoff_delay(initial: Duration, max: Duration, attempt: u32) -> Duration {
    initial.saturating_mul(1u32 << attempt.min(16)).min(max)
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("bootstrap failed: {0}")]
    BootstrapFailed(String),
    #[error("registration failed: {0}")]
    RegisterFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bootstrapping,
    Registering,
    Registered,
    Backoff,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimStatus {
    pub phase: Phase,
    pub reg_id: Option<String>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub bootstrap_failures: u64,
    pub register_failures: u64,
    pub registrations: u64,
    pub updates: u64,
    pub reboots: u64,
    pub notifications: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Control {
    Reboot,
    Update,
    Stop,
}

struct Shared {
    config: SimConfig,
    endpoint: Arc<CoapEndpoint>,
    objects: Mutex<ObjectStore>,
    observations: Mutex<BTreeMap<Path, Vec<u8>>>,
    dm: Mutex<Option<SocketAddr>>,
    boot: Mutex<Instant>,
    status: watch::Sender<SimStatus>,
    counters: Mutex<SimCounters>,
}

/// A running simulated device. Dropping it stops the device without
/// deregistering; use [`SimHandle::stop`] for a clean exit.
pub struct SimHandle {
    shared: Arc<Shared>,
    control: mpsc::Sender<Control>,
    lifecycle: JoinHandle<()>,
    responder: JoinHandle<()>,
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.lifecycle.abort();
        self.responder.abort();
    }
}

impl SimHandle {
    /// Binds the device socket and starts the lifecycle.
    pub async fn spawn(config: SimConfig) -> std::io::Result<Self> {
        let (endpoint, inbound) = CoapEndpoint::bind_with_tap(config.bind, config.retry, config.tap.clone()).await?;
        let (status, _) = watch::channel(SimStatus {
            phase: Phase::Bootstrapping,
            reg_id: None,
            last_error: None,
        });
        let shared = Arc::new(Shared {
            objects: Mutex::new(config.fixture()),
            config,
            endpoint,
            observations: Mutex::default(),
            dm: Mutex::new(None),
            boot: Mutex::new(Instant::now()),
            status,
            counters: Mutex::default(),
        });
        let (control, control_rx) = mpsc::channel(16);
        let responder = tokio::spawn(respond_loop(shared.clone(), inbound, control.clone()));
        let lifecycle = tokio::spawn(lifecycle(shared.clone(), control_rx));
        Ok(Self {
            shared,
            control,
            lifecycle,
            responder,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.shared.config.endpoint
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.shared.endpoint.local_addr()
    }

    pub fn status(&self) -> SimStatus {
        self.shared.status.borrow().clone()
    }

    pub fn counters(&self) -> SimCounters {
        *self.shared.counters.lock()
    }

    /// Current in-process value of a resource.
    pub fn value(&self, path: &Path) -> Option<ResourceValue> {
        self.shared.objects.lock().get(path).cloned()
    }

    pub fn observed_paths(&self) -> Vec<Path> {
        self.shared.observations.lock().keys().copied().collect()
    }

    /// Waits until the device is registered and returns its registration id.
    pub async fn wait_registered(&self, timeout: Duration) -> Option<String> {
        self.wait_for(timeout, |s| s.phase == Phase::Registered).await
    }

    /// Waits for a registration whose id differs from `old`.
    pub async fn wait_reregistered(&self, old: &str, timeout: Duration) -> Option<String> {
        self.wait_for(timeout, |s| {
            s.phase == Phase::Registered && s.reg_id.as_deref() != Some(old)
        })
        .await
    }

    async fn wait_for(&self, timeout: Duration, pred: impl Fn(&SimStatus) -> bool) -> Option<String> {
        let mut rx = self.shared.status.subscribe();
        let s = tokio::time::timeout(timeout, rx.wait_for(|s| pred(s))).await.ok()?.ok()?;
        s.reg_id.clone()
    }

    /// Same as executing /3/0/4 from the server.
    pub async fn reboot(&self) {
        let _ = self.control.send(Control::Reboot).await;
    }

    /// Same as executing /1/0/8 from the server.
    pub async fn trigger_update(&self) {
        let _ = self.control.send(Control::Update).await;
    }

    /// Deregisters and stops the device, waiting until it has stopped.
    pub async fn stop(&self) {
        let _ = self.control.send(Control::Stop).await;
        let mut rx = self.shared.status.subscribe();
        let _ = rx.wait_for(|s| s.phase == Phase::Stopped).await;
    }
}

impl Shared {
    fn set_status(&self, phase: Phase, reg_id: Option<String>, last_error: Option<String>) {
        self.status.send_replace(SimStatus {
            phase,
            reg_id,
            last_error,
        });
    }

    fn reset(&self) {
        *self.objects.lock() = self.config.fixture();
        self.observations.lock().clear();
        *self.boot.lock() = Instant::now();
        if let Some(dm) = self.dm.lock().take() {
            self.endpoint.remove_session(dm);
        }
    }

    async fn bootstrap(&self) -> Result<BootstrapConfig, SimError> {
        let c = &self.config;
        let fail = |e: String| SimError::BootstrapFailed(e);
        let addr = resolve_uri(&c.bootstrap_uri).await.map_err(|e| fail(e.to_string()))?;
        let result = request_bootstrap(&self.endpoint, addr, &c.endpoint, &c.bootstrap_identity, &c.bootstrap_secret).await;
        self.endpoint.remove_session(addr);
        let cfg = result.map_err(|e| fail(e.to_string()))?;
        let mut objects = self.objects.lock();
        objects.set(objects::SECURITY_SERVER_URI, ResourceValue::Text(cfg.server_uri.clone()));
        objects.set(objects::SECURITY_IDENTITY, ResourceValue::Text(cfg.server_psk_identity.clone()));
        objects.set(objects::SECURITY_SECRET, ResourceValue::Opaque(cfg.server_psk_secret.clone()));
        Ok(cfg)
    }

    async fn register(&self, cfg: &BootstrapConfig) -> Result<(SocketAddr, String), SimError> {
        let fail = |e: String| SimError::RegisterFailed(e);
        let dm = resolve_uri(&cfg.server_uri).await.map_err(|e| fail(e.to_string()))?;
        self.endpoint
            .handshake(dm, &self.config.endpoint, &cfg.server_psk_identity, &cfg.server_psk_secret)
            .await
            .map_err(|e| fail(e.to_string()))?;
        *self.dm.lock() = Some(dm);
        let lifetime = self.objects.lock().lifetime_s();
        let req = Message::request(Code::Post, format!("/rd?ep={}&lt={lifetime}", self.config.endpoint))
            .with_payload(format_links(&ObjectStore::links()));
        let resp = self.endpoint.request(dm, req).await.map_err(|e| fail(e.to_string()))?;
        if resp.code != Code::Created {
            self.endpoint.remove_session(dm);
            return Err(fail(format!("server answered {}", resp.code)));
        }
        let reg_id = String::from_utf8(resp.payload).map_err(|_| fail("bad registration id".into()))?;
        Ok((dm, reg_id))
    }

    async fn connect(&self) -> Result<(SocketAddr, String), SimError> {
        self.set_status(Phase::Bootstrapping, None, None);
        let cfg = match self.bootstrap().await {
            Ok(cfg) => cfg,
            Err(e) => {
                self.counters.lock().bootstrap_failures += 1;
                return Err(e);
            }
        };
        self.set_status(Phase::Registering, None, None);
        match self.register(&cfg).await {
            Ok(r) => {
                self.counters.lock().registrations += 1;
                Ok(r)
            }
            Err(e) => {
                self.counters.lock().register_failures += 1;
                Err(e)
            }
        }
    }

    async fn update(&self, dm: SocketAddr, reg_id: &str) -> bool {
        let lifetime = self.objects.lock().lifetime_s();
        let req = Message::request(Code::Post, format!("/rd/{reg_id}?lt={lifetime}"));
        match self.endpoint.request(dm, req).await {
            Ok(resp) if resp.code == Code::Changed => {
                self.counters.lock().updates += 1;
                true
            }
            Ok(resp) => {
                tracing::info!(endpoint = %self.config.endpoint, code = %resp.code, "registration update refused");
                false
            }
            Err(e) => {
                tracing::info!(endpoint = %self.config.endpoint, error = %e, "registration update failed");
                false
            }
        }
    }

    async fn deregister(&self, dm: SocketAddr, reg_id: &str) {
        let req = Message::request(Code::Delete, format!("/rd/{reg_id}"));
        if let Err(e) = self.endpoint.request(dm, req).await {
            tracing::debug!(endpoint = %self.config.endpoint, error = %e, "deregistration not acknowledged");
        }
    }

    async fn tick(&self, dm: SocketAddr) {
        let t = self.boot.lock().elapsed().as_secs();
        let temp = self.config.temperature().at(t);
        self.objects.lock().set(objects::TEMPERATURE, ResourceValue::Float(temp));
        let observed: Vec<(Path, Vec<u8>)> = self
            .observations
            .lock()
            .iter()
            .map(|(p, t)| (*p, t.clone()))
            .collect();
        for (path, token) in observed {
            let Ok(value) = self.objects.lock().read(&path) else {
                continue;
            };
            let msg = Message::new(MessageType::Non, Code::Content, path.to_string())
                .with_token(token)
                .with_payload(value.encode());
            if self.endpoint.send_non(dm, msg).await.is_ok() {
                self.counters.lock().notifications += 1;
            }
        }
    }

    fn handle(&self, msg: &Message) -> (Code, Vec<u8>, Option<Action>) {
        let Ok(path) = msg.path_only().parse::<Path>() else {
            return (Code::NotFound, Vec::new(), None);
        };
        let mut objects = self.objects.lock();
        let result = match msg.code {
            Code::Get => objects.read(&path).map(|v| {
                match msg.observe {
                    Observe::Register => {
                        self.observations.lock().insert(path, msg.token.clone());
                    }
                    Observe::Deregister => {
                        self.observations.lock().remove(&path);
                    }
                    Observe::None => {}
                }
                (Code::Content, v.encode(), None)
            }),
            Code::Put => match ResourceValue::decode(&msg.payload) {
                Ok(v) => objects.write(&path, v).map(|()| {
                    let action = (path == objects::SERVER_LIFETIME).then_some(Action::UpdateRegistration);
                    (Code::Changed, Vec::new(), action)
                }),
                Err(_) => Err(Code::BadRequest),
            },
            Code::Post => objects.execute(&path).map(|a| (Code::Changed, Vec::new(), Some(a))),
            _ => Err(Code::MethodNotAllowed),
        };
        result.unwrap_or_else(|code| (code, Vec::new(), None))
    }
}

async fn respond_loop(shared: Arc<Shared>, mut inbound: mpsc::Receiver<Inbound>, control: mpsc::Sender<Control>) {
    while let Some(item) = inbound.recv().await {
        let Inbound::Request { peer, msg } = item else {
            continue;
        };
        let from_server = *shared.dm.lock() == Some(peer) && shared.endpoint.session(peer).is_some();
        let (code, payload, action) = if from_server {
            shared.handle(&msg)
        } else {
            (Code::Unauthorized, Vec::new(), None)
        };
        if let Err(e) = shared.endpoint.respond(peer, &msg, code, payload).await {
            tracing::debug!(%peer, error = %e, "response not sent");
        }
        let c = match action {
            Some(Action::Reboot) => Control::Reboot,
            Some(Action::UpdateRegistration) => Control::Update,
            None => continue,
        };
        let _ = control.send(c).await;
    }
}

enum Exit {
    Restart,
    Stop,
}

async fn lifecycle(shared: Arc<Shared>, mut control: mpsc::Receiver<Control>) {
    let c = shared.config.clone();
    let mut failures = 0u32;
    loop {
        shared.reset();
        let connected = tokio::select! {
            r = shared.connect() => r,
            cmd = control.recv() => match cmd {
                None | Some(Control::Stop) => break,
                Some(_) => continue,
            },
        };
        match connected {
            Ok((dm, reg_id)) => {
                failures = 0;
                tracing::info!(endpoint = %c.endpoint, %reg_id, "registered");
                match registered(&shared, dm, reg_id, &mut control).await {
                    Exit::Restart => continue,
                    Exit::Stop => break,
                }
            }
            Err(e) => {
                let delay = backoff_delay(c.backoff_initial, c.backoff_max, failures);
                failures = failures.saturating_add(1);
                tracing::info!(endpoint = %c.endpoint, error = %e, ?delay, "retrying");
                shared.set_status(Phase::Backoff, None, Some(e.to_string()));
                tokio::select! {
                    _ = tokio::time::sleep(delay) => {}
                    cmd = control.recv() => if matches!(cmd, None | Some(Control::Stop)) { break },
                }
            }
        }
    }
    shared.set_status(Phase::Stopped, None, None);
}

async fn registered(shared: &Shared, dm: SocketAddr, reg_id: String, control: &mut mpsc::Receiver<Control>) -> Exit {
    shared.set_status(Phase::Registered, Some(reg_id.clone()), None);
    let half_lifetime = || Duration::from_millis(shared.objects.lock().lifetime_s() * 500);
    let mut next_update = tokio::time::Instant::now() + half_lifetime();
    let period = shared.config.temp_period;
    let mut ticker = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
    loop {
        tokio::select! {
            _ = tokio::time::sleep_until(next_update) => {
                if !shared.update(dm, &reg_id).await {
                    return Exit::Restart;
                }
                next_update = tokio::time::Instant::now() + half_lifetime();
            }
            _ = ticker.tick() => shared.tick(dm).await,
            cmd = control.recv() => match cmd {
                None | Some(Control::Stop) => {
                    shared.deregister(dm, &reg_id).await;
                    return Exit::Stop;
                }
                Some(Control::Reboot) => {
                    tracing::info!(endpoint = %shared.config.endpoint, "rebooting");
                    shared.counters.lock().reboots += 1;
                    shared.deregister(dm, &reg_id).await;
                    return Exit::Restart;
                }
                Some(Control::Update) => {
                    if !shared.update(dm, &reg_id).await {
                        return Exit::Restart;
                    }
                    next_update = tokio::time::Instant::now() + half_lifetime();
                }
            },
        }
    }
}
