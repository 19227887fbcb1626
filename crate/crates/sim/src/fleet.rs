use std::collections::HashMap;
use std::io;
use std::time::Duration;

use lm2m_core::wire::RetryPolicy;

use crate::device::{SimConfig, SimHandle, BACKOFF_INITIAL, DEFAULT_LIFETIME_S, DEFAULT_TEMP_PERIOD};

/// Bootstrap credentials of one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceCredentials {
    pub endpoint: String,
    pub identity: String,
    pub secret: Vec<u8>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct PskFileError {
    pub line: usize,
    pub reason: String,
}

/// Parses `endpoint,identity,hex-secret` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_psk_file(text: &str) -> Result<Vec<DeviceCredentials>, PskFileError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| PskFileError {
            line: i + 1,
            reason: reason.to_owned(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [endpoint, identity, secret] = fields[..] else {
            return Err(err("expected endpoint,identity,hex-secret"));
        };
        if endpoint.is_empty() || identity.is_empty() {
            return Err(err("empty endpoint or identity"));
        }
        let secret = hex::decode(secret).map_err(|_| err("secret is not hex"))?;
        out.push(DeviceCredentials {
            endpoint: endpoint.to_owned(),
            identity: identity.to_owned(),
            secret,
        });
    }
    Ok(out)
}

pub fn format_psk_line(c: &DeviceCredentials) -> String {
    format!("{},{},{}", c.endpoint, c.identity, hex::encode(&c.secret))
}

/// Endpoint name of fleet member `index` (1-based): `<prefix>-0001`.
pub fn fleet_endpoint(prefix: &str, index: usize) -> String {
    format!("{prefix}-{index:04}")
}

#[derive(Clone)]
pub struct FleetConfig {
    pub bootstrap_uri: String,
    pub credentials: HashMap<String, DeviceCredentials>,
    pub lifetime_s: u64,
    pub temp_period: Duration,
    pub retry: RetryPolicy,
    pub backoff_initial: Duration,
}

impl FleetConfig {
    pub fn new(bootstrap_uri: &str, credentials: impl IntoIterator<Item = DeviceCredentials>) -> Self {
        Self {
            bootstrap_uri: bootstrap_uri.to_owned(),
            credentials: credentials.into_iter().map(|c| (c.endpoint.clone(), c)).collect(),
            lifetime_s: DEFAULT_LIFETIME_S,
            temp_period: DEFAULT_TEMP_PERIOD,
            retry: RetryPolicy::default(),
            backoff_initial: BACKOFF_INITIAL,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FleetError {
    #[error("a fleet needs at least one device")]
    Empty,
    #[error("no credentials for {0}")]
    MissingCredentials(String),
    #[error("no local address available: {0}")]
    AddrExhausted(io::Error),
    #[error(transparent)]
    Io(io::Error),
}

pub struct Fleet {
    devices: Vec<SimHandle>,
}

impl Fleet {
    pub fn devices(&self) -> &[SimHandle] {
        &self.devices
    }

    pub fn get(&self, endpoint: &str) -> Option<&SimHandle> {
        self.devices.iter().find(|d| d.endpoint() == endpoint)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Waits until every device is registered; returns how many made it.
    pub async fn wait_all_registered(&self, timeout: Duration) -> usize {
        let waits = self.devices.iter().map(|d| d.wait_registered(timeout));
        futures::future::join_all(waits)
            .await
            .iter()
            .filter(|r| r.is_some())
            .count()
    }

    pub async fn stop(&self) {
        futures::future::join_all(self.devices.iter().map(|d| d.stop())).await;
    }
}

/// Starts `n` devices named `<prefix>-0001`... using credentials from
/// `config`.
pub async fn spawn_fleet(n: usize, prefix: &str, config: &FleetConfig) -> Result<Fleet, FleetError> {
    if n == 0 {
        return Err(FleetError::Empty);
    }
    let names: Vec<String> = (1..=n).map(|i| fleet_endpoint(prefix, i)).collect();
    if let Some(missing) = names.iter().find(|ep| !config.credentials.contains_key(*ep)) {
        return Err(FleetError::MissingCredentials(missing.clone()));
    }
    let mut devices = Vec::with_capacity(n);
    for (i, ep) in names.iter().enumerate() {
        let cred = &config.credentials[ep];
        let mut c = SimConfig::new(ep, &config.bootstrap_uri, &cred.identity, &cred.secret);
        c.lifetime_s = config.lifetime_s;
        c.temp_period = config.temp_period;
        c.temp_seed = i as u64;
        c.retry = config.retry;
        c.backoff_initial = config.backoff_initial;
        let handle = SimHandle::spawn(c).await.map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse | io::ErrorKind::AddrNotAvailable => FleetError::AddrExhausted(e),
            _ => FleetError::Io(e),
        })?;
        devices.push(handle);
    }
    Ok(Fleet { devices })
}
