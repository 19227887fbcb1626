use std::collections::HashMap;
use std::net::SocketAddr;

use lm2m_core::wire::Path;
use rand::Rng;
use serde::Serialize;

pub const DEFAULT_LIFETIME_S: u64 = 86_400;
pub const REG_ID_LEN: usize = 8;

/// One live client registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrationEntry {
    pub reg_id: String,
    pub endpoint: String,
    pub remote_addr: SocketAddr,
    pub lifetime_s: u64,
    pub last_update_ms: u64,
    pub object_links: Vec<Path>,
}

impl RegistrationEntry {
    pub fn expired(&self, now_ms: u64) -> bool {
        now_ms.saturating_sub(self.last_update_ms) > self.lifetime_s.saturating_mul(1000)
    }
}

/// Registrations indexed by id and by endpoint name.
#[derive(Debug, Default)]
pub struct Registry {
    by_id: HashMap<String, RegistrationEntry>,
    by_endpoint: HashMap<String, String>,
}

fn new_reg_id() -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    let mut rng = rand::thread_rng();
    (0..REG_ID_LEN)
        .map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char)
        .collect()
}

impl Registry {
    /// Creates a registration, replacing any previous one for `endpoint`.
    /// Returns the new id and the replaced entry.
    pub fn register(
        &mut self,
        endpoint: &str,
        remote_addr: SocketAddr,
        lifetime_s: u64,
        object_links: Vec<Path>,
        now_ms: u64,
    ) -> (String, Option<RegistrationEntry>) {
        let replaced = self
            .by_endpoint
            .remove(endpoint)
            .and_then(|old| self.by_id.remove(&old));
        let reg_id = loop {
            let id = new_reg_id();
            if !self.by_id.contains_key(&id) {
                break id;
            }
        };
        self.by_endpoint.insert(endpoint.to_owned(), reg_id.clone());
        self.by_id.insert(
            reg_id.clone(),
            RegistrationEntry {
                reg_id: reg_id.clone(),
                endpoint: endpoint.to_owned(),
                remote_addr,
                lifetime_s,
                last_update_ms: now_ms,
                object_links,
            },
        );
        (reg_id, replaced)
    }

    /// Refreshes a live registration. Expired or unknown ids yield `None`.
    pub fn update(
        &mut self,
        reg_id: &str,
        lifetime_s: Option<u64>,
        remote_addr: SocketAddr,
        now_ms: u64,
    ) -> Option<&RegistrationEntry> {
        if self.by_id.get(reg_id)?.expired(now_ms) {
            self.deregister(reg_id);
            return None;
        }
        let e = self.by_id.get_mut(reg_id)?;
        e.last_update_ms = now_ms;
        e.remote_addr = remote_addr;
        if let Some(lt) = lifetime_s {
            e.lifetime_s = lt;
        }
        Some(e)
    }

    pub fn deregister(&mut self, reg_id: &str) -> Option<RegistrationEntry> {
        let e = self.by_id.remove(reg_id)?;
        self.by_endpoint.remove(&e.endpoint);
        Some(e)
    }

    pub fn get(&self, reg_id: &str, now_ms: u64) -> Option<&RegistrationEntry> {
        self.by_id.get(reg_id).filter(|e| !e.expired(now_ms))
    }

    pub fn by_endpoint(&self, endpoint: &str, now_ms: u64) -> Option<&RegistrationEntry> {
        let id = self.by_endpoint.get(endpoint)?;
        self.get(id, now_ms)
    }

    /// Live registrations ordered by endpoint name.
    pub fn list(&self, now_ms: u64) -> Vec<RegistrationEntry> {
        let mut v: Vec<_> = self
            .by_id
            .values()
            .filter(|e| !e.expired(now_ms))
            .cloned()
            .collect();
        v.sort_by(|a, b| a.endpoint.cmp(&b.endpoint));
        v
    }

    /// Removes and returns expired registrations.
    pub fn sweep(&mut self, now_ms: u64) -> Vec<RegistrationEntry> {
        let expired: Vec<String> = self
            .by_id
            .values()
            .filter(|e| e.expired(now_ms))
            .map(|e| e.reg_id.clone())
            .collect();
        expired.iter().filter_map(|id| self.deregister(id)).collect()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
