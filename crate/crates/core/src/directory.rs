//! Client credential lookup.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::contracts::{ClientRecord, ContractCall};
use crate::ledger::{Ledger, LedgerError};
use crate::wire::{Hello, PskResolver};

#[async_trait::async_trait]
pub trait ClientDirectory: Send + Sync {
    /// `Ok(None)` when the endpoint is not registered.
    async fn lookup(&self, endpoint: &str) -> Result<Option<ClientRecord>, LedgerError>;
}

/// Reads `ClientStore.getClient` on every lookup.
#[derive(Clone)]
pub struct LedgerDirectory {
    ledger: Arc<Ledger>,
}

impl LedgerDirectory {
    pub fn new(ledger: Arc<Ledger>) -> Self {
        Self { ledger }
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }
}

#[async_trait::async_trait]
impl ClientDirectory for LedgerDirectory {
    async fn lookup(&self, endpoint: &str) -> Result<Option<ClientRecord>, LedgerError> {
        match self
            .ledger
            .query_as::<ClientRecord>(&ContractCall::get_client(endpoint))
            .await
        {
            Ok(r) => Ok(Some(r)),
            Err(e) if e.is_not_found() => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Plain map, for baseline measurements and tests.
#[derive(Default)]
pub struct InMemoryDirectory {
    clients: RwLock<HashMap<String, ClientRecord>>,
}

impl InMemoryDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, record: ClientRecord) {
        self.clients.write().insert(record.endpoint.clone(), record);
    }

    pub fn remove(&self, endpoint: &str) -> Option<ClientRecord> {
        self.clients.write().remove(endpoint)
    }

    pub fn len(&self) -> usize {
        self.clients.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[async_trait::async_trait]
impl ClientDirectory for InMemoryDirectory {
    async fn lookup(&self, endpoint: &str) -> Result<Option<ClientRecord>, LedgerError> {
        Ok(self.clients.read().get(endpoint).cloned())
    }
}

/// Which credential pair a server accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CredentialKind {
    Bootstrap,
    Server,
}

/// Resolves handshake PSKs from a directory: the HELLO endpoint must exist
/// and its PSK identity must match the stored one.
pub struct DirectoryResolver {
    pub directory: Arc<dyn ClientDirectory>,
    pub kind: CredentialKind,
}

#[async_trait::async_trait]
impl PskResolver for DirectoryResolver {
    async fn resolve(&self, hello: &Hello) -> Option<Vec<u8>> {
        let record = match self.directory.lookup(&hello.endpoint).await {
            Ok(Some(r)) => r,
            Ok(None) => return None,
            Err(e) => {
                tracing::warn!(error = %e, "credential lookup failed");
                return None;
            }
        };
        let (identity, secret) = match self.kind {
            CredentialKind::Bootstrap => (record.bootstrap_psk_identity, record.bootstrap_psk_secret),
            CredentialKind::Server => (record.server_psk_identity, record.server_psk_secret),
        };
        (identity == hello.identity).then_some(secret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::fixtures;
    use crate::ledger::ChainConfig;

    #[tokio::test]
    async fn ledger_and_map_agree() {
        let ledger = Arc::new(Ledger::in_memory(ChainConfig::instant()));
        let rec = fixtures::client("dev-1");
        ledger.submit_call("admin", ContractCall::add_client(&rec)).unwrap();
        ledger.mine_block().unwrap();
        let map = InMemoryDirectory::new();
        map.insert(rec.clone());
        let dirs: [Arc<dyn ClientDirectory>; 2] = [Arc::new(LedgerDirectory::new(ledger)), Arc::new(map)];
        for d in dirs {
            assert_eq!(d.lookup("dev-1").await.unwrap(), Some(rec.clone()));
            assert_eq!(d.lookup("dev-2").await.unwrap(), None);
        }
    }

    #[tokio::test]
    async fn resolver_checks_identity() {
        let rec = fixtures::client("dev-1");
        let map = Arc::new(InMemoryDirectory::new());
        map.insert(rec.clone());
        let r = DirectoryResolver {
            directory: map,
            kind: CredentialKind::Server,
        };
        let hello = |ident: &str, ep: &str| Hello {
            client_nonce: [0; 16],
            identity: ident.into(),
            endpoint: ep.into(),
        };
        assert_eq!(
            r.resolve(&hello(&rec.server_psk_identity, "dev-1")).await,
            Some(rec.server_psk_secret.clone())
        );
        assert_eq!(r.resolve(&hello(&rec.bootstrap_psk_identity, "dev-1")).await, None);
        assert_eq!(r.resolve(&hello(&rec.server_psk_identity, "dev-9")).await, None);
    }
}
