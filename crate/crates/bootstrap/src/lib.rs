//! Bootstrap server.
//!
//! A client first completes the PSK handshake with its bootstrap identity,
//! then sends `POST /bs?ep=<endpoint>`. The server looks the endpoint up in
//! `ClientStore` on every request and answers `2.04 Changed` with the
//! device-management server URI and credentials.
//!
//! The LwM2M bootstrap sequence writes Security and Server object instances
//! one by one; here the whole [`BootstrapConfig`] travels in one payload and
//! the client applies it to objects 0 and 1 itself.

use std::net::SocketAddr;
use std::sync::Arc;

use lm2m_core::canon::Canonical;
use lm2m_core::directory::{ClientDirectory, CredentialKind, DirectoryResolver};
use lm2m_core::wire::{
    BootstrapConfig, CoapEndpoint, Code, Inbound, Message, RetryPolicy, ServerHandshakes, Tap,
    TransportError,
};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

pub const BOOTSTRAP_PATH: &str = "/bs";

#[derive(Clone)]
pub struct BootstrapOptions {
    pub bind: SocketAddr,
    pub retry: RetryPolicy,
    pub tap: Option<Tap>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 5783)),
            retry: RetryPolicy::default(),
            tap: None,
        }
    }
}

struct Server {
    endpoint: Arc<CoapEndpoint>,
    directory: Arc<dyn ClientDirectory>,
    resolver: DirectoryResolver,
    handshakes: ServerHandshakes,
}

/// A running bootstrap server. Dropping it stops the server.
pub struct BootstrapServer {
    endpoint: Arc<CoapEndpoint>,
    task: JoinHandle<()>,
}

impl Drop for BootstrapServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl BootstrapServer {
    pub async fn spawn(
        opts: BootstrapOptions,
        directory: Arc<dyn ClientDirectory>,
    ) -> std::io::Result<Self> {
        let (endpoint, inbound) = CoapEndpoint::bind_with_tap(opts.bind, opts.retry, opts.tap).await?;
        let server = Arc::new(Server {
            endpoint: endpoint.clone(),
            directory: directory.clone(),
            resolver: DirectoryResolver {
                directory,
                kind: CredentialKind::Bootstrap,
            },
            handshakes: ServerHandshakes::default(),
        });
        let task = tokio::spawn(serve(server, inbound));
        Ok(Self { endpoint, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.endpoint.local_addr()
    }

    pub fn uri(&self) -> String {
        format!("coap://{}", self.local_addr())
    }

    /// Waits until the server stops (it only stops on error or abort).
    pub async fn join(mut self) {
        let _ = (&mut self.task).await;
    }
}

async fn serve(server: Arc<Server>, mut inbound: mpsc::Receiver<Inbound>) {
    while let Some(msg) = inbound.recv().await {
        let Inbound::Request { peer, msg } = msg else {
            continue;
        };
        let server = server.clone();
        tokio::spawn(async move {
            if let Err(e) = server.handle(peer, msg).await {
                tracing::warn!(%peer, error = %e, "bootstrap request failed");
            }
        });
    }
}

impl Server {
    async fn handle(&self, peer: SocketAddr, msg: Message) -> Result<(), TransportError> {
        if msg.is_handshake() {
            if let Some(s) = self
                .handshakes
                .handle(&self.endpoint, peer, &msg, &self.resolver)
                .await?
            {
                tracing::debug!(%peer, endpoint = %s.peer_identity, "bootstrap session established");
            }
            return Ok(());
        }
        if msg.path_only() != BOOTSTRAP_PATH {
            return self.reply(peer, &msg, Code::NotFound, Vec::new()).await;
        }
        if msg.code != Code::Post {
            return self.reply(peer, &msg, Code::MethodNotAllowed, Vec::new()).await;
        }
        let Some(requested) = msg.query("ep") else {
            return self.reply(peer, &msg, Code::BadRequest, Vec::new()).await;
        };
        let authenticated = self.endpoint.session(peer).map(|s| s.peer_identity);
        if authenticated.as_deref() != Some(requested) {
            tracing::info!(%peer, endpoint = requested, "bootstrap refused: session identity mismatch");
            return self.reply(peer, &msg, Code::Unauthorized, Vec::new()).await;
        }
        let record = match self.directory.lookup(requested).await {
            Ok(Some(r)) => r,
            Ok(None) => return self.reply(peer, &msg, Code::NotFound, Vec::new()).await,
            Err(e) => {
                tracing::warn!(error = %e, "ClientStore lookup failed");
                return self.reply(peer, &msg, Code::NotFound, Vec::new()).await;
            }
        };
        let config = BootstrapConfig::from(&record);
        tracing::info!(%peer, endpoint = requested, server_uri = %config.server_uri, "client provisioned");
        self.reply(peer, &msg, Code::Changed, config.to_canonical()).await
    }

    async fn reply(&self, peer: SocketAddr, req: &Message, code: Code, payload: Vec<u8>) -> Result<(), TransportError> {
        self.endpoint.respond(peer, req, code, payload).await
    }
}

/// Client side: handshake with the bootstrap credentials, then request the
/// configuration for `endpoint`.
pub async fn request_bootstrap(
    client: &CoapEndpoint,
    server: SocketAddr,
    endpoint: &str,
    identity: &str,
    secret: &[u8],
) -> Result<BootstrapConfig, BootstrapError> {
    client.handshake(server, endpoint, identity, secret).await?;
    let req = Message::request(Code::Post, format!("{BOOTSTRAP_PATH}?ep={endpoint}"));
    let resp = client.request(server, req).await?;
    if resp.code != Code::Changed {
        return Err(BootstrapError::Refused(resp.code));
    }
    BootstrapConfig::from_canonical(&resp.payload).map_err(|_| BootstrapError::BadPayload)
}

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("bootstrap transport: {0}")]
    Transport(#[from] TransportError),
    #[error("bootstrap refused with {0}")]
    Refused(Code),
    #[error("malformed bootstrap config")]
    BadPayload,
}
