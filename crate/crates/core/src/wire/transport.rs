use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU16, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use tokio::net::UdpSocket;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use super::message::{Code, Message, MessageType, WireError};
use super::psk::{
    HandshakeError, Hello, Initiator, PskSession, Responder, CHALLENGE_PATH, FINISH_PATH, HELLO_PATH,
};

const DEDUP_LIFETIME: Duration = Duration::from_secs(60);
const MAX_DATAGRAM: usize = 65_535 + 512;

/// Confirmable retransmission schedule.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub initial_timeout: Duration,
    pub max_retransmit: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            initial_timeout: Duration::from_secs(2),
            max_retransmit: 4,
        }
    }
}

impl RetryPolicy {
    pub fn fast() -> Self {
        Self {
            initial_timeout: Duration::from_millis(200),
            max_retransmit: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("no response after retransmissions")]
    Timeout,
    #[error("endpoint closed")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("handshake failed: {0}")]
    Handshake(#[from] HandshakeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Observer for raw datagrams, used for transcript inspection.
pub type Tap = Arc<dyn Fn(Direction, SocketAddr, &[u8]) + Send + Sync>;

/// A message delivered to the owner of an endpoint.
#[derive(Debug, Clone)]
pub enum Inbound {
    /// A CON or NON request; answer with [`CoapEndpoint::respond`].
    Request { peer: SocketAddr, msg: Message },
    /// A NON response that is not tied to an outstanding exchange.
    Notification { peer: SocketAddr, msg: Message },
}

enum Cached {
    InProgress,
    Done(Vec<u8>),
}

struct Shared {
    socket: UdpSocket,
    sessions: Mutex<HashMap<SocketAddr, PskSession>>,
    exchanges: Mutex<HashMap<(SocketAddr, u16), oneshot::Sender<Message>>>,
    dedup: Mutex<HashMap<(SocketAddr, u16), (Instant, Cached)>>,
    next_mid: AtomicU16,
    dropped: AtomicU64,
    tap: Option<Tap>,
}

impl Shared {
    async fn send_raw(&self, peer: SocketAddr, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(tap) = &self.tap {
            tap(Direction::Sent, peer, bytes);
        }
        self.socket.send_to(bytes, peer).await.map(|_| ())
    }

    /// Encodes and seals unless the message is part of a handshake.
    fn frame(&self, peer: SocketAddr, msg: &Message) -> Result<Vec<u8>, WireError> {
        let bytes = msg.encode()?;
        if msg.is_handshake() {
            return Ok(bytes);
        }
        match self.sessions.lock().get(&peer) {
            Some(s) if s.established => Ok(s.seal(&bytes).expect("established session")),
            _ => Ok(bytes),
        }
    }

    /// Opens a datagram: sealed with the peer session, or a plain handshake
    /// message. Anything else is dropped.
    fn unframe(&self, peer: SocketAddr, bytes: &[u8]) -> Option<Message> {
        let session = self.sessions.lock().get(&peer).cloned();
        if let Some(s) = session.filter(|s| s.established) {
            if let Ok(inner) = s.open(bytes) {
                if let Ok(m) = Message::decode(inner) {
                    return Some(m);
                }
            }
            return Message::decode(bytes).ok().filter(|m| m.is_handshake());
        }
        Message::decode(bytes).ok()
    }
}

/// Datagram endpoint: request/response matching, CON retransmission,
/// duplicate suppression and per-peer sealing.
pub struct CoapEndpoint {
    shared: Arc<Shared>,
    retry: RetryPolicy,
    recv_task: JoinHandle<()>,
}

impl Drop for CoapEndpoint {
    fn drop(&mut self) {
        self.recv_task.abort();
    }
}

impl CoapEndpoint {
    pub async fn bind(
        addr: SocketAddr,
        retry: RetryPolicy,
    ) -> std::io::Result<(Arc<Self>, mpsc::Receiver<Inbound>)> {
        Self::bind_with_tap(addr, retry, None).await
    }

    pub async fn bind_with_tap(
        addr: SocketAddr,
        retry: RetryPolicy,
        tap: Option<Tap>,
    ) -> std::io::Result<(Arc<Self>, mpsc::Receiver<Inbound>)> {
        let socket = UdpSocket::bind(addr).await?;
        let shared = Arc::new(Shared {
            socket,
            sessions: Mutex::default(),
            exchanges: Mutex::default(),
            dedup: Mutex::default(),
            next_mid: AtomicU16::new(rand::random()),
            dropped: AtomicU64::new(0),
            tap,
        });
        let (tx, rx) = mpsc::channel(4096);
        let recv_task = tokio::spawn(recv_loop(shared.clone(), tx));
        Ok((
            Arc::new(Self {
                shared,
                retry,
                recv_task,
            }),
            rx,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.shared.socket.local_addr().expect("bound socket")
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Datagrams that failed to decode, failed the seal check, or found a
    /// full inbound queue.
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn next_message_id(&self) -> u16 {
        self.shared.next_mid.fetch_add(1, Ordering::Relaxed)
    }

    pub fn set_session(&self, peer: SocketAddr, session: PskSession) {
        self.shared.sessions.lock().insert(peer, session);
    }

    pub fn session(&self, peer: SocketAddr) -> Option<PskSession> {
        self.shared.sessions.lock().get(&peer).cloned()
    }

    pub fn remove_session(&self, peer: SocketAddr) -> Option<PskSession> {
        self.shared.sessions.lock().remove(&peer)
    }

    /// Sends a confirmable request and waits for the piggybacked response.
    pub async fn request(&self, peer: SocketAddr, mut msg: Message) -> Result<Message, TransportError> {
        msg.mtype = MessageType::Con;
        msg.message_id = self.next_message_id();
        let key = (peer, msg.message_id);
        let (tx, mut rx) = oneshot::channel();
        self.shared.exchanges.lock().insert(key, tx);
        let result = async {
            let bytes = self.shared.frame(peer, &msg)?;
            let mut wait = self.retry.initial_timeout;
            for _ in 0..=self.retry.max_retransmit {
                self.shared.send_raw(peer, &bytes).await?;
                match tokio::time::timeout(wait, &mut rx).await {
                    Ok(Ok(resp)) => return Ok(resp),
                    Ok(Err(_)) => return Err(TransportError::Closed),
                    Err(_) => wait *= 2,
                }
            }
            Err(TransportError::Timeout)
        }
        .await;
        self.shared.exchanges.lock().remove(&key);
        result
    }

    /// Fire-and-forget non-confirmable message.
    pub async fn send_non(&self, peer: SocketAddr, mut msg: Message) -> Result<(), TransportError> {
        msg.mtype = MessageType::Non;
        msg.message_id = self.next_message_id();
        let bytes = self.shared.frame(peer, &msg)?;
        self.shared.send_raw(peer, &bytes).await?;
        Ok(())
    }

    /// Answers `req`: a piggybacked ACK for CON, a NON otherwise.
    pub async fn respond(
        &self,
        peer: SocketAddr,
        req: &Message,
        code: Code,
        payload: Vec<u8>,
    ) -> Result<(), TransportError> {
        let mut resp = req.ack(code).with_payload(payload);
        if req.mtype != MessageType::Con {
            resp.mtype = MessageType::Non;
            resp.message_id = self.next_message_id();
        }
        let bytes = self.shared.frame(peer, &resp)?;
        if req.mtype == MessageType::Con {
            self.shared
                .dedup
                .lock()
                .insert((peer, req.message_id), (Instant::now(), Cached::Done(bytes.clone())));
        }
        self.shared.send_raw(peer, &bytes).await?;
        Ok(())
    }

    /// Runs the client side of the PSK handshake and installs the session.
    pub async fn handshake(
        &self,
        peer: SocketAddr,
        endpoint: &str,
        identity: &str,
        psk: &[u8],
    ) -> Result<PskSession, TransportError> {
        let init = Initiator::new(endpoint, identity, psk);
        let hello = Message::request(Code::Post, HELLO_PATH).with_payload(init.hello());
        let resp = self.request(peer, hello).await?;
        match resp.code {
            Code::Content if resp.path == HELLO_PATH || resp.path == CHALLENGE_PATH => {}
            Code::Unauthorized => return Err(HandshakeError::UnknownIdentity.into()),
            _ => return Err(HandshakeError::Malformed.into()),
        }
        let (finish, session) = init.on_challenge(&resp.payload)?;
        let resp = self
            .request(peer, Message::request(Code::Post, FINISH_PATH).with_payload(finish))
            .await?;
        match resp.code {
            Code::Changed => {
                self.set_session(peer, session.clone());
                Ok(session)
            }
            Code::Unauthorized => Err(HandshakeError::BadProof.into()),
            _ => Err(HandshakeError::Malformed.into()),
        }
    }
}

async fn recv_loop(shared: Arc<Shared>, tx: mpsc::Sender<Inbound>) {
    let mut buf = vec![0u8; MAX_DATAGRAM];
    let mut last_sweep = Instant::now();
    loop {
        let (n, peer) = match shared.socket.recv_from(&mut buf).await {
            Ok(v) => v,
            // ICMP port-unreachable surfaces here on some platforms
            Err(_) => continue,
        };
        let bytes = &buf[..n];
        if let Some(tap) = &shared.tap {
            tap(Direction::Received, peer, bytes);
        }
        if last_sweep.elapsed() > Duration::from_secs(5) {
            last_sweep = Instant::now();
            shared
                .dedup
                .lock()
                .retain(|_, (t, _)| t.elapsed() < DEDUP_LIFETIME);
        }
        let Some(msg) = shared.unframe(peer, bytes) else {
            shared.dropped.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        match msg.mtype {
            MessageType::Ack | MessageType::Rst => {
                if let Some(waiter) = shared.exchanges.lock().remove(&(peer, msg.message_id)) {
                    let _ = waiter.send(msg);
                }
            }
            MessageType::Con | MessageType::Non if msg.code.is_request() => {
                if msg.mtype == MessageType::Con {
                    let key = (peer, msg.message_id);
                    let cached = {
                        let mut d = shared.dedup.lock();
                        match d.get(&key) {
                            Some((_, Cached::Done(b))) => Some(Some(b.clone())),
                            Some((_, Cached::InProgress)) => Some(None),
                            None => {
                                d.insert(key, (Instant::now(), Cached::InProgress));
                                None
                            }
                        }
                    };
                    if let Some(replay) = cached {
                        if let Some(b) = replay {
                            let _ = shared.send_raw(peer, &b).await;
                        }
                        continue;
                    }
                }
                if tx.try_send(Inbound::Request { peer, msg }).is_err() {
                    shared.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
            _ => {
                if tx.try_send(Inbound::Notification { peer, msg }).is_err() {
                    shared.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}

/// Looks up the PSK for a HELLO. Returns the secret when the endpoint is
/// known and the identity matches.
#[async_trait::async_trait]
pub trait PskResolver: Send + Sync {
    async fn resolve(&self, hello: &Hello) -> Option<Vec<u8>>;
}

/// Server side of the handshake over a [`CoapEndpoint`].
pub struct ServerHandshakes {
    responder: Mutex<Responder<SocketAddr>>,
}

impl Default for ServerHandshakes {
    fn default() -> Self {
        Self {
            responder: Mutex::new(Responder::default()),
        }
    }
}

impl ServerHandshakes {
    /// Handles `/hs/1` and `/hs/3`. Returns the new session once a FINISH
    /// verifies; the session is installed on the endpoint before the reply
    /// is sent. Failures reply 4.01 with an empty payload.
    pub async fn handle(
        &self,
        ep: &CoapEndpoint,
        peer: SocketAddr,
        msg: &Message,
        resolver: &dyn PskResolver,
    ) -> Result<Option<PskSession>, TransportError> {
        match msg.path_only() {
            HELLO_PATH => {
                let hello = match Hello::decode(&msg.payload) {
                    Ok(h) => h,
                    Err(_) => {
                        ep.respond(peer, msg, Code::BadRequest, Vec::new()).await?;
                        return Ok(None);
                    }
                };
                match resolver.resolve(&hello).await {
                    Some(psk) => {
                        let challenge = self.responder.lock().challenge(peer, &hello, &psk);
                        ep.respond(peer, msg, Code::Content, challenge).await?;
                    }
                    None => ep.respond(peer, msg, Code::Unauthorized, Vec::new()).await?,
                }
                Ok(None)
            }
            FINISH_PATH => {
                let result = self.responder.lock().finish(&peer, &msg.payload, Instant::now());
                match result {
                    Ok(session) => {
                        ep.set_session(peer, session.clone());
                        ep.respond(peer, msg, Code::Changed, Vec::new()).await?;
                        Ok(Some(session))
                    }
                    Err(_) => {
                        ep.respond(peer, msg, Code::Unauthorized, Vec::new()).await?;
                        Ok(None)
                    }
                }
            }
            _ => {
                ep.respond(peer, msg, Code::NotFound, Vec::new()).await?;
                Ok(None)
            }
        }
    }
}
