use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::time::{Duration, Instant};

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::canon::{Decoder, Encoder};

pub const NONCE_LEN: usize = 16;
pub const PROOF_LEN: usize = 32;
pub const TAG_LEN: usize = 8;
/// Responder state older than this is discarded.
pub const PENDING_TIMEOUT: Duration = Duration::from_secs(10);

pub const HELLO_PATH: &str = "/hs/1";
pub const CHALLENGE_PATH: &str = "/hs/2";
pub const FINISH_PATH: &str = "/hs/3";

type HmacSha256 = Hmac<Sha256>;

fn mac(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut m = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

fn mac_verify(key: &[u8], parts: &[&[u8]], expected: &[u8]) -> bool {
    let mut m = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        m.update(p);
    }
    m.verify_slice(expected).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandshakeError {
    #[error("unknown identity")]
    UnknownIdentity,
    #[error("proof mismatch")]
    BadProof,
    #[error("handshake timed out")]
    Timeout,
    #[error("malformed handshake message")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("integrity tag mismatch")]
    BadTag,
    #[error("session not established")]
    NotEstablished,
}

/// Keying state shared by both ends after a successful handshake.
#[derive(Clone)]
pub struct PskSession {
    /// Endpoint name the peer authenticated as.
    pub peer_identity: String,
    pub session_key: [u8; 32],
    pub client_nonce: [u8; NONCE_LEN],
    pub server_nonce: [u8; NONCE_LEN],
    pub established: bool,
}

impl fmt::Debug for PskSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PskSession")
            .field("peer_identity", &self.peer_identity)
            .field("established", &self.established)
            .finish_non_exhaustive()
    }
}

impl PskSession {
    fn derive(peer: String, psk: &[u8], cn: [u8; NONCE_LEN], sn: [u8; NONCE_LEN]) -> Self {
        Self {
            peer_identity: peer,
            session_key: mac(psk, &[&cn, &sn, b"session"]),
            client_nonce: cn,
            server_nonce: sn,
            established: true,
        }
    }

    /// Appends the 8-byte integrity tag.
    pub fn seal(&self, msg: &[u8]) -> Result<Vec<u8>, SealError> {
        if !self.established {
            return Err(SealError::NotEstablished);
        }
        let tag = mac(&self.session_key, &[msg]);
        let mut out = Vec::with_capacity(msg.len() + TAG_LEN);
        out.extend_from_slice(msg);
        out.extend_from_slice(&tag[..TAG_LEN]);
        Ok(out)
    }

    /// Checks and strips the tag.
    pub fn open<'a>(&self, sealed: &'a [u8]) -> Result<&'a [u8], SealError> {
        if !self.established {
            return Err(SealError::NotEstablished);
        }
        if sealed.len() < TAG_LEN {
            return Err(SealError::BadTag);
        }
        let (msg, tag) = sealed.split_at(sealed.len() - TAG_LEN);
        let mut m = HmacSha256::new_from_slice(&self.session_key).expect("any key length");
        m.update(msg);
        m.verify_truncated_left(tag).map_err(|_| SealError::BadTag)?;
        Ok(msg)
    }
}

/// First handshake message: client nonce, PSK identity and endpoint name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub client_nonce: [u8; NONCE_LEN],
    pub identity: String,
    pub endpoint: String,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(&self.client_nonce);
        e.str(&self.identity);
        e.str(&self.endpoint);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, HandshakeError> {
        let mut d = Decoder::new(bytes);
        let parse = |d: &mut Decoder| -> Result<Self, crate::canon::CanonError> {
            let client_nonce = d.fixed::<NONCE_LEN>()?;
            let identity = d.string()?;
            let endpoint = d.string()?;
            Ok(Self {
                client_nonce,
                identity,
                endpoint,
            })
        };
        let hello = parse(&mut d).map_err(|_| HandshakeError::Malformed)?;
        d.finish().map_err(|_| HandshakeError::Malformed)?;
        if hello.identity.is_empty() || hello.endpoint.is_empty() {
            return Err(HandshakeError::Malformed);
        }
        Ok(hello)
    }
}

fn random_nonce() -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut n);
    n
}

/// Client side of the handshake.
pub struct Initiator {
    hello: Hello,
    psk: Vec<u8>,
}

impl Initiator {
    pub fn new(endpoint: &str, identity: &str, psk: &[u8]) -> Self {
        Self::with_nonce(endpoint, identity, psk, random_nonce())
    }

    pub fn with_nonce(endpoint: &str, identity: &str, psk: &[u8], nonce: [u8; NONCE_LEN]) -> Self {
        Self {
            hello: Hello {
                client_nonce: nonce,
                identity: identity.to_owned(),
                endpoint: endpoint.to_owned(),
            },
            psk: psk.to_vec(),
        }
    }

    pub fn hello(&self) -> Vec<u8> {
        self.hello.encode()
    }

    /// Verifies the server proof and returns the FINISH payload and session.
    pub fn on_challenge(&self, payload: &[u8]) -> Result<(Vec<u8>, PskSession), HandshakeError> {
        if payload.len() != NONCE_LEN + PROOF_LEN {
            return Err(HandshakeError::Malformed);
        }
        let (sn, proof_s) = payload.split_at(NONCE_LEN);
        let sn: [u8; NONCE_LEN] = sn.try_into().expect("split length");
        let cn = self.hello.client_nonce;
        if !mac_verify(&self.psk, &[&cn, &sn, b"server"], proof_s) {
            return Err(HandshakeError::BadProof);
        }
        let finish = mac(&self.psk, &[&sn, &cn, b"client"]).to_vec();
        let session = PskSession::derive(self.hello.endpoint.clone(), &self.psk, cn, sn);
        Ok((finish, session))
    }
}

struct PendingHandshake {
    endpoint: String,
    psk: Vec<u8>,
    client_nonce: [u8; NONCE_LEN],
    server_nonce: [u8; NONCE_LEN],
    created: Instant,
}

/// Server side of the handshake, keyed by peer.
pub struct Responder<K> {
    pending: HashMap<K, PendingHandshake>,
    timeout: Duration,
}

impl<K: Hash + Eq + Clone> Default for Responder<K> {
    fn default() -> Self {
        Self::new(PENDING_TIMEOUT)
    }
}

impl<K: Hash + Eq + Clone> Responder<K> {
    pub fn new(timeout: Duration) -> Self {
        Self {
            pending: HashMap::new(),
            timeout,
        }
    }

    /// Stores pending state and returns the CHALLENGE payload
    /// (server nonce followed by the server proof).
    pub fn challenge(&mut self, peer: K, hello: &Hello, psk: &[u8]) -> Vec<u8> {
        self.challenge_with_nonce(peer, hello, psk, random_nonce(), Instant::now())
    }

    pub fn challenge_with_nonce(
        &mut self,
        peer: K,
        hello: &Hello,
        psk: &[u8],
        sn: [u8; NONCE_LEN],
        now: Instant,
    ) -> Vec<u8> {
        self.sweep(now);
        let cn = hello.client_nonce;
        let proof = mac(psk, &[&cn, &sn, b"server"]);
        self.pending.insert(
            peer,
            PendingHandshake {
                endpoint: hello.endpoint.clone(),
                psk: psk.to_vec(),
                client_nonce: cn,
                server_nonce: sn,
                created: now,
            },
        );
        [&sn[..], &proof[..]].concat()
    }

    /// Checks the client proof. Pending state is consumed either way.
    pub fn finish(&mut self, peer: &K, payload: &[u8], now: Instant) -> Result<PskSession, HandshakeError> {
        let p = self.pending.remove(peer).ok_or(HandshakeError::Timeout)?;
        if now.duration_since(p.created) > self.timeout {
            return Err(HandshakeError::Timeout);
        }
        if !mac_verify(&p.psk, &[&p.server_nonce, &p.client_nonce, b"client"], payload) {
            return Err(HandshakeError::BadProof);
        }
        Ok(PskSession::derive(p.endpoint, &p.psk, p.client_nonce, p.server_nonce))
    }

    pub fn sweep(&mut self, now: Instant) {
        let t = self.timeout;
        self.pending.retain(|_, p| now.duration_since(p.created) <= t);
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hello_for(init: &Initiator) -> Hello {
        Hello::decode(&init.hello()).unwrap()
    }

    #[test]
    fn proofs_match_hmac_definitions() {
        let psk = b"0123456789abcdef";
        let cn = [1u8; NONCE_LEN];
        let sn = [2u8; NONCE_LEN];
        let init = Initiator::with_nonce("dev-1", "id-1", psk, cn);
        let mut resp = Responder::<u8>::default();
        let now = Instant::now();
        let challenge = resp.challenge_with_nonce(0, &hello_for(&init), psk, sn, now);

        // recompute each value with a fresh HMAC over the concatenation
        let oracle = |msg: Vec<u8>| {
            let mut m = HmacSha256::new_from_slice(psk).unwrap();
            m.update(&msg);
            m.finalize().into_bytes().to_vec()
        };
        let mut expected = sn.to_vec();
        expected.extend(oracle([&cn[..], &sn, b"server"].concat()));
        assert_eq!(challenge, expected);

        let (finish, client) = init.on_challenge(&challenge).unwrap();
        assert_eq!(finish, oracle([&sn[..], &cn, b"client"].concat()));
        assert_eq!(client.session_key.to_vec(), oracle([&cn[..], &sn, b"session"].concat()));

        let server = resp.finish(&0, &finish, now).unwrap();
        assert_eq!(server.session_key, client.session_key);
        assert_eq!(server.peer_identity, "dev-1");
    }

    #[test]
    fn wrong_psk_fails_on_both_sides() {
        let init = Initiator::new("dev-1", "id", b"client-secret-xx");
        let mut resp = Responder::<u8>::default();
        let challenge = resp.challenge(0, &hello_for(&init), b"server-secret-xx");
        assert_eq!(init.on_challenge(&challenge).unwrap_err(), HandshakeError::BadProof);
        // a client that ignores the bad proof still cannot finish
        let forged = mac(b"client-secret-xx", &[&challenge[..16], b"client"]);
        assert_eq!(resp.finish(&0, &forged, Instant::now()).unwrap_err(), HandshakeError::BadProof);
        assert_eq!(resp.pending_len(), 0);
    }

    #[test]
    fn pending_state_expires() {
        let psk = b"0123456789abcdef";
        let init = Initiator::new("dev-1", "id", psk);
        let mut resp = Responder::<u8>::new(Duration::from_secs(10));
        let t0 = Instant::now();
        let ch = resp.challenge_with_nonce(0, &hello_for(&init), psk, [9; 16], t0);
        let (finish, _) = init.on_challenge(&ch).unwrap();
        let late = t0 + Duration::from_secs(11);
        assert_eq!(resp.finish(&0, &finish, late).unwrap_err(), HandshakeError::Timeout);
        assert_eq!(resp.finish(&0, &finish, t0).unwrap_err(), HandshakeError::Timeout);
    }

    #[test]
    fn hello_rejects_garbage() {
        assert_eq!(Hello::decode(&[1, 2, 3]).unwrap_err(), HandshakeError::Malformed);
        let mut ok = Initiator::new("e", "i", b"k").hello();
        ok.push(0);
        assert_eq!(Hello::decode(&ok).unwrap_err(), HandshakeError::Malformed);
    }

    #[test]
    fn seal_requires_session() {
        let mut s = PskSession::derive("e".into(), b"k", [0; 16], [1; 16]);
        let sealed = s.seal(b"hello").unwrap();
        assert_eq!(sealed.len(), 5 + TAG_LEN);
        assert_eq!(s.open(&sealed).unwrap(), b"hello");
        assert_eq!(s.open(&sealed[..4]).unwrap_err(), SealError::BadTag);
        s.established = false;
        assert_eq!(s.seal(b"x").unwrap_err(), SealError::NotEstablished);
    }

    proptest! {
        #[test]
        fn agreement_iff_same_psk(
            a in prop::collection::vec(any::<u8>(), 16..=64),
            b in prop::collection::vec(any::<u8>(), 16..=64),
            same in any::<bool>(),
        ) {
            let server_psk = if same { a.clone() } else { b.clone() };
            let init = Initiator::new("dev", "id", &a);
            let mut resp = Responder::<u8>::default();
            let ch = resp.challenge(0, &hello_for(&init), &server_psk);
            let agreed = a == server_psk;
            match init.on_challenge(&ch) {
                Ok((finish, c)) => {
                    prop_assert!(agreed);
                    let s = resp.finish(&0, &finish, Instant::now()).unwrap();
                    prop_assert_eq!(s.session_key, c.session_key);
                }
                Err(e) => {
                    prop_assert!(!agreed);
                    prop_assert_eq!(e, HandshakeError::BadProof);
                }
            }
        }

        #[test]
        fn any_single_bit_flip_is_rejected(
            msg in prop::collection::vec(any::<u8>(), 0..300),
            bit in any::<prop::sample::Index>(),
        ) {
            let s = PskSession::derive("e".into(), b"0123456789abcdef", [3; 16], [4; 16]);
            let mut sealed = s.seal(&msg).unwrap();
            let i = bit.index(sealed.len() * 8);
            sealed[i / 8] ^= 1 << (i % 8);
            prop_assert_eq!(s.open(&sealed).unwrap_err(), SealError::BadTag);
        }
    }
}
